//! Structure proposals for one tree slot: grow, prune, change, and exposure
//! switch. Each proposal carries its forward and reverse log proposal
//! probabilities and the log prior change, so the acceptance ratio only needs
//! the marginal-likelihood difference added.

use crate::priors::{tree_log_prior, ExposureProbs, TreePriorConfig};
use crate::tree::TimeSplitTree;
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum MoveKind {
    Grow,
    Prune,
    Change,
    Switch,
}

impl MoveKind {
    /// Uniform move choice; mixture modes add the exposure switch.
    pub(crate) fn draw(rng: &mut impl Rng, with_switch: bool) -> MoveKind {
        let n = if with_switch { 4 } else { 3 };
        match rng.random_range(0..n) {
            0 => MoveKind::Grow,
            1 => MoveKind::Prune,
            2 => MoveKind::Change,
            _ => MoveKind::Switch,
        }
    }
}

pub(crate) struct StructProposal {
    pub new_tree: Option<TimeSplitTree>,
    pub new_exposure: Option<usize>,
    pub log_fwd: f64,
    pub log_rev: f64,
    pub log_prior_delta: f64,
}

/// Leaves that can still be split, honoring the optional leaf cap.
fn growable_leaves(tree: &TimeSplitTree, max_leaves: Option<usize>) -> Vec<usize> {
    if let Some(cap) = max_leaves {
        if tree.n_leaves() + 1 > cap {
            return Vec::new();
        }
    }
    tree.leaves()
        .iter()
        .enumerate()
        .filter(|(_, l)| l.interval.1 > l.interval.0)
        .map(|(i, _)| i)
        .collect()
}

fn prunable_internals(tree: &TimeSplitTree) -> Vec<usize> {
    tree.internals()
        .iter()
        .enumerate()
        .filter(|(_, n)| n.collapsible)
        .map(|(i, _)| i)
        .collect()
}

/// Propose a structure move. `None` means the move is infeasible from the
/// current state and is rejected outright (the kind probabilities stay fixed,
/// so skipping is the correct treatment).
pub(crate) fn propose(
    rng: &mut impl Rng,
    kind: MoveKind,
    tree: &TimeSplitTree,
    exposure: usize,
    eprobs: &ExposureProbs,
    cfg: &TreePriorConfig,
    max_leaves: Option<usize>,
) -> Option<StructProposal> {
    match kind {
        MoveKind::Grow => {
            let growable = growable_leaves(tree, max_leaves);
            if growable.is_empty() {
                return None;
            }
            let li = growable[rng.random_range(0..growable.len())];
            let (lo, hi) = tree.leaves()[li].interval;
            let at = lo + rng.random_range(0..hi - lo);
            let new_tree = tree.grow(li, at).ok()?;
            let log_fwd = -((growable.len() as f64).ln()) - ((hi - lo) as f64).ln();
            let n_prunable = prunable_internals(&new_tree).len();
            let log_rev = -((n_prunable as f64).ln());
            let log_prior_delta = tree_log_prior(&new_tree, cfg) - tree_log_prior(tree, cfg);
            Some(StructProposal {
                new_tree: Some(new_tree),
                new_exposure: None,
                log_fwd,
                log_rev,
                log_prior_delta,
            })
        }
        MoveKind::Prune => {
            let prunable = prunable_internals(tree);
            if prunable.is_empty() {
                return None;
            }
            let pi = prunable[rng.random_range(0..prunable.len())];
            let (lo, hi) = tree.internals()[pi].interval;
            let new_tree = tree.prune(pi).ok()?;
            let log_fwd = -((prunable.len() as f64).ln());
            // Reverse move grows the collapsed interval back; the smaller
            // tree always satisfies the leaf cap the current tree meets.
            let n_growable = growable_leaves(&new_tree, max_leaves).len();
            let log_rev = -((n_growable as f64).ln()) - ((hi - lo) as f64).ln();
            let log_prior_delta = tree_log_prior(&new_tree, cfg) - tree_log_prior(tree, cfg);
            Some(StructProposal {
                new_tree: Some(new_tree),
                new_exposure: None,
                log_fwd,
                log_rev,
                log_prior_delta,
            })
        }
        MoveKind::Change => {
            let n_internal = tree.internals().len();
            if n_internal == 0 {
                return None;
            }
            let ii = rng.random_range(0..n_internal);
            let (lo, hi) = tree.internals()[ii].interval;
            let at = lo + rng.random_range(0..hi - lo);
            let (new_tree, truncated) = tree.change(ii, at).ok()?;
            if truncated {
                // A truncating change cannot be reversed by another change
                // move, so its reverse probability is zero.
                return None;
            }
            // Same node count and interval both ways: proposal cancels.
            let log_fwd = 0.0;
            let log_rev = 0.0;
            let log_prior_delta = tree_log_prior(&new_tree, cfg) - tree_log_prior(tree, cfg);
            Some(StructProposal {
                new_tree: Some(new_tree),
                new_exposure: None,
                log_fwd,
                log_rev,
                log_prior_delta,
            })
        }
        MoveKind::Switch => {
            let u: f64 = rng.random::<f64>();
            let mut acc = 0.0;
            let mut new_e = eprobs.probs.len() - 1;
            for (j, &p) in eprobs.probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    new_e = j;
                    break;
                }
            }
            // Proposal from the selection probabilities themselves, so the
            // prior ratio and proposal ratio cancel exactly.
            let log_fwd = eprobs.probs[new_e].ln();
            let log_rev = eprobs.probs[exposure].ln();
            let log_prior_delta = log_fwd - log_rev;
            Some(StructProposal {
                new_tree: None,
                new_exposure: Some(new_e),
                log_fwd,
                log_rev,
                log_prior_delta,
            })
        }
    }
}
