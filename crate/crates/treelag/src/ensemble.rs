//! Ensembles of tree pairs. Each pair couples two lag trees, one exposure
//! assignment per tree, and an optional interaction table over the cross
//! product of their terminal nodes. The ensemble's fitted surface is the sum
//! of per-lag main effects and per-lag-pair interaction effects.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::panel::LagPanel;
use crate::tree::TimeSplitTree;

/// Which interaction cells a pair may carry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InteractionScope {
    /// No interactions at all (single-exposure and additive models).
    None,
    /// All pairs, including a tree pair assigned the same exposure twice.
    All,
    /// Only pairs whose two trees hold different exposures.
    DistinctExposures,
}

impl InteractionScope {
    pub fn allows(&self, exposure1: usize, exposure2: usize) -> bool {
        match self {
            InteractionScope::None => false,
            InteractionScope::All => true,
            InteractionScope::DistinctExposures => exposure1 != exposure2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TreePair {
    pub tree1: TimeSplitTree,
    pub tree2: TimeSplitTree,
    /// Exposure index feeding tree1 (0-based).
    pub exposure1: usize,
    /// Exposure index feeding tree2.
    pub exposure2: usize,
    /// Row-major (tree1 terminal, tree2 terminal) interaction effects; empty
    /// when the pair carries no interaction cells.
    pub cells: Vec<f64>,
}

impl TreePair {
    pub fn new(
        tree1: TimeSplitTree,
        tree2: TimeSplitTree,
        exposure1: usize,
        exposure2: usize,
        cells: Vec<f64>,
    ) -> Result<Self> {
        if tree1.n_lags() != tree2.n_lags() {
            return Err(Error::Structure("pair trees must share the lag axis".into()));
        }
        let want = tree1.n_leaves() * tree2.n_leaves();
        if !cells.is_empty() && cells.len() != want {
            return Err(Error::Structure(format!(
                "interaction table has {} cells, expected 0 or {want}",
                cells.len()
            )));
        }
        Ok(TreePair { tree1, tree2, exposure1, exposure2, cells })
    }

    pub fn has_cells(&self) -> bool {
        !self.cells.is_empty()
    }

    /// Interaction contribution at the lag pair (t1 on tree1's exposure, t2 on
    /// tree2's). Zero whenever the pair carries no cells.
    pub fn eval_interaction(&self, t1: usize, t2: usize) -> Result<f64> {
        if self.cells.is_empty() {
            // Validate the lags even when the surface is suppressed.
            self.tree1.leaf_index_of(t1)?;
            self.tree2.leaf_index_of(t2)?;
            return Ok(0.0);
        }
        let b1 = self.tree1.leaf_index_of(t1)?;
        let b2 = self.tree2.leaf_index_of(t2)?;
        Ok(self.cells[b1 * self.tree2.n_leaves() + b2])
    }
}

#[derive(Clone, Debug)]
pub struct TreePairEnsemble {
    pub pairs: Vec<TreePair>,
    pub n_exposures: usize,
    pub n_lags: usize,
}

impl TreePairEnsemble {
    /// Ensemble of `a` pairs of single-node zero-effect trees on exposure 0.
    pub fn trivial(a: usize, n_exposures: usize, n_lags: usize) -> Result<Self> {
        if a == 0 || n_exposures == 0 {
            return Err(Error::Argument("ensemble needs pairs and exposures".into()));
        }
        let pairs = (0..a)
            .map(|_| {
                TreePair::new(
                    TimeSplitTree::single(n_lags)?,
                    TimeSplitTree::single(n_lags)?,
                    0,
                    0,
                    Vec::new(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TreePairEnsemble { pairs, n_exposures, n_lags })
    }

    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.pairs.iter().enumerate() {
            if p.tree1.n_lags() != self.n_lags || p.tree2.n_lags() != self.n_lags {
                return Err(Error::Structure(format!("pair {i} disagrees on lag count")));
            }
            if p.exposure1 >= self.n_exposures || p.exposure2 >= self.n_exposures {
                return Err(Error::Structure(format!("pair {i} references a missing exposure")));
            }
        }
        Ok(())
    }
}

/// Index into the upper-triangular pair storage for exposures `a <= b`.
pub fn pair_index(a: usize, b: usize, n_exposures: usize) -> usize {
    debug_assert!(a <= b && b < n_exposures);
    a * n_exposures - a * (a + 1) / 2 + b
}

pub fn n_pairs(n_exposures: usize) -> usize {
    n_exposures * (n_exposures + 1) / 2
}

/// Dense per-lag effects implied by an ensemble: one main-effect curve per
/// exposure and one (lag, lag) interaction surface per unordered exposure pair.
#[derive(Clone, Debug, PartialEq)]
pub struct LagEffects {
    pub n_exposures: usize,
    pub n_lags: usize,
    /// Main effects, shape (exposure, lag).
    pub main: Array2<f64>,
    /// Interaction surfaces indexed by `pair_index(a, b)`; entry (t1, t2) weights
    /// x[a, t1] * x[b, t2]. For a == b the full asymmetric grid is kept.
    pub interactions: Vec<Array2<f64>>,
}

impl LagEffects {
    pub fn zeros(n_exposures: usize, n_lags: usize, with_interactions: bool) -> Self {
        let interactions = if with_interactions {
            (0..n_pairs(n_exposures)).map(|_| Array2::zeros((n_lags, n_lags))).collect()
        } else {
            Vec::new()
        };
        LagEffects { n_exposures, n_lags, main: Array2::zeros((n_exposures, n_lags)), interactions }
    }

    pub fn has_interactions(&self) -> bool {
        !self.interactions.is_empty()
    }

    /// Interaction weight on x[a, t1] * x[b, t2] for any exposure order.
    pub fn interaction_at(&self, a: usize, b: usize, t1: usize, t2: usize) -> f64 {
        if self.interactions.is_empty() {
            return 0.0;
        }
        if a <= b {
            self.interactions[pair_index(a, b, self.n_exposures)][[t1, t2]]
        } else {
            self.interactions[pair_index(b, a, self.n_exposures)][[t2, t1]]
        }
    }
}

/// Total number of distinct lag coefficients a full-interaction model of
/// `n_exposures` exposures over `n_lags` lags carries: one main effect per
/// (exposure, lag) plus a lag-by-lag surface per unordered exposure pair.
pub fn param_count(n_exposures: u64, n_lags: u64) -> u64 {
    n_exposures * n_lags + n_exposures * (n_exposures + 1) / 2 * n_lags * n_lags
}

/// Sum the ensemble's step functions and interaction tables into dense per-lag
/// effects. Interaction cells are accumulated in exposure-sorted orientation,
/// transposing when a pair's slot exposures arrive high-low.
pub fn reconstruct_effects(ensemble: &TreePairEnsemble) -> Result<LagEffects> {
    ensemble.validate()?;
    let m = ensemble.n_exposures;
    let t = ensemble.n_lags;
    let with_inter = ensemble.pairs.iter().any(|p| p.has_cells());
    let mut out = LagEffects::zeros(m, t, with_inter);

    for pair in &ensemble.pairs {
        for (tree, exposure) in [(&pair.tree1, pair.exposure1), (&pair.tree2, pair.exposure2)] {
            for (k, (lo, hi)) in tree.terminal_intervals().into_iter().enumerate() {
                let effect = tree.effects[k];
                for lag in lo..=hi {
                    out.main[[exposure, lag - 1]] += effect;
                }
            }
        }
        if !pair.has_cells() {
            continue;
        }
        let ivs1 = pair.tree1.terminal_intervals();
        let ivs2 = pair.tree2.terminal_intervals();
        let b2 = ivs2.len();
        let (ea, eb) = (pair.exposure1, pair.exposure2);
        let flip = ea > eb;
        let idx = pair_index(ea.min(eb), ea.max(eb), m);
        let surface = &mut out.interactions[idx];
        for (i1, &(lo1, hi1)) in ivs1.iter().enumerate() {
            for (i2, &(lo2, hi2)) in ivs2.iter().enumerate() {
                let v = pair.cells[i1 * b2 + i2];
                if v == 0.0 {
                    continue;
                }
                for t1 in lo1..=hi1 {
                    for t2 in lo2..=hi2 {
                        if flip {
                            surface[[t2 - 1, t1 - 1]] += v;
                        } else {
                            surface[[t1 - 1, t2 - 1]] += v;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Linear predictor of the ensemble on a panel: lagged main effects, pairwise
/// interaction effects, and the covariate term.
pub fn predict(ensemble: &TreePairEnsemble, panel: &LagPanel, gamma: &[f64]) -> Result<Array1<f64>> {
    if panel.n_exposures() != ensemble.n_exposures || panel.n_lags() != ensemble.n_lags {
        return Err(Error::Argument(format!(
            "panel is {}x{} (exposures x lags) but ensemble expects {}x{}",
            panel.n_exposures(),
            panel.n_lags(),
            ensemble.n_exposures,
            ensemble.n_lags
        )));
    }
    if gamma.len() != panel.n_covariates() {
        return Err(Error::Argument(format!(
            "{} covariates but {} coefficients",
            panel.n_covariates(),
            gamma.len()
        )));
    }
    let effects = reconstruct_effects(ensemble)?;
    let n = panel.n_individuals();
    let m = ensemble.n_exposures;
    let t = ensemble.n_lags;
    let mut out = Array1::zeros(n);
    for i in 0..n {
        let mut acc = 0.0;
        for e in 0..m {
            for lag in 0..t {
                acc += effects.main[[e, lag]] * panel.exposures[[i, e, lag]];
            }
        }
        if effects.has_interactions() {
            for a in 0..m {
                for b in a..m {
                    let surface = &effects.interactions[pair_index(a, b, m)];
                    for t1 in 0..t {
                        let xa = panel.exposures[[i, a, t1]];
                        if xa == 0.0 {
                            continue;
                        }
                        for t2 in 0..t {
                            acc += surface[[t1, t2]] * xa * panel.exposures[[i, b, t2]];
                        }
                    }
                }
            }
        }
        for (j, g) in gamma.iter().enumerate() {
            acc += g * panel.covariates[[i, j]];
        }
        out[i] = acc;
    }
    Ok(out)
}
