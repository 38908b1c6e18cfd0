//! Regression trees that partition the lag axis {1..T} into contiguous intervals.
//!
//! A split at `s` sends lags <= s left and lags > s right, so terminal nodes
//! always cover contiguous, non-empty, ordered intervals. Terminal effects are
//! stored left-to-right in `effects`, one per terminal node.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Node {
    Leaf,
    Split { at: usize, left: Box<Node>, right: Box<Node> },
}

/// Position and depth of a terminal node; `interval` is inclusive on both ends.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LeafInfo {
    pub interval: (usize, usize),
    pub depth: usize,
}

/// Position of an internal node; `at` is its split point, `interval` the lags it covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InternalInfo {
    pub interval: (usize, usize),
    pub depth: usize,
    pub at: usize,
    /// Index of the leftmost terminal node under this internal node.
    pub first_leaf: usize,
    /// True when both children are terminal, i.e. the node can be collapsed.
    pub collapsible: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeSplitTree {
    n_lags: usize,
    root: Node,
    /// One effect per terminal node, ordered left to right along the lag axis.
    pub effects: Vec<f64>,
}

impl TimeSplitTree {
    /// Single terminal node covering {1..n_lags} with zero effect.
    pub fn single(n_lags: usize) -> Result<Self> {
        if n_lags == 0 {
            return Err(Error::Argument("tree needs at least one lag".into()));
        }
        Ok(TimeSplitTree { n_lags, root: Node::Leaf, effects: vec![0.0] })
    }

    pub fn new(n_lags: usize, root: Node, effects: Vec<f64>) -> Result<Self> {
        if n_lags == 0 {
            return Err(Error::Argument("tree needs at least one lag".into()));
        }
        let n_leaves = validate_node(&root, 1, n_lags)?;
        if effects.len() != n_leaves {
            return Err(Error::Structure(format!(
                "tree has {n_leaves} terminal nodes but {} effects",
                effects.len()
            )));
        }
        Ok(TimeSplitTree { n_lags, root, effects })
    }

    pub fn n_lags(&self) -> usize {
        self.n_lags
    }

    pub fn n_leaves(&self) -> usize {
        self.effects.len()
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    /// Depth of the deepest node; a single-node tree has depth 0.
    pub fn depth(&self) -> usize {
        fn walk(node: &Node) -> usize {
            match node {
                Node::Leaf => 0,
                Node::Split { left, right, .. } => 1 + walk(left).max(walk(right)),
            }
        }
        walk(&self.root)
    }

    /// Ordered inclusive intervals of the terminal nodes; they tile {1..n_lags}.
    pub fn terminal_intervals(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.effects.len());
        collect_leaves(&self.root, 1, self.n_lags, 0, &mut |lo, hi, _| out.push((lo, hi)));
        out
    }

    /// Terminal nodes with their depths, ordered left to right.
    pub fn leaves(&self) -> Vec<LeafInfo> {
        let mut out = Vec::with_capacity(self.effects.len());
        collect_leaves(&self.root, 1, self.n_lags, 0, &mut |lo, hi, d| {
            out.push(LeafInfo { interval: (lo, hi), depth: d })
        });
        out
    }

    /// Internal nodes in pre-order, with split points and collapsibility.
    pub fn internals(&self) -> Vec<InternalInfo> {
        let mut out = Vec::new();
        let mut leaf_counter = 0usize;
        collect_internals(&self.root, 1, self.n_lags, 0, &mut leaf_counter, &mut out);
        out
    }

    /// Index of the terminal node whose interval contains lag `t`.
    pub fn leaf_index_of(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.n_lags {
            return Err(Error::Argument(format!("lag {t} out of 1..={}", self.n_lags)));
        }
        let mut node = &self.root;
        let mut idx = 0usize;
        let (mut lo, mut hi) = (1usize, self.n_lags);
        loop {
            match node {
                Node::Leaf => return Ok(idx),
                Node::Split { at, left, right } => {
                    if t <= *at {
                        node = left;
                        hi = *at;
                    } else {
                        idx += count_leaves(left);
                        node = right;
                        lo = *at + 1;
                    }
                    debug_assert!(lo <= hi);
                }
            }
        }
    }

    /// Effect assigned to lag `t` (the step function the tree represents).
    pub fn eval(&self, t: usize) -> Result<f64> {
        Ok(self.effects[self.leaf_index_of(t)?])
    }

    /// Split terminal node `leaf_idx` at `at`, producing two zero-effect children.
    pub fn grow(&self, leaf_idx: usize, at: usize) -> Result<Self> {
        let leaves = self.leaves();
        let info = *leaves
            .get(leaf_idx)
            .ok_or_else(|| Error::Structure(format!("no terminal node {leaf_idx}")))?;
        let (lo, hi) = info.interval;
        if !(lo <= at && at < hi) {
            return Err(Error::Structure(format!("split {at} outside {lo}..{}", hi - 1)));
        }
        let mut tree = self.clone();
        let mut counter = 0usize;
        replace_leaf(&mut tree.root, leaf_idx, &mut counter, &|_| Node::Split {
            at,
            left: Box::new(Node::Leaf),
            right: Box::new(Node::Leaf),
        });
        tree.effects.splice(leaf_idx..=leaf_idx, [0.0, 0.0]);
        Ok(tree)
    }

    /// Collapse internal node `internal_idx` (index into `internals()`); both
    /// children must be terminal. The merged node gets a zero effect.
    pub fn prune(&self, internal_idx: usize) -> Result<Self> {
        let internals = self.internals();
        let info = *internals
            .get(internal_idx)
            .ok_or_else(|| Error::Structure(format!("no internal node {internal_idx}")))?;
        if !info.collapsible {
            return Err(Error::Structure("node children are not both terminal".into()));
        }
        let mut tree = self.clone();
        let mut counter = 0usize;
        replace_internal(&mut tree.root, internal_idx, &mut counter, &|_| Node::Leaf);
        tree.effects.splice(info.first_leaf..=info.first_leaf + 1, [0.0]);
        Ok(tree)
    }

    /// Move the split point of internal node `internal_idx` to `at`. Descendant
    /// splits that fall outside their new intervals are truncated to terminal
    /// nodes; the flag reports whether any truncation happened. Effects are
    /// reset to zeros when the terminal count changes.
    pub fn change(&self, internal_idx: usize, at: usize) -> Result<(Self, bool)> {
        let internals = self.internals();
        let info = *internals
            .get(internal_idx)
            .ok_or_else(|| Error::Structure(format!("no internal node {internal_idx}")))?;
        let (lo, hi) = info.interval;
        if !(lo <= at && at < hi) {
            return Err(Error::Structure(format!("split {at} outside {lo}..{}", hi - 1)));
        }
        let mut tree = self.clone();
        let mut counter = 0usize;
        replace_internal(&mut tree.root, internal_idx, &mut counter, &|node| {
            if let Node::Split { left, right, .. } = node {
                Node::Split { at, left: left.clone(), right: right.clone() }
            } else {
                unreachable!("replace_internal visits internal nodes only")
            }
        });
        let truncated = truncate_invalid(&mut tree.root, 1, self.n_lags);
        let n_leaves = count_leaves(&tree.root);
        if n_leaves != tree.effects.len() {
            tree.effects = vec![0.0; n_leaves];
        }
        Ok((tree, truncated))
    }
}

fn validate_node(node: &Node, lo: usize, hi: usize) -> Result<usize> {
    debug_assert!(lo <= hi);
    match node {
        Node::Leaf => Ok(1),
        Node::Split { at, left, right } => {
            if !(lo <= *at && *at < hi) {
                return Err(Error::Structure(format!(
                    "split at {at} leaves an empty child of interval ({lo},{hi})"
                )));
            }
            Ok(validate_node(left, lo, *at)? + validate_node(right, *at + 1, hi)?)
        }
    }
}

fn count_leaves(node: &Node) -> usize {
    match node {
        Node::Leaf => 1,
        Node::Split { left, right, .. } => count_leaves(left) + count_leaves(right),
    }
}

fn collect_leaves(node: &Node, lo: usize, hi: usize, depth: usize, f: &mut impl FnMut(usize, usize, usize)) {
    match node {
        Node::Leaf => f(lo, hi, depth),
        Node::Split { at, left, right } => {
            collect_leaves(left, lo, *at, depth + 1, f);
            collect_leaves(right, *at + 1, hi, depth + 1, f);
        }
    }
}

fn collect_internals(
    node: &Node,
    lo: usize,
    hi: usize,
    depth: usize,
    leaf_counter: &mut usize,
    out: &mut Vec<InternalInfo>,
) {
    match node {
        Node::Leaf => *leaf_counter += 1,
        Node::Split { at, left, right } => {
            out.push(InternalInfo {
                interval: (lo, hi),
                depth,
                at: *at,
                first_leaf: *leaf_counter,
                collapsible: matches!(**left, Node::Leaf) && matches!(**right, Node::Leaf),
            });
            collect_internals(left, lo, *at, depth + 1, leaf_counter, out);
            collect_internals(right, *at + 1, hi, depth + 1, leaf_counter, out);
        }
    }
}

/// Replace the `target`-th leaf (left-to-right) using `make`.
fn replace_leaf(node: &mut Node, target: usize, counter: &mut usize, make: &impl Fn(&Node) -> Node) {
    match node {
        Node::Leaf => {
            if *counter == target {
                *node = make(node);
            }
            *counter += 1;
        }
        Node::Split { left, right, .. } => {
            replace_leaf(left, target, counter, make);
            replace_leaf(right, target, counter, make);
        }
    }
}

/// Replace the `target`-th internal node (pre-order) using `make`.
fn replace_internal(node: &mut Node, target: usize, counter: &mut usize, make: &impl Fn(&Node) -> Node) {
    if let Node::Split { left, right, .. } = node {
        let here = *counter;
        *counter += 1;
        if here == target {
            *node = make(node);
            return;
        }
        replace_internal(left, target, counter, make);
        replace_internal(right, target, counter, make);
    }
}

/// Collapse any descendant split whose point fell outside its interval; returns
/// whether anything was collapsed.
fn truncate_invalid(node: &mut Node, lo: usize, hi: usize) -> bool {
    match node {
        Node::Leaf => false,
        Node::Split { at, left, right } => {
            if !(lo <= *at && *at < hi) {
                *node = Node::Leaf;
                return true;
            }
            let at = *at;
            truncate_invalid(left, lo, at) | truncate_invalid(right, at + 1, hi)
        }
    }
}

/// Random valid tree for property tests in this crate.
#[cfg(test)]
pub(crate) mod testgen {
    use super::{count_leaves, Node, TimeSplitTree};
    use rand::rngs::StdRng;
    use rand::Rng;

    pub(crate) fn random_tree(n_lags: usize, rng: &mut StdRng) -> TimeSplitTree {
        fn gen(lo: usize, hi: usize, depth: usize, rng: &mut StdRng) -> Node {
            if lo == hi || depth >= 4 || rng.random::<f64>() < 0.4 {
                return Node::Leaf;
            }
            let at = rng.random_range(lo..hi);
            Node::Split {
                at,
                left: Box::new(gen(lo, at, depth + 1, rng)),
                right: Box::new(gen(at + 1, hi, depth + 1, rng)),
            }
        }
        let root = gen(1, n_lags, 0, rng);
        let n = count_leaves(&root);
        let effects = (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        TimeSplitTree::new(n_lags, root, effects).unwrap()
    }
}
