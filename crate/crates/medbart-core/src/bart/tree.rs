//! Binary regression trees for the backfitting sampler: mutable working
//! trees with grow/prune/change/swap edits, leaf sufficient statistics, and
//! the leaf-marginalized Gaussian likelihood.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::math;

/// Node of a working tree. `left < 0` marks a leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkNode {
    pub parent: i32,
    pub left: i32,
    pub right: i32,
    pub var: usize,
    pub cut: f64,
    /// Leaf value in standardized response units.
    pub value: f64,
    pub depth: u32,
}

impl WorkNode {
    fn leaf(parent: i32, depth: u32) -> Self {
        WorkNode {
            parent,
            left: -1,
            right: -1,
            var: 0,
            cut: 0.0,
            value: 0.0,
            depth,
        }
    }

    #[inline]
    pub fn is_leaf(&self) -> bool {
        self.left < 0
    }
}

/// Working tree; node 0 is the root and the node list stays compact.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkTree {
    pub nodes: Vec<WorkNode>,
}

impl WorkTree {
    pub fn stump() -> Self {
        WorkTree {
            nodes: vec![WorkNode::leaf(-1, 0)],
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].is_leaf())
            .collect()
    }

    /// Internal nodes whose children are both leaves (prune candidates).
    pub fn nog_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| {
                let n = &self.nodes[i];
                !n.is_leaf()
                    && self.nodes[n.left as usize].is_leaf()
                    && self.nodes[n.right as usize].is_leaf()
            })
            .collect()
    }

    pub fn internal_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| !self.nodes[i].is_leaf())
            .collect()
    }

    /// (parent, child) pairs with both nodes internal, for the swap move.
    pub fn swap_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if n.is_leaf() {
                continue;
            }
            for child in [n.left as usize, n.right as usize] {
                if !self.nodes[child].is_leaf() {
                    pairs.push((i, child));
                }
            }
        }
        pairs
    }

    /// New tree with `leaf` split on (var, cut).
    pub fn grow(&self, leaf: usize, var: usize, cut: f64) -> WorkTree {
        debug_assert!(self.nodes[leaf].is_leaf());
        let mut t = self.clone();
        let depth = t.nodes[leaf].depth;
        let l = t.nodes.len() as i32;
        t.nodes.push(WorkNode::leaf(leaf as i32, depth + 1));
        t.nodes.push(WorkNode::leaf(leaf as i32, depth + 1));
        let node = &mut t.nodes[leaf];
        node.left = l;
        node.right = l + 1;
        node.var = var;
        node.cut = cut;
        t
    }

    /// New tree with the children of `nog` removed (compacted indices).
    pub fn prune(&self, nog: usize) -> WorkTree {
        let n = &self.nodes[nog];
        debug_assert!(!n.is_leaf());
        debug_assert!(self.nodes[n.left as usize].is_leaf());
        debug_assert!(self.nodes[n.right as usize].is_leaf());
        let drop_a = n.left as usize;
        let drop_b = n.right as usize;
        let mut remap = vec![usize::MAX; self.nodes.len()];
        let mut nodes: Vec<WorkNode> = Vec::with_capacity(self.nodes.len() - 2);
        for (i, node) in self.nodes.iter().enumerate() {
            if i == drop_a || i == drop_b {
                continue;
            }
            remap[i] = nodes.len();
            nodes.push(node.clone());
        }
        for node in &mut nodes {
            if node.parent >= 0 {
                node.parent = remap[node.parent as usize] as i32;
            }
            if !node.is_leaf() {
                node.left = remap[node.left as usize] as i32;
                node.right = remap[node.right as usize] as i32;
            }
        }
        let target = remap[nog];
        nodes[target].left = -1;
        nodes[target].right = -1;
        nodes[target].value = 0.0;
        WorkTree { nodes }
    }

    /// New tree with a different split rule at `internal`.
    pub fn change(&self, internal: usize, var: usize, cut: f64) -> WorkTree {
        debug_assert!(!self.nodes[internal].is_leaf());
        let mut t = self.clone();
        t.nodes[internal].var = var;
        t.nodes[internal].cut = cut;
        t
    }

    /// New tree with the rules of `parent` and `child` exchanged.
    pub fn swap(&self, parent: usize, child: usize) -> WorkTree {
        debug_assert!(!self.nodes[parent].is_leaf() && !self.nodes[child].is_leaf());
        let mut t = self.clone();
        let (pv, pc) = (t.nodes[parent].var, t.nodes[parent].cut);
        t.nodes[parent].var = t.nodes[child].var;
        t.nodes[parent].cut = t.nodes[child].cut;
        t.nodes[child].var = pv;
        t.nodes[child].cut = pc;
        t
    }

    /// Leaf node id a covariate row routes to: `row[var] <= cut` goes left.
    #[inline]
    pub fn route(&self, row: &[f64]) -> usize {
        let mut i = 0usize;
        loop {
            let n = &self.nodes[i];
            if n.is_leaf() {
                return i;
            }
            i = if row[n.var] <= n.cut {
                n.left as usize
            } else {
                n.right as usize
            };
        }
    }
}

/// Row assignment and per-node residual sufficient statistics.
#[derive(Debug, Clone)]
pub struct LeafStats {
    /// Row index -> node id of its leaf.
    pub assign: Vec<u32>,
    pub count: Vec<u32>,
    pub sum: Vec<f64>,
}

/// Route every row and accumulate residual sums per leaf.
pub fn leaf_stats(tree: &WorkTree, rows: &crate::linalg::Mat, resid: &[f64]) -> LeafStats {
    let n_nodes = tree.nodes.len();
    let t = rows.nrows();
    let mut assign = vec![0u32; t];
    let mut count = vec![0u32; n_nodes];
    let mut sum = vec![0.0; n_nodes];
    for i in 0..t {
        let leaf = tree.route(rows.row(i));
        assign[i] = leaf as u32;
        count[leaf] += 1;
        sum[leaf] += resid[i];
    }
    LeafStats { assign, count, sum }
}

/// Log marginal likelihood of the residuals given the tree structure with
/// leaf means integrated out (structure-dependent terms only; pieces that
/// are constant across structures cancel in acceptance ratios and are
/// dropped). `None` when any leaf is empty.
pub fn log_marginal(tree: &WorkTree, stats: &LeafStats, sigma2: f64, tau2: f64) -> Option<f64> {
    let mut total = 0.0;
    for (i, node) in tree.nodes.iter().enumerate() {
        if !node.is_leaf() {
            continue;
        }
        let n = stats.count[i] as f64;
        if stats.count[i] == 0 {
            return None;
        }
        let s = stats.sum[i];
        total += 0.5 * math::ln(sigma2 / (sigma2 + n * tau2))
            + s * s * tau2 / (2.0 * sigma2 * (n * tau2 + sigma2));
    }
    Some(total)
}

/// Compact immutable tree kept in posterior draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenTree {
    pub nodes: Vec<FrozenNode>,
}

/// `var < 0` marks a leaf and `value` is the leaf value; otherwise `value`
/// is the cut and children are indices into the node list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrozenNode {
    pub value: f64,
    pub var: i16,
    pub left: u16,
    pub right: u16,
}

impl FrozenTree {
    pub fn from_work(tree: &WorkTree) -> FrozenTree {
        let nodes = tree
            .nodes
            .iter()
            .map(|n| {
                if n.is_leaf() {
                    FrozenNode {
                        value: n.value,
                        var: -1,
                        left: 0,
                        right: 0,
                    }
                } else {
                    FrozenNode {
                        value: n.cut,
                        var: n.var as i16,
                        left: n.left as u16,
                        right: n.right as u16,
                    }
                }
            })
            .collect();
        FrozenTree { nodes }
    }

    /// Standardized-units prediction for one covariate row.
    #[inline]
    pub fn eval(&self, row: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            let n = self.nodes[i];
            if n.var < 0 {
                return n.value;
            }
            i = if row[n.var as usize] <= n.value {
                n.left as usize
            } else {
                n.right as usize
            };
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.var < 0).count()
    }
}
