//! Binary decision tree storage shared by the ensembles.

use serde::{Deserialize, Serialize};

const LEAF: u32 = u32::MAX;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct Node {
    feature: u32,
    /// Rows with `x[feature] <= threshold` go left.
    threshold: f64,
    left: u32,
    right: u32,
    value: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub(crate) struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    /// Appends a leaf and returns its id.
    pub(crate) fn push_leaf(&mut self, value: f64) -> usize {
        self.nodes.push(Node { feature: LEAF, threshold: 0.0, left: LEAF, right: LEAF, value });
        self.nodes.len() - 1
    }

    /// Turns leaf `id` into an internal node routing to existing nodes `left` / `right`.
    pub(crate) fn split(&mut self, id: usize, feature: usize, threshold: f64, left: usize, right: usize) {
        let n = &mut self.nodes[id];
        n.feature = feature as u32;
        n.threshold = threshold;
        n.left = left as u32;
        n.right = right as u32;
    }

    pub(crate) fn set_value(&mut self, id: usize, value: f64) {
        self.nodes[id].value = value;
    }

    pub(crate) fn predict_row(&self, row: impl Fn(usize) -> f64) -> f64 {
        let mut id = 0usize;
        loop {
            let n = &self.nodes[id];
            if n.feature == LEAF {
                return n.value;
            }
            id = if row(n.feature as usize) <= n.threshold { n.left } else { n.right } as usize;
        }
    }

    #[cfg(test)]
    pub(crate) fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.feature == LEAF).count()
    }
}
