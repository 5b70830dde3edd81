//! Random forest with bootstrap rows and per-node feature subsampling.
//!
//! Split thresholds are the largest left-side training value, so the fitted
//! forest depends on feature ranks only.

use ndarray::ArrayView2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::tree::Tree;
use crate::{ModelError, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features tried per node; `None` means √d for cls and d/3 for reg.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { n_trees: 200, max_depth: 12, min_samples_leaf: 5, max_features: None, bootstrap: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestModel {
    trees: Vec<Tree>,
}

struct Builder<'a> {
    /// Column-major copy of the features.
    cols: Vec<Vec<f64>>,
    /// Per-feature ranks of each row (ties share a rank).
    ranks: Vec<Vec<u32>>,
    y: &'a [f64],
    task: Task,
    p: &'a ForestParams,
    mtry: usize,
}

/// Impurity mass of one side: n·Gini for cls, SSE for reg.
fn impurity(task: Task, n: f64, sum: f64, sum_sq: f64) -> f64 {
    match task {
        Task::Cls => {
            let p = sum / n;
            2.0 * n * p * (1.0 - p)
        }
        Task::Reg => (sum_sq - sum * sum / n).max(0.0),
    }
}

impl Builder<'_> {
    fn build(&self, rng: &mut ChaCha8Rng, rows: Vec<u32>) -> Tree {
        let mut tree = Tree::default();
        let root = tree.push_leaf(0.0);
        let mut stack = vec![(root, rows, 0usize)];
        let min_leaf = self.p.min_samples_leaf.max(1);
        let d = self.cols.len();
        // (rank << 32) | row, sorted directly.
        let mut order: Vec<u64> = Vec::new();
        while let Some((node, rows, depth)) = stack.pop() {
            let n = rows.len() as f64;
            let sum: f64 = rows.iter().map(|&i| self.y[i as usize]).sum();
            let sum_sq: f64 = rows.iter().map(|&i| self.y[i as usize].powi(2)).sum();
            tree.set_value(node, sum / n);
            if depth >= self.p.max_depth || rows.len() < 2 * min_leaf || impurity(self.task, n, sum, sum_sq) <= 1e-12 {
                continue;
            }
            // (score, feature, left size, threshold)
            let mut best: Option<(f64, usize, usize, f64)> = None;
            for f in index::sample(rng, d, self.mtry.min(d)).into_iter() {
                let (col, rank) = (&self.cols[f], &self.ranks[f]);
                order.clear();
                order.extend(rows.iter().map(|&i| (u64::from(rank[i as usize]) << 32) | u64::from(i)));
                order.sort_unstable();
                let (mut ls, mut lss) = (0.0, 0.0);
                for k in 1..order.len() {
                    let yi = self.y[(order[k - 1] & 0xFFFF_FFFF) as usize];
                    ls += yi;
                    lss += yi * yi;
                    if k < min_leaf {
                        continue;
                    }
                    if order.len() - k < min_leaf {
                        break;
                    }
                    if order[k - 1] >> 32 == order[k] >> 32 {
                        continue;
                    }
                    let xl = col[(order[k - 1] & 0xFFFF_FFFF) as usize];
                    let score = impurity(self.task, k as f64, ls, lss)
                        + impurity(self.task, n - k as f64, sum - ls, sum_sq - lss);
                    if best.is_none_or(|b| score < b.0) {
                        best = Some((score, f, k, xl));
                    }
                }
            }
            let Some((_, f, _, thr)) = best else { continue };
            let (left, right): (Vec<u32>, Vec<u32>) = rows.iter().partition(|&&i| self.cols[f][i as usize] <= thr);
            let l = tree.push_leaf(0.0);
            let r = tree.push_leaf(0.0);
            tree.split(node, f, thr, l, r);
            stack.push((r, right, depth + 1));
            stack.push((l, left, depth + 1));
        }
        tree
    }
}

fn dense_ranks(values: &[f64]) -> Vec<u32> {
    let mut idx: Vec<u32> = (0..values.len() as u32).collect();
    idx.sort_by(|&a, &b| values[a as usize].total_cmp(&values[b as usize]));
    let mut ranks = vec![0u32; values.len()];
    let mut r = 0u32;
    for k in 0..idx.len() {
        if k > 0 && values[idx[k] as usize] != values[idx[k - 1] as usize] {
            r += 1;
        }
        ranks[idx[k] as usize] = r;
    }
    ranks
}

impl ForestModel {
    pub(crate) fn fit(
        p: &ForestParams,
        task: Task,
        seed: u64,
        x: ArrayView2<f64>,
        y: &[f64],
    ) -> Result<Self, ModelError> {
        if p.n_trees == 0 {
            return Err(ModelError::InvalidParam("n_trees must be positive".into()));
        }
        let (n, d) = x.dim();
        let mtry = p.max_features.unwrap_or(match task {
            Task::Cls => (d as f64).sqrt().round() as usize,
            Task::Reg => d / 3,
        });
        let cols: Vec<Vec<f64>> = x.columns().into_iter().map(|c| c.to_vec()).collect();
        let ranks = cols.iter().map(|c| dense_ranks(c)).collect();
        let b = Builder { cols, ranks, y, task, p, mtry: mtry.clamp(1, d.max(1)) };
        let trees = (0..p.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(t as u64);
                let rows: Vec<u32> = if p.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n as u32)).collect()
                } else {
                    (0..n as u32).collect()
                };
                b.build(&mut rng, rows)
            })
            .collect();
        Ok(ForestModel { trees })
    }

    /// Mean over trees of the leaf mean (positive fraction for cls).
    pub(crate) fn predict(&self, x: ArrayView2<f64>) -> Vec<f64> {
        x.rows()
            .into_iter()
            .map(|r| self.trees.iter().map(|t| t.predict_row(|j| r[j])).sum::<f64>() / self.trees.len() as f64)
            .collect()
    }
}
