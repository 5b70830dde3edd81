//! Histogram gradient boosting with best-first trees.
//!
//! Features are quantized to at most `max_bins` bins whose edges are actual
//! training values, and splits route `x <= edge` left. Since binning depends
//! only on ranks, fitted trees are unchanged by strictly monotone feature
//! transforms.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::tree::Tree;
use crate::{ModelError, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtParams {
    pub max_depth: usize,
    pub max_iter: usize,
    pub learning_rate: f64,
    /// Huber transition point for regression, in target units.
    pub huber_delta: f64,
    pub max_bins: usize,
    pub min_samples_leaf: usize,
    pub max_leaf_nodes: Option<usize>,
    pub l2_regularization: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            max_depth: 6,
            max_iter: 200,
            learning_rate: 0.1,
            huber_delta: 10.0,
            max_bins: 256,
            min_samples_leaf: 20,
            max_leaf_nodes: Some(31),
            l2_regularization: 0.0,
        }
    }
}

const MIN_HESSIAN: f64 = 1e-3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbtModel {
    task: Task,
    baseline: f64,
    trees: Vec<Tree>,
}

/// Up to `max_bins - 1` increasing edges drawn from the sorted column.
pub(crate) fn bin_edges(sorted: &[f64], max_bins: usize) -> Vec<f64> {
    let mut unique = sorted.to_vec();
    unique.dedup();
    if unique.len() <= max_bins {
        unique.pop();
        return unique;
    }
    let n = sorted.len();
    let max = *unique.last().expect("non-empty");
    let mut edges: Vec<f64> = Vec::with_capacity(max_bins - 1);
    for k in 1..max_bins {
        let v = sorted[(k * n / max_bins).min(n - 1)];
        if v < max && edges.last().is_none_or(|&e| v > e) {
            edges.push(v);
        }
    }
    edges
}

struct Binned {
    n: usize,
    /// Column-major bin codes.
    codes: Vec<u8>,
    edges: Vec<Vec<f64>>,
    offsets: Vec<usize>,
}

impl Binned {
    fn new(x: ArrayView2<f64>, max_bins: usize) -> Self {
        let (n, d) = x.dim();
        let mut codes = vec![0u8; n * d];
        let mut edges = Vec::with_capacity(d);
        let mut offsets = vec![0];
        for j in 0..d {
            let col = x.column(j);
            let mut sorted: Vec<f64> = col.to_vec();
            sorted.sort_by(f64::total_cmp);
            let e = bin_edges(&sorted, max_bins);
            for (i, &v) in col.iter().enumerate() {
                codes[j * n + i] = e.partition_point(|&edge| edge < v) as u8;
            }
            offsets.push(offsets[j] + e.len() + 1);
            edges.push(e);
        }
        Binned { n, codes, edges, offsets }
    }

    fn code(&self, feature: usize, row: u32) -> u8 {
        self.codes[feature * self.n + row as usize]
    }
}

#[derive(Clone, Copy, Default)]
struct Bin {
    g: f64,
    h: f64,
    count: u32,
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    bin: usize,
}

struct Leaf {
    node: usize,
    rows: Vec<u32>,
    depth: usize,
    hist: Vec<Bin>,
    best: Option<Candidate>,
}

struct Grower<'a> {
    p: &'a GbtParams,
    data: &'a Binned,
    g: &'a [f64],
    h: &'a [f64],
}

impl Grower<'_> {
    fn histogram(&self, rows: &[u32]) -> Vec<Bin> {
        let mut hist = vec![Bin::default(); *self.data.offsets.last().expect("offsets")];
        for f in 0..self.data.edges.len() {
            let off = self.data.offsets[f];
            for &i in rows {
                let b = &mut hist[off + self.data.code(f, i) as usize];
                b.g += self.g[i as usize];
                b.h += self.h[i as usize];
                b.count += 1;
            }
        }
        hist
    }

    fn best_split(&self, hist: &[Bin], depth: usize) -> Option<Candidate> {
        let total = hist[..self.data.offsets[1]].iter().fold(Bin::default(), |a, b| Bin {
            g: a.g + b.g,
            h: a.h + b.h,
            count: a.count + b.count,
        });
        let min_leaf = self.p.min_samples_leaf.max(1) as u32;
        if depth >= self.p.max_depth || total.count < 2 * min_leaf {
            return None;
        }
        let lam = self.p.l2_regularization;
        let score = |g: f64, h: f64| g * g / (h + lam);
        let parent = score(total.g, total.h);
        let mut best: Option<Candidate> = None;
        for f in 0..self.data.edges.len() {
            let bins = &hist[self.data.offsets[f]..self.data.offsets[f + 1]];
            let (mut gl, mut hl, mut cl) = (0.0, 0.0, 0u32);
            for (b, bin) in bins.iter().enumerate().take(bins.len() - 1) {
                gl += bin.g;
                hl += bin.h;
                cl += bin.count;
                let cr = total.count - cl;
                if cl < min_leaf {
                    continue;
                }
                if cr < min_leaf {
                    break;
                }
                let hr = total.h - hl;
                if hl < MIN_HESSIAN || hr < MIN_HESSIAN {
                    continue;
                }
                let gain = score(gl, hl) + score(total.g - gl, hr) - parent;
                if gain > 1e-12 && best.is_none_or(|c| gain > c.gain) {
                    best = Some(Candidate { gain, feature: f, bin: b });
                }
            }
        }
        best
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl GbtModel {
    pub(crate) fn fit(p: &GbtParams, task: Task, x: ArrayView2<f64>, y: &[f64]) -> Result<Self, ModelError> {
        if !(2..=256).contains(&p.max_bins) {
            return Err(ModelError::InvalidParam(format!("max_bins {} outside 2..=256", p.max_bins)));
        }
        if p.max_leaf_nodes.is_some_and(|m| m < 2) || p.learning_rate <= 0.0 {
            return Err(ModelError::InvalidParam("max_leaf_nodes must be >= 2 and learning_rate > 0".into()));
        }
        let n = x.nrows();
        let data = Binned::new(x, p.max_bins);
        let baseline = match task {
            Task::Cls => {
                let prior = y.iter().sum::<f64>() / n as f64;
                (prior / (1.0 - prior)).ln()
            }
            Task::Reg => median(&mut y.to_vec()),
        };
        let mut raw = vec![baseline; n];
        let mut g = vec![0.0; n];
        let mut h = vec![1.0; n];
        let mut trees = Vec::with_capacity(p.max_iter);
        for _ in 0..p.max_iter {
            for i in 0..n {
                match task {
                    Task::Cls => {
                        let prob = sigmoid(raw[i]);
                        g[i] = prob - y[i];
                        h[i] = prob * (1.0 - prob);
                    }
                    Task::Reg => g[i] = -(y[i] - raw[i]).clamp(-p.huber_delta, p.huber_delta),
                }
            }
            let grower = Grower { p, data: &data, g: &g, h: &h };
            let (tree, leaves) = grow(&grower);
            let mut tree = tree;
            for leaf in leaves {
                let value = match task {
                    Task::Cls => {
                        let (sg, sh) =
                            leaf.rows.iter().fold((0.0, 0.0), |(a, b), &i| (a + g[i as usize], b + h[i as usize]));
                        -sg / (sh + p.l2_regularization).max(MIN_HESSIAN)
                    }
                    Task::Reg => huber_leaf(&leaf.rows, y, &raw, p.huber_delta),
                } * p.learning_rate;
                tree.set_value(leaf.node, value);
                for &i in &leaf.rows {
                    raw[i as usize] += value;
                }
            }
            trees.push(tree);
        }
        Ok(GbtModel { task, baseline, trees })
    }

    pub(crate) fn predict(&self, x: ArrayView2<f64>) -> Vec<f64> {
        x.rows()
            .into_iter()
            .map(|r| {
                let raw = self.baseline + self.trees.iter().map(|t| t.predict_row(|j| r[j])).sum::<f64>();
                match self.task {
                    Task::Cls => sigmoid(raw),
                    Task::Reg => raw,
                }
            })
            .collect()
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

/// One-step Huber M-estimate of the leaf shift: median residual plus the
/// mean clipped deviation from it.
fn huber_leaf(rows: &[u32], y: &[f64], raw: &[f64], delta: f64) -> f64 {
    let mut r: Vec<f64> = rows.iter().map(|&i| y[i as usize] - raw[i as usize]).collect();
    let med = median(&mut r);
    med + r.iter().map(|v| (v - med).clamp(-delta, delta)).sum::<f64>() / r.len() as f64
}

/// Best-first growth bounded by depth and leaf count. Returns the tree and
/// its leaves (values still unset).
fn grow(gr: &Grower<'_>) -> (Tree, Vec<Leaf>) {
    let mut tree = Tree::default();
    let rows: Vec<u32> = (0..gr.data.n as u32).collect();
    let hist = gr.histogram(&rows);
    let best = gr.best_split(&hist, 0);
    let mut leaves = vec![Leaf { node: tree.push_leaf(0.0), rows, depth: 0, hist, best }];
    let max_leaves = gr.p.max_leaf_nodes.unwrap_or(usize::MAX);
    while leaves.len() < max_leaves {
        let Some(pick) = leaves
            .iter()
            .enumerate()
            .filter_map(|(k, l)| l.best.map(|c| (k, c.gain)))
            .fold(None::<(usize, f64)>, |acc, (k, gain)| match acc {
                Some((_, g)) if g >= gain => acc,
                _ => Some((k, gain)),
            })
            .map(|(k, _)| k)
        else {
            break;
        };
        let parent = leaves.swap_remove(pick);
        let c = parent.best.expect("picked a splittable leaf");
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) =
            parent.rows.iter().partition(|&&i| gr.data.code(c.feature, i) as usize <= c.bin);
        let (small, large_is_left) =
            if left_rows.len() <= right_rows.len() { (&left_rows, false) } else { (&right_rows, true) };
        let small_hist = gr.histogram(small);
        let large_hist: Vec<Bin> = parent
            .hist
            .iter()
            .zip(&small_hist)
            .map(|(a, b)| Bin { g: a.g - b.g, h: a.h - b.h, count: a.count - b.count })
            .collect();
        let (left_hist, right_hist) = if large_is_left { (large_hist, small_hist) } else { (small_hist, large_hist) };
        let l = tree.push_leaf(0.0);
        let r = tree.push_leaf(0.0);
        tree.split(parent.node, c.feature, gr.data.edges[c.feature][c.bin], l, r);
        let depth = parent.depth + 1;
        for (node, rows, hist) in [(l, left_rows, left_hist), (r, right_rows, right_hist)] {
            let best = gr.best_split(&hist, depth);
            leaves.push(Leaf { node, rows, depth, hist, best });
        }
    }
    leaves.sort_by_key(|l| l.node);
    (tree, leaves)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn edges_are_training_values() {
        let sorted: Vec<f64> = (0..10).map(|v| v as f64).collect();
        assert_eq!(bin_edges(&sorted, 256), (0..9).map(|v| v as f64).collect::<Vec<_>>());
        let many: Vec<f64> = (0..1000).map(|v| v as f64 * 0.5).collect();
        let e = bin_edges(&many, 16);
        assert!(e.len() <= 15 && e.windows(2).all(|w| w[0] < w[1]));
        assert!(e.iter().all(|v| many.contains(v)));
        assert!(bin_edges(&[3.0; 5], 256).is_empty());
    }

    #[test]
    fn fits_a_step_function() {
        let x = Array2::from_shape_fn((200, 1), |(i, _)| i as f64);
        let y: Vec<f64> = (0..200).map(|i| if i < 100 { 0.0 } else { 50.0 }).collect();
        let p = GbtParams { max_iter: 50, learning_rate: 0.5, ..Default::default() };
        let m = GbtModel::fit(&p, Task::Reg, x.view(), &y).unwrap();
        let pred = m.predict(x.view());
        assert!(pred.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1.0));
    }

    #[test]
    fn leaf_budget_is_respected() {
        let x = Array2::from_shape_fn((400, 2), |(i, j)| ((i * (j + 3)) % 97) as f64);
        let y: Vec<f64> = (0..400).map(|i| ((i * 31) % 289) as f64).collect();
        let p = GbtParams { max_iter: 3, min_samples_leaf: 1, ..Default::default() };
        let m = GbtModel::fit(&p, Task::Reg, x.view(), &y).unwrap();
        assert!(m.trees.iter().all(|t| t.n_leaves() <= 31 && t.n_leaves() > 1));
    }

    #[test]
    fn huber_leaf_is_mean_for_small_residuals() {
        let y = [1.0, 2.0, 6.0];
        let raw = [0.0; 3];
        let v = huber_leaf(&[0, 1, 2], &y, &raw, 10.0);
        assert!((v - 3.0).abs() < 1e-12);
        // An outlier only pulls the estimate by delta / n.
        let y = [1.0, 2.0, 1000.0];
        let v = huber_leaf(&[0, 1, 2], &y, &raw, 10.0);
        assert!((v - (2.0 + (-1.0 + 0.0 + 10.0) / 3.0)).abs() < 1e-12);
    }
}
