//! Spatial-structure validation: Queen weights, global/residual Moran's I,
//! LISA clusters, windowed SSIM on binary maps, and area error.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bif::{write_bif, BifError, Sidecar};
use crate::grid::{Geometry, Grid};

/// Valid-cell caps before adaptive downsampling.
pub const MORAN_CELL_CAP: usize = 600_000;
pub const LISA_CELL_CAP: usize = 250_000;
pub const DEFAULT_MAP_PERMUTATIONS: usize = 99;
pub const DEFAULT_ALPHA: f64 = 0.05;

pub const SSIM_WINDOW: usize = 7;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Error)]
pub enum SpatialError {
    #[error("grids differ in layout")]
    GeometryMismatch,
    #[error("{got} values supplied for {expected} weighted cells")]
    LengthMismatch { expected: usize, got: usize },
    #[error("need at least 3 cells, got {0}")]
    TooFewCells(usize),
    #[error("field has zero variance")]
    ZeroVariance,
    #[error("grid {width}x{height} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")]
    TooSmallForSsim { width: usize, height: usize },
    #[error("no SSIM window is free of nodata")]
    NoValidWindow,
    #[error("reference map has zero positive area")]
    ZeroReferenceArea,
    #[error(transparent)]
    Bif(#[from] BifError),
}

/// Sparse row-standardized weights in CSR layout. Node `k` corresponds to
/// grid cell `cells[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialWeights {
    pub cells: Vec<usize>,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    weights: Vec<f64>,
}

impl SpatialWeights {
    /// Builds from raw non-negative rows, dividing each row by its sum.
    pub fn from_raw_rows(cells: Vec<usize>, rows: Vec<Vec<(usize, f64)>>) -> Self {
        assert_eq!(cells.len(), rows.len(), "one row per node");
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        offsets.push(0);
        let mut neighbors = Vec::new();
        let mut weights = Vec::new();
        for row in rows {
            let sum: f64 = row.iter().map(|(_, w)| w).sum();
            for (j, w) in row {
                if w > 0.0 {
                    neighbors.push(j);
                    weights.push(w / sum);
                }
            }
            offsets.push(neighbors.len());
        }
        SpatialWeights { cells, offsets, neighbors, weights }
    }

    pub fn n(&self) -> usize {
        self.cells.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.offsets[i]..self.offsets[i + 1];
        (&self.neighbors[r.clone()], &self.weights[r])
    }

    pub fn is_isolate(&self, i: usize) -> bool {
        self.offsets[i] == self.offsets[i + 1]
    }

    pub fn n_isolates(&self) -> usize {
        (0..self.n()).filter(|&i| self.is_isolate(i)).count()
    }

    /// Sum of all weights (the number of non-isolates after standardization).
    pub fn s0(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Values of `grid` at the weighted cells, in node order.
    pub fn values_at(&self, grid: &Grid) -> Vec<f64> {
        self.cells.iter().map(|&c| grid.values()[c] as f64).collect()
    }

    fn lag(&self, i: usize, z: &[f64]) -> f64 {
        let (nb, w) = self.row(i);
        nb.iter().zip(w).map(|(&j, &wj)| wj * z[j]).sum()
    }
}

/// Queen (8-neighbour) contiguity over the given valid cells.
pub fn queen_weights(geometry: &Geometry, valid: &[usize]) -> SpatialWeights {
    let mut node = vec![usize::MAX; geometry.n_cells()];
    for (k, &c) in valid.iter().enumerate() {
        node[c] = k;
    }
    let (w, h) = (geometry.width as isize, geometry.height as isize);
    let rows = valid
        .iter()
        .map(|&c| {
            let (r, col) = ((c / geometry.width) as isize, (c % geometry.width) as isize);
            let mut row = Vec::with_capacity(8);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (rr, cc) = (r + dr, col + dc);
                    if (dr, dc) == (0, 0) || rr < 0 || cc < 0 || rr >= h || cc >= w {
                        continue;
                    }
                    let j = node[(rr * w + cc) as usize];
                    if j != usize::MAX {
                        row.push((j, 1.0));
                    }
                }
            }
            row
        })
        .collect();
    SpatialWeights::from_raw_rows(valid.to_vec(), rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoranResult {
    pub i: f64,
    pub expected: f64,
    pub p_perm: f64,
    pub n_perm: usize,
    pub perm_mean: f64,
    pub perm_sd: f64,
    pub n: usize,
}

fn standardize(values: &[f64]) -> Result<Vec<f64>, SpatialError> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let z: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let ss: f64 = z.iter().map(|v| v * v).sum();
    if ss <= 0.0 || !ss.is_finite() {
        return Err(SpatialError::ZeroVariance);
    }
    Ok(z)
}

fn moran_stat(w: &SpatialWeights, z: &[f64], s0: f64) -> f64 {
    let num: f64 = (0..z.len()).map(|i| z[i] * w.lag(i, z)).sum();
    let den: f64 = z.iter().map(|v| v * v).sum();
    (z.len() as f64 / s0) * num / den
}

fn check_len(values: &[f64], w: &SpatialWeights) -> Result<(), SpatialError> {
    if values.len() != w.n() {
        return Err(SpatialError::LengthMismatch { expected: w.n(), got: values.len() });
    }
    if values.len() < 3 {
        return Err(SpatialError::TooFewCells(values.len()));
    }
    Ok(())
}

fn replicate_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Global Moran's I with a two-sided add-one permutation p-value.
pub fn morans_i(values: &[f64], w: &SpatialWeights, n_perm: usize, seed: u64) -> Result<MoranResult, SpatialError> {
    check_len(values, w)?;
    let z = standardize(values)?;
    let s0 = w.s0();
    if s0 == 0.0 {
        return Err(SpatialError::TooFewCells(0));
    }
    let i_obs = moran_stat(w, &z, s0);
    let perms: Vec<f64> = (0..n_perm)
        .into_par_iter()
        .map(|rep| {
            let mut zp = z.clone();
            zp.shuffle(&mut replicate_rng(seed, rep as u64));
            moran_stat(w, &zp, s0)
        })
        .collect();
    let extreme = perms.iter().filter(|v| v.abs() >= i_obs.abs()).count();
    let (perm_mean, perm_sd) = if perms.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let m = perms.iter().sum::<f64>() / perms.len() as f64;
        let var = perms.iter().map(|v| (v - m).powi(2)).sum::<f64>() / perms.len() as f64;
        (m, var.sqrt())
    };
    let n = values.len();
    Ok(MoranResult {
        i: i_obs,
        expected: -1.0 / (n as f64 - 1.0),
        p_perm: (extreme + 1) as f64 / (n_perm + 1) as f64,
        n_perm,
        perm_mean,
        perm_sd,
        n,
    })
}

/// Moran's I of `pred - gt`.
pub fn residual_moran(
    gt: &[f64],
    pred: &[f64],
    w: &SpatialWeights,
    n_perm: usize,
    seed: u64,
) -> Result<MoranResult, SpatialError> {
    if gt.len() != pred.len() {
        return Err(SpatialError::LengthMismatch { expected: gt.len(), got: pred.len() });
    }
    let resid: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| p - g).collect();
    morans_i(&resid, w, n_perm, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Quadrant {
    NS,
    HH,
    LL,
    HL,
    LH,
}

impl Quadrant {
    pub const ALL: [Quadrant; 5] = [Quadrant::NS, Quadrant::HH, Quadrant::LL, Quadrant::HL, Quadrant::LH];

    pub fn code(self) -> u8 {
        match self {
            Quadrant::NS => 0,
            Quadrant::HH => 1,
            Quadrant::LL => 2,
            Quadrant::HL => 3,
            Quadrant::LH => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Quadrant::NS => "NS",
            Quadrant::HH => "HH",
            Quadrant::LL => "LL",
            Quadrant::HL => "HL",
            Quadrant::LH => "LH",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LisaMap {
    pub local_i: Vec<f64>,
    pub p_values: Vec<f64>,
    pub quadrants: Vec<Quadrant>,
    pub alpha: f64,
    pub n_perm: usize,
}

impl LisaMap {
    pub fn counts(&self) -> BTreeMap<Quadrant, usize> {
        let mut out: BTreeMap<Quadrant, usize> = Quadrant::ALL.iter().map(|&q| (q, 0)).collect();
        for q in &self.quadrants {
            *out.get_mut(q).expect("all quadrants present") += 1;
        }
        out
    }
}

/// Local Moran's I with conditional permutation and folded pseudo p-values.
pub fn lisa(values: &[f64], w: &SpatialWeights, n_perm: usize, seed: u64, alpha: f64) -> Result<LisaMap, SpatialError> {
    check_len(values, w)?;
    let mut z = standardize(values)?;
    let n = z.len();
    let sd = (z.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    z.iter_mut().for_each(|v| *v /= sd);

    let per_cell: Vec<(f64, f64, Quadrant)> = (0..n)
        .into_par_iter()
        .map(|i| {
            if w.is_isolate(i) {
                return (0.0, 1.0, Quadrant::NS);
            }
            let lag = w.lag(i, &z);
            let local = z[i] * lag;
            let (_, wts) = w.row(i);
            let mut rng = replicate_rng(seed, i as u64);
            let mut larger = 0usize;
            for _ in 0..n_perm {
                let draw = index::sample(&mut rng, n - 1, wts.len().min(n - 1));
                let lag_p: f64 = draw.iter().zip(wts).map(|(j, &wj)| wj * z[if j >= i { j + 1 } else { j }]).sum();
                if z[i] * lag_p >= local {
                    larger += 1;
                }
            }
            let folded = larger.min(n_perm - larger);
            let p = (folded + 1) as f64 / (n_perm + 1) as f64;
            let q = if p >= alpha {
                Quadrant::NS
            } else {
                match (z[i] > 0.0, lag > 0.0) {
                    (true, true) => Quadrant::HH,
                    (false, false) => Quadrant::LL,
                    (true, false) => Quadrant::HL,
                    (false, true) => Quadrant::LH,
                }
            };
            (local, p, q)
        })
        .collect();
    let mut map = LisaMap {
        local_i: Vec::with_capacity(n),
        p_values: Vec::with_capacity(n),
        quadrants: Vec::with_capacity(n),
        alpha,
        n_perm,
    };
    for (l, p, q) in per_cell {
        map.local_i.push(l);
        map.p_values.push(p);
        map.quadrants.push(q);
    }
    Ok(map)
}

/// Quadrant codes as a grid; cells outside the weights are nodata.
pub fn lisa_grid(map: &LisaMap, w: &SpatialWeights, geometry: Geometry, nodata: f32) -> Grid {
    let mut g = Grid::filled(geometry, nodata, nodata);
    for (k, &c) in w.cells.iter().enumerate() {
        g.values_mut()[c] = map.quadrants[k].code() as f32;
    }
    g
}

pub fn write_lisa(
    path: &Path,
    map: &LisaMap,
    w: &SpatialWeights,
    geometry: Geometry,
    nodata: f32,
) -> Result<(), SpatialError> {
    let grid = lisa_grid(map, w, geometry, nodata);
    let mut sidecar = Sidecar::for_grid(&grid, "lisa");
    sidecar.legend = Some(Quadrant::ALL.iter().map(|q| (q.code().to_string(), q.name().to_string())).collect());
    write_bif(path, &grid, &sidecar)?;
    Ok(())
}

/// Mean SSIM over 7×7 uniform windows (stride 1, no padding) with L = 1.
/// Windows touching nodata in either map are skipped.
pub fn ssim_binary(gt: &Grid, pred: &Grid) -> Result<f64, SpatialError> {
    let g = gt.geometry();
    if !g.same_layout(pred.geometry()) {
        return Err(SpatialError::GeometryMismatch);
    }
    if g.width < SSIM_WINDOW || g.height < SSIM_WINDOW {
        return Err(SpatialError::TooSmallForSsim { width: g.width, height: g.height });
    }
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let m = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let (mut total, mut windows) = (0.0, 0usize);
    let mut xs = [0.0f64; SSIM_WINDOW * SSIM_WINDOW];
    let mut ys = [0.0f64; SSIM_WINDOW * SSIM_WINDOW];
    for r0 in 0..=g.height - SSIM_WINDOW {
        'win: for c0 in 0..=g.width - SSIM_WINDOW {
            for dr in 0..SSIM_WINDOW {
                for dc in 0..SSIM_WINDOW {
                    let cell = (r0 + dr) * g.width + c0 + dc;
                    if !gt.is_valid(cell) || !pred.is_valid(cell) {
                        continue 'win;
                    }
                    xs[dr * SSIM_WINDOW + dc] = gt.values()[cell] as f64;
                    ys[dr * SSIM_WINDOW + dc] = pred.values()[cell] as f64;
                }
            }
            let mx = xs.iter().sum::<f64>() / m;
            let my = ys.iter().sum::<f64>() / m;
            let vx = xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>() / m;
            let vy = ys.iter().map(|y| (y - my) * (y - my)).sum::<f64>() / m;
            let cov = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / m;
            let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
            let den = (mx * mx + my * my + c1) * (vx + vy + c2);
            total += num / den;
            windows += 1;
        }
    }
    if windows == 0 {
        return Err(SpatialError::NoValidWindow);
    }
    Ok(total / windows as f64)
}

/// |pred area − gt area| / gt area × 100 over cells valid in both maps.
pub fn area_pct_err(gt: &Grid, pred: &Grid) -> Result<f64, SpatialError> {
    if !gt.geometry().same_layout(pred.geometry()) {
        return Err(SpatialError::GeometryMismatch);
    }
    let (mut a_gt, mut a_pred) = (0usize, 0usize);
    for c in 0..gt.values().len() {
        if gt.is_valid(c) && pred.is_valid(c) {
            a_gt += usize::from(gt.values()[c] > 0.5);
            a_pred += usize::from(pred.values()[c] > 0.5);
        }
    }
    if a_gt == 0 {
        return Err(SpatialError::ZeroReferenceArea);
    }
    Ok((a_pred as f64 - a_gt as f64).abs() / a_gt as f64 * 100.0)
}
