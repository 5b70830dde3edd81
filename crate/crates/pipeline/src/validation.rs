//! Spatial-structure validation of full-scene predictions against labeled
//! maps: SSIM on binary maps, global Moran's I of both maps, residual Moran's
//! I of densities, LISA quadrant maps, and area error.

use std::path::Path;

use serde::{Deserialize, Serialize};
use slumscope_core::grid::{adaptive_factor, downsample, mask_nodata, CityYear, Grid, Reducer, DEFAULT_NODATA};
use slumscope_core::labels::{LabelPair, SUBPIXELS_PER_CELL};
use slumscope_core::spatial::{
    area_pct_err, lisa, morans_i, queen_weights, residual_moran, ssim_binary, write_lisa, MoranResult, Quadrant,
    SpatialWeights, LISA_CELL_CAP, MORAN_CELL_CAP,
};

use crate::infer::SceneMaps;
use crate::manifest::SpatialConfig;
use crate::seeds::derive_seed;

/// Validation results of one labeled city-year. Statistics that cannot be
/// computed (constant maps, no reference area) are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialRecord {
    pub key: CityYear,
    pub ssim_cls: Option<f64>,
    pub moran_gt: Option<MoranResult>,
    pub moran_pred: Option<MoranResult>,
    pub residual_moran: Option<MoranResult>,
    pub area_pct_err: Option<f64>,
    pub moran_factor: usize,
    pub lisa_factor: usize,
    /// LISA quadrant counts of the labeled and predicted density maps.
    pub lisa_gt: Option<Vec<(Quadrant, usize)>>,
    pub lisa_pred: Option<Vec<(Quadrant, usize)>>,
    pub notes: Vec<String>,
}

/// `grid` with cells that are nodata in `footprint` also set to nodata.
fn restrict(grid: &Grid, footprint: &Grid) -> Grid {
    let mut out = grid.clone();
    let nodata = out.nodata();
    for (c, v) in out.values_mut().iter_mut().enumerate() {
        if !footprint.is_valid(c) {
            *v = nodata;
        }
    }
    out
}

fn values(grid: &Grid, w: &SpatialWeights) -> Vec<f64> {
    w.values_at(grid)
}

/// Downsampled grids sharing one valid set, with weights over it.
fn prepared(grids: &[&Grid], cap: usize, reducer: Reducer) -> anyhow::Result<(usize, Vec<Grid>, SpatialWeights)> {
    let n_valid = mask_nodata(grids[0]).len();
    let factor = adaptive_factor(n_valid, cap);
    let small: Vec<Grid> = grids.iter().map(|g| downsample(g, factor, reducer)).collect::<Result<_, _>>()?;
    let valid: Vec<usize> = (0..small[0].values().len()).filter(|&c| small.iter().all(|g| g.is_valid(c))).collect();
    let w = queen_weights(small[0].geometry(), &valid);
    Ok((factor, small, w))
}

fn density_grid(maps_density: &Grid) -> Grid {
    let mut g = maps_density.clone();
    let nodata = g.nodata();
    let scale = f32::from(SUBPIXELS_PER_CELL);
    g.values_mut().iter_mut().filter(|v| **v != nodata).for_each(|v| *v /= scale);
    g
}

fn counts(map: &slumscope_core::spatial::LisaMap) -> Vec<(Quadrant, usize)> {
    map.counts().into_iter().collect()
}

/// Validates `maps` against `labels`; writes LISA maps under `lisa_dir` when given.
pub fn validate_scene(
    maps: &SceneMaps,
    labels: &LabelPair,
    cfg: &SpatialConfig,
    seed: u64,
    lisa_dir: Option<&Path>,
) -> anyhow::Result<SpatialRecord> {
    let key = maps.key;
    // Both maps share permutation streams so their statistics are paired.
    let stream = |what: &str| derive_seed(seed, &["spatial", &key.to_string(), what]);
    let mut notes = Vec::new();
    let mut note = |what: &str, e: &dyn std::fmt::Display| notes.push(format!("{what}: {e}"));

    let gt_cls = restrict(&labels.cls_grid(DEFAULT_NODATA), &maps.cls);
    let gt_density = restrict(&labels.density_grid(DEFAULT_NODATA), &maps.density);
    let pred_density = density_grid(&maps.density);

    let ssim_cls = ssim_binary(&gt_cls, &maps.cls).map_err(|e| note("ssim", &e)).ok();
    let area = area_pct_err(&gt_cls, &maps.cls).map_err(|e| note("area", &e)).ok();

    let (moran_factor, small, w) = prepared(&[&gt_cls, &maps.cls], MORAN_CELL_CAP, Reducer::Max)?;
    let moran_gt =
        morans_i(&values(&small[0], &w), &w, cfg.permutations, stream("moran")).map_err(|e| note("moran gt", &e)).ok();
    let moran_pred = morans_i(&values(&small[1], &w), &w, cfg.permutations, stream("moran"))
        .map_err(|e| note("moran pred", &e))
        .ok();
    let (_, small_d, w_d) = prepared(&[&gt_density, &pred_density], MORAN_CELL_CAP, Reducer::Mean)?;
    let residual = residual_moran(
        &values(&small_d[0], &w_d),
        &values(&small_d[1], &w_d),
        &w_d,
        cfg.permutations,
        stream("residual"),
    )
    .map_err(|e| note("residual moran", &e))
    .ok();

    let (lisa_factor, small_l, w_l) = prepared(&[&gt_density, &pred_density], LISA_CELL_CAP, Reducer::Mean)?;
    let mut lisa_counts = Vec::new();
    for (k, name) in ["gt", "pred"].into_iter().enumerate() {
        let map = lisa(&values(&small_l[k], &w_l), &w_l, cfg.permutations, stream("lisa"), cfg.alpha);
        match map {
            Ok(map) => {
                if let Some(dir) = lisa_dir {
                    let path = dir.join(format!("{}_{}", key.city, key.year)).join(format!("lisa_{name}.bif"));
                    write_lisa(&path, &map, &w_l, *small_l[k].geometry(), DEFAULT_NODATA)?;
                }
                lisa_counts.push(Some(counts(&map)));
            }
            Err(e) => {
                note(&format!("lisa {name}"), &e);
                lisa_counts.push(None);
            }
        }
    }
    let lisa_pred = lisa_counts.pop().flatten();
    let lisa_gt = lisa_counts.pop().flatten();
    Ok(SpatialRecord {
        key,
        ssim_cls,
        moran_gt,
        moran_pred,
        residual_moran: residual,
        area_pct_err: area,
        moran_factor,
        lisa_factor,
        lisa_gt,
        lisa_pred,
        notes,
    })
}
