//! Full-scene inference: one model per city trained on every labeled year,
//! applied to every requested year including unlabeled ones.

use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slumscope_core::bif::{write_bif, Sidecar};
use slumscope_core::features::{stack, valid_cells, ComboCode};
use slumscope_core::grid::{CityCode, CityYear, Grid, DEFAULT_NODATA};
use slumscope_core::labels::SUBPIXELS_PER_CELL;
use slumscope_core::metrics::Task;
use slumscope_core::splits::SampleTable;
use slumscope_models::{train, Family, ModelSpec};
use thiserror::Error;

use crate::dataset::{combo_blocks, scene_table, Dataset};

#[derive(Debug, Error)]
pub enum InferError {
    #[error("{0} has no labeled year to train on")]
    NoLabeledYear(CityCode),
    #[error("{0} is not in the dataset")]
    MissingScene(CityYear),
    #[error("{key} lacks {combo} feature bands")]
    MissingBands { key: CityYear, combo: ComboCode },
    #[error(transparent)]
    Model(#[from] slumscope_models::ModelError),
    #[error(transparent)]
    Features(#[from] slumscope_core::features::FeatureError),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

/// Predicted maps of one city-year; cells outside the feature footprint are
/// nodata.
#[derive(Debug, Clone)]
pub struct SceneMaps {
    pub key: CityYear,
    /// 1 where the classifier probability is at least the threshold.
    pub cls: Grid,
    /// Sub-pixel counts clamped to `[0, 289]`.
    pub density: Grid,
    /// True when the year had no labels.
    pub imputed: bool,
}

/// Training rows of every labeled year of `city`, subsampled to `max_rows`.
fn city_training(
    dataset: &Dataset,
    city: CityCode,
    combo: ComboCode,
    max_rows: usize,
    seed: u64,
) -> Result<SampleTable, InferError> {
    let tables = dataset
        .scenes
        .values()
        .filter(|s| s.key.city == city && s.labels.is_some())
        .map(|s| scene_table(s, combo))
        .collect::<anyhow::Result<Vec<_>>>()?;
    if tables.is_empty() {
        return Err(InferError::NoLabeledYear(city));
    }
    let all = SampleTable::concat(&tables);
    if all.n_rows() <= max_rows {
        return Ok(all);
    }
    let mut rows = index::sample(&mut ChaCha8Rng::seed_from_u64(seed), all.n_rows(), max_rows).into_vec();
    rows.sort_unstable();
    Ok(all.select(&rows))
}

/// Trains a classifier and a regressor of `family` on all labeled years of
/// `city` and predicts every year in `years`.
#[allow(clippy::too_many_arguments)]
pub fn full_scene_infer(
    dataset: &Dataset,
    city: CityCode,
    family: &Family,
    combo: ComboCode,
    years: &[i32],
    max_rows: usize,
    threshold: f64,
    seed: u64,
) -> Result<Vec<SceneMaps>, InferError> {
    let training = city_training(dataset, city, combo, max_rows, seed)?;
    let x = training.features.view();
    let y_cls: Vec<f64> = training.y_cls.iter().map(|&v| f64::from(v)).collect();
    let classifier = train(&ModelSpec::new(Task::Cls, family.clone(), seed), x, &y_cls)?;
    let regressor = train(&ModelSpec::new(Task::Reg, family.clone(), seed), x, &training.y_reg_f64())?;
    let cap = f64::from(SUBPIXELS_PER_CELL);
    years
        .iter()
        .map(|&year| {
            let key = CityYear::new(city, year);
            let scene = dataset.scenes.get(&key).ok_or(InferError::MissingScene(key))?;
            let blocks = combo_blocks(scene, combo);
            if blocks.len() != combo.categories().len() {
                return Err(InferError::MissingBands { key, combo });
            }
            let cells = valid_cells(&blocks);
            let geometry = *blocks[0].bands()[0].geometry();
            let mut cls = Grid::filled(geometry, DEFAULT_NODATA, DEFAULT_NODATA);
            let mut density = cls.clone();
            if !cells.is_empty() {
                let rows = stack(&blocks, combo, &cells)?;
                let proba = classifier.predict_proba(rows.view())?;
                let pred = regressor.predict_density(rows.view())?;
                for (k, &c) in cells.iter().enumerate() {
                    cls.values_mut()[c] = if proba[k] >= threshold { 1.0 } else { 0.0 };
                    density.values_mut()[c] = pred[k].clamp(0.0, cap) as f32;
                }
            }
            Ok(SceneMaps { key, cls, density, imputed: scene.labels.is_none() })
        })
        .collect()
}

/// Writes `cls.bif` and `density.bif` (with sidecars) under
/// `dir/<CITY>_<YEAR>/` and returns the directory.
pub fn write_maps(dir: &Path, maps: &SceneMaps) -> anyhow::Result<PathBuf> {
    let sub = dir.join(format!("{}_{}", maps.key.city, maps.key.year));
    for (name, grid) in [("cls", &maps.cls), ("density", &maps.density)] {
        let mut sidecar = Sidecar::for_grid(grid, name);
        sidecar.imputed = Some(maps.imputed);
        write_bif(&sub.join(format!("{name}.bif")), grid, &sidecar)?;
    }
    Ok(sub)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_world, SyntheticWorldSpec};
    use slumscope_core::bif::read_bif;
    use slumscope_models::LinearParams;

    #[test]
    fn every_year_is_predicted_and_unlabeled_years_are_flagged() {
        let spec =
            SyntheticWorldSpec { cities: 1, width: 24, height: 24, unlabeled_years: vec![2022], ..Default::default() };
        let ds = Dataset::from_world(&synth_world(&spec).unwrap());
        let city = spec.city_codes()[0];
        let family = Family::Linear(LinearParams::default());
        let maps = full_scene_infer(&ds, city, &family, ComboCode::C0, &[2020, 2021, 2022], 10_000, 0.5, 0).unwrap();
        assert_eq!(maps.iter().map(|m| m.imputed).collect::<Vec<_>>(), vec![false, false, true]);
        for m in &maps {
            assert!(m.cls.values().iter().all(|&v| v == 0.0 || v == 1.0));
            assert!(m.density.values().iter().all(|&v| (0.0..=289.0).contains(&v)));
        }
        let dir = tempfile::tempdir().unwrap();
        let sub = write_maps(dir.path(), &maps[2]).unwrap();
        let (_, sidecar) = read_bif(&sub.join("density.bif")).unwrap();
        assert_eq!(sidecar.imputed, Some(true));
        let missing = full_scene_infer(&ds, city, &family, ComboCode::C0, &[2030], 10_000, 0.5, 0);
        assert!(matches!(missing, Err(InferError::MissingScene(_))));
    }
}
