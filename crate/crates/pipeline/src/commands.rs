//! Subcommand bodies, shared by the binary and the tests.
//!
//! Output layout under the run directory:
//!
//! ```text
//! manifest.json                 resolved manifest and its hash
//! cells/<key>.json              cached grid cells
//! records.json, failures.json   evaluation stream of the last run
//! dims/                         ablation records, importance tables
//! infer/<CITY>_<YEAR>/          cls.bif, density.bif
//! spatial/spatial.json          validation records
//! spatial/lisa/<CITY>_<YEAR>/   lisa_gt.bif, lisa_pred.bif
//! reports/                      CSV tables, consensus grid, summary
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{de::DeserializeOwned, Serialize};
use serde_json::json;
use slumscope_core::features::{valid_cells, ComboCode};
use slumscope_core::grid::{CityCode, CityYear};
use slumscope_core::labels::{density_histogram, DensityHistogram};

use crate::dataset::{build_labels, corpus, write_world, Dataset};
use crate::dims::{
    ablation_run, consensus_and_significance, importance_run, AblationConfig, AblationFailure, AblationRecord,
    ImportanceTable, DEFAULT_K_GRID,
};
use crate::infer::{full_scene_infer, write_maps};
use crate::manifest::RunManifest;
use crate::report::{emit_report, PrimarySlice, ReportInputs};
use crate::run::{read_records, run, write_atomic, RunOutcome};
use crate::seeds::derive_seed;
use crate::synth::{synth_world, SyntheticWorldSpec};
use crate::validation::{validate_scene, SpatialRecord};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DIMS_DIR: &str = "dims";
pub const ABLATION_FILE: &str = "ablation.json";
pub const ABLATION_FAILURES_FILE: &str = "ablation_failures.json";
pub const IMPORTANCE_FILE: &str = "importance.json";
pub const INFER_DIR: &str = "infer";
pub const SPATIAL_DIR: &str = "spatial";
pub const SPATIAL_FILE: &str = "spatial.json";
pub const REPORTS_DIR: &str = "reports";

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, (serde_json::to_string_pretty(value)? + "\n").as_bytes())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<Option<T>> {
    if !path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?))
}

fn record_manifest(manifest: &RunManifest, out: &Path) -> Result<()> {
    write_json(&out.join(MANIFEST_FILE), &json!({ "hash": manifest.hash(), "manifest": manifest }))
}

/// Generates a world and writes it as a dataset directory.
pub fn synth(spec: &SyntheticWorldSpec, out: &Path) -> Result<usize> {
    let world = synth_world(spec)?;
    let index = write_world(&world, out)?;
    Ok(index.entries.len())
}

/// Aggregates every mask of a dataset into counts and writes per-city-year
/// density histograms to `stats`.
pub fn labels(data: &Path, stats: &Path) -> Result<BTreeMap<String, DensityHistogram>> {
    let pairs = build_labels(data)?;
    let dataset = Dataset::load(data)?;
    let mut out = BTreeMap::new();
    for (key, labels) in pairs {
        let scene = &dataset.scenes[&key];
        let valid = valid_cells(&scene.blocks);
        out.insert(key.to_string(), density_histogram(&labels, &valid)?);
    }
    write_json(stats, &out)?;
    Ok(out)
}

pub fn run_grid(manifest: &RunManifest, out: &Path) -> Result<RunOutcome> {
    let dataset = manifest.load_dataset()?;
    record_manifest(manifest, out)?;
    run(manifest, &dataset, out)
}

/// PCA ablation and importance analysis on C0.
pub fn dims(
    manifest: &RunManifest,
    out: &Path,
) -> Result<(Vec<AblationRecord>, Vec<AblationFailure>, ImportanceTable)> {
    let dataset = manifest.load_dataset()?;
    record_manifest(manifest, out)?;
    let corpus = corpus(&dataset, ComboCode::C0)?;
    let cfg = AblationConfig {
        k_grid: manifest.k_grid.clone().unwrap_or_else(|| DEFAULT_K_GRID.to_vec()),
        families: manifest.models.clone(),
        protocols: manifest.protocols.clone(),
        tasks: manifest.tasks.clone(),
        seed: manifest.seed,
        threshold: manifest.threshold,
    };
    let (records, failures) = ablation_run(&corpus, &cfg);
    let inputs = importance_run(&corpus, &manifest.models, &manifest.importance, manifest.seed)?;
    let table =
        consensus_and_significance(&inputs, manifest.importance.n_perm, derive_seed(manifest.seed, &["consensus"]))?;
    let dir = out.join(DIMS_DIR);
    write_json(&dir.join(ABLATION_FILE), &records)?;
    write_json(&dir.join(ABLATION_FAILURES_FILE), &failures)?;
    write_json(&dir.join("importance_inputs.json"), &inputs)?;
    write_json(&dir.join(IMPORTANCE_FILE), &table)?;
    Ok((records, failures, table))
}

fn cities(dataset: &Dataset) -> BTreeMap<CityCode, Vec<i32>> {
    let mut out: BTreeMap<CityCode, Vec<i32>> = BTreeMap::new();
    for key in dataset.scenes.keys() {
        out.entry(key.city).or_default().push(key.year);
    }
    out
}

fn infer_seed(manifest: &RunManifest, city: CityCode) -> u64 {
    derive_seed(manifest.seed, &["infer", city.as_str()])
}

/// Full-scene maps for every year of every city with labels.
pub fn infer(manifest: &RunManifest, out: &Path) -> Result<Vec<PathBuf>> {
    let dataset = manifest.load_dataset()?;
    record_manifest(manifest, out)?;
    let (family, combo) = (manifest.infer_family(), manifest.infer_combo());
    let mut dirs = Vec::new();
    for (city, years) in cities(&dataset) {
        if !years.iter().any(|&y| dataset.scenes[&CityYear::new(city, y)].labels.is_some()) {
            log::warn!("{city}: no labeled year, skipped");
            continue;
        }
        let maps = full_scene_infer(
            &dataset,
            city,
            &family,
            combo,
            &years,
            manifest.budget,
            manifest.threshold,
            infer_seed(manifest, city),
        )?;
        for m in &maps {
            dirs.push(write_maps(&out.join(INFER_DIR), m)?);
        }
    }
    Ok(dirs)
}

/// Validates full-scene predictions of every labeled city-year.
pub fn validate_spatial(manifest: &RunManifest, out: &Path) -> Result<Vec<SpatialRecord>> {
    let dataset = manifest.load_dataset()?;
    record_manifest(manifest, out)?;
    let (family, combo) = (manifest.infer_family(), manifest.infer_combo());
    let lisa_dir = out.join(SPATIAL_DIR).join("lisa");
    let mut records = Vec::new();
    for (city, years) in cities(&dataset) {
        let labeled: Vec<i32> =
            years.into_iter().filter(|&y| dataset.scenes[&CityYear::new(city, y)].labels.is_some()).collect();
        if labeled.is_empty() {
            continue;
        }
        let maps = full_scene_infer(
            &dataset,
            city,
            &family,
            combo,
            &labeled,
            manifest.budget,
            manifest.threshold,
            infer_seed(manifest, city),
        )?;
        for m in &maps {
            let labels = dataset.scenes[&m.key].labels.as_ref().expect("labeled year");
            records.push(validate_scene(m, labels, &manifest.spatial, manifest.seed, Some(&lisa_dir))?);
        }
    }
    write_json(&out.join(SPATIAL_DIR).join(SPATIAL_FILE), &records)?;
    Ok(records)
}

/// Writes the report from whatever results exist under `out`.
pub fn report(manifest: &RunManifest, out: &Path) -> Result<Vec<PathBuf>> {
    let records = if out.join(crate::run::RECORDS_FILE).is_file() { read_records(out)? } else { Vec::new() };
    let inputs = ReportInputs {
        manifest_hash: manifest.hash(),
        records,
        slice: Some(PrimarySlice::from_manifest(manifest)),
        ablation: read_json(&out.join(DIMS_DIR).join(ABLATION_FILE))?.unwrap_or_default(),
        importance: read_json(&out.join(DIMS_DIR).join(IMPORTANCE_FILE))?,
        spatial: read_json(&out.join(SPATIAL_DIR).join(SPATIAL_FILE))?.unwrap_or_default(),
    };
    emit_report(&out.join(REPORTS_DIR), &inputs)
}
