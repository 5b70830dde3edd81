//! Execution of the strategy × combo × model × protocol grid.
//!
//! Each grid cell (one target city-year under one strategy, combo, model, and
//! protocol) runs all of its folds and is cached under
//! `<out>/cells/<key>.json`, where the key hashes everything the cell's result
//! depends on. Reruns load cached cells instead of recomputing them; failed
//! cells are logged and retried on the next run.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use slumscope_core::features::ComboCode;
use slumscope_core::grid::CityYear;
use slumscope_core::metrics::{EvalRecord, Task};
use slumscope_core::splits::{assemble_strategy, audit_leakage, Protocol, SampleTable, StrategyCode};
use slumscope_models::Family;

use crate::dataset::{corpus, Dataset, INDEX_FILE};
use crate::dims::protocol_splits;
use crate::evaluate::score_fold;
use crate::manifest::{DatasetSource, RunManifest};
use crate::seeds::{derive_seed, sha256_hex};

/// Bumped whenever cell contents change meaning.
const CELL_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellId {
    pub target: CityYear,
    pub strategy: StrategyCode,
    pub combo: ComboCode,
    pub model: String,
    pub protocol: Protocol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub key: String,
    pub id: CellId,
    pub records: Vec<EvalRecord>,
    /// Spatial blocks without any valid target row.
    pub skipped_blocks: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub key: String,
    pub id: CellId,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub manifest_hash: String,
    pub cells_total: usize,
    pub cells_cached: usize,
    pub records: Vec<EvalRecord>,
    pub failures: Vec<CellFailure>,
}

pub const RECORDS_FILE: &str = "records.json";
pub const FAILURES_FILE: &str = "failures.json";

/// Everything a cell's result depends on.
#[derive(Serialize)]
struct CellKeyInput<'a> {
    schema: u32,
    dataset: &'a str,
    id: &'a CellId,
    family: &'a Family,
    tasks: &'a [Task],
    budget: usize,
    threshold: f64,
    seed: u64,
}

/// Identity of the scenes: the generator spec, or the index (and generator
/// spec, when present) of a dataset directory.
pub fn dataset_fingerprint(source: &DatasetSource) -> Result<String> {
    let bytes = match source {
        DatasetSource::Synthetic(spec) => serde_json::to_vec(spec)?,
        DatasetSource::Path(dir) => {
            let mut bytes = fs::read(dir.join(INDEX_FILE)).with_context(|| format!("reading {}", dir.display()))?;
            if let Ok(world) = fs::read(dir.join("world.json")) {
                bytes.extend(world);
            }
            bytes
        }
    };
    Ok(sha256_hex(&bytes))
}

fn cell_key(manifest: &RunManifest, dataset: &str, id: &CellId, family: &Family) -> String {
    let input = CellKeyInput {
        schema: CELL_SCHEMA,
        dataset,
        id,
        family,
        tasks: &manifest.tasks,
        budget: manifest.budget,
        threshold: manifest.threshold,
        seed: manifest.seed,
    };
    sha256_hex(&serde_json::to_vec(&input).expect("key input serializes"))
}

fn cell_path(out: &Path, key: &str) -> PathBuf {
    out.join("cells").join(format!("{key}.json"))
}

fn load_cached(path: &Path, key: &str) -> Option<CellResult> {
    let text = fs::read_to_string(path).ok()?;
    let cell: CellResult = serde_json::from_str(&text).ok()?;
    (cell.key == key).then_some(cell)
}

/// Writes via a temporary file so an interrupted write never leaves a
/// truncated cell behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming {}", tmp.display()))
}

/// Seed of the strategy sample for one fold; shared by every combo and model
/// so their comparisons are paired.
fn strategy_seed(manifest: &RunManifest, id: &CellId, fold: usize) -> u64 {
    derive_seed(
        manifest.seed,
        &["strategy", &id.target.to_string(), &id.strategy.to_string(), &id.protocol.to_string(), &fold.to_string()],
    )
}

fn model_seed(manifest: &RunManifest, id: &CellId, fold: usize) -> u64 {
    derive_seed(
        manifest.seed,
        &[
            "model",
            &id.target.to_string(),
            &id.strategy.to_string(),
            &id.combo.to_string(),
            &id.model,
            &id.protocol.to_string(),
            &fold.to_string(),
        ],
    )
}

fn run_cell(
    manifest: &RunManifest,
    id: &CellId,
    family: &Family,
    corpus: &BTreeMap<CityYear, SampleTable>,
) -> Result<(Vec<EvalRecord>, Vec<u8>), String> {
    let table = &corpus[&id.target];
    let skipped = match id.protocol {
        Protocol::Spatial => slumscope_core::splits::spatial_folds(table).skipped,
        Protocol::Random => Vec::new(),
    };
    let splits = protocol_splits(table, id.target, id.protocol, manifest.seed)?;
    let mut records = Vec::new();
    for split in &splits {
        let training = assemble_strategy(
            id.strategy,
            id.target,
            split,
            corpus,
            manifest.budget,
            strategy_seed(manifest, id, split.fold),
        )
        .map_err(|e| format!("fold {}: {e}", split.fold))?;
        audit_leakage(&training, id.target, split, corpus)
            .map_err(|e| format!("fold {}: leakage audit: {e}", split.fold))?;
        let train_rows = training.materialize(corpus);
        let test_rows = table.select(&split.test);
        let seed = model_seed(manifest, id, split.fold);
        let scores = score_fold(
            family,
            &manifest.tasks,
            seed,
            manifest.threshold,
            train_rows.features.view(),
            &train_rows,
            test_rows.features.view(),
            &test_rows,
        )
        .map_err(|e| format!("fold {}: {e}", split.fold))?;
        for &task in &manifest.tasks {
            records.push(EvalRecord {
                key: id.target,
                strategy: id.strategy,
                combo: id.combo,
                model: id.model.clone(),
                task,
                protocol: id.protocol,
                fold: split.fold,
                seed,
                n_train: train_rows.n_rows(),
                n_test: test_rows.n_rows(),
                cls: if task == Task::Cls { scores.cls } else { None },
                reg: if task == Task::Reg { scores.reg } else { None },
                decomposition: if task == Task::Reg { scores.decomposition } else { None },
            });
        }
    }
    Ok((records, skipped))
}

/// Runs every cell of the manifest's grid on the current rayon pool, reusing
/// cached cells under `out`. Records come back in grid order regardless of
/// scheduling.
pub fn run(manifest: &RunManifest, dataset: &Dataset, out: &Path) -> Result<RunOutcome> {
    let corpora: BTreeMap<ComboCode, BTreeMap<CityYear, SampleTable>> =
        manifest.combos.iter().map(|&c| Ok((c, corpus(dataset, c)?))).collect::<Result<_>>()?;
    let fingerprint = dataset_fingerprint(&manifest.dataset)?;
    let mut cells = Vec::new();
    for target in dataset.labeled_keys() {
        for &strategy in &manifest.strategies {
            for &combo in &manifest.combos {
                for family in &manifest.models {
                    for &protocol in &manifest.protocols {
                        let id = CellId { target, strategy, combo, model: family.name().to_string(), protocol };
                        let key = cell_key(manifest, &fingerprint, &id, family);
                        cells.push((id, family, key));
                    }
                }
            }
        }
    }
    log::info!("{} cells over {} labeled city-years", cells.len(), dataset.labeled_keys().len());
    let results: Vec<(Result<CellResult, CellFailure>, bool)> = cells
        .par_iter()
        .map(|(id, family, key)| {
            let path = cell_path(out, key);
            if let Some(cached) = load_cached(&path, key) {
                return (Ok(cached), true);
            }
            let outcome = run_cell(manifest, id, family, &corpora[&id.combo]);
            let result = match outcome {
                Ok((records, skipped_blocks)) => {
                    let cell = CellResult { key: key.clone(), id: id.clone(), records, skipped_blocks };
                    let bytes = serde_json::to_vec(&cell).expect("cell serializes");
                    match write_atomic(&path, &bytes) {
                        Ok(()) => Ok(cell),
                        Err(e) => Err(CellFailure { key: key.clone(), id: id.clone(), error: format!("{e:#}") }),
                    }
                }
                Err(error) => Err(CellFailure { key: key.clone(), id: id.clone(), error }),
            };
            match &result {
                Ok(_) => {
                    log::debug!("cell {} {} {} {} {} done", id.target, id.strategy, id.combo, id.model, id.protocol)
                }
                Err(f) => log::warn!(
                    "cell {} {} {} {} {} failed: {}",
                    id.target,
                    id.strategy,
                    id.combo,
                    id.model,
                    id.protocol,
                    f.error
                ),
            }
            (result, false)
        })
        .collect();
    let mut outcome = RunOutcome {
        manifest_hash: manifest.hash(),
        cells_total: cells.len(),
        cells_cached: 0,
        records: Vec::new(),
        failures: Vec::new(),
    };
    for (result, cached) in results {
        outcome.cells_cached += usize::from(cached);
        match result {
            Ok(cell) => outcome.records.extend(cell.records),
            Err(f) => outcome.failures.push(f),
        }
    }
    write_atomic(&out.join(RECORDS_FILE), &serde_json::to_vec_pretty(&outcome.records)?)?;
    write_atomic(&out.join(FAILURES_FILE), &serde_json::to_vec_pretty(&outcome.failures)?)?;
    Ok(outcome)
}

/// Records saved by a previous run.
pub fn read_records(out: &Path) -> Result<Vec<EvalRecord>> {
    let path = out.join(RECORDS_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}
