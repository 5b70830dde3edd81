//! Report emission: one CSV per table family plus a JSON summary.
//!
//! Floats are written with six decimals (round-half-to-even of the binary
//! value, as `format!` does), negative zero is written as zero, and missing
//! values as `NA`. Every CSV is written even when it has no rows.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;
use slumscope_core::features::ComboCode;
use slumscope_core::metrics::{
    fold_median, marginal_gains, median, rank_models, usability_gate, EvalRecord, Metric, SampleId, Task, Usability,
};
use slumscope_core::spatial::Quadrant;
use slumscope_core::splits::{Protocol, StrategyCode};

use crate::dims::{ablation_table, saturation_table, AblationRecord, ImportanceTable, CONSENSUS_TOP};
use crate::manifest::RunManifest;
use crate::validation::SpatialRecord;

pub const PRECISION: usize = 6;

pub fn fmt_f64(v: f64) -> String {
    if !v.is_finite() {
        return "NA".into();
    }
    let s = format!("{v:.PRECISION$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), fmt_f64)
}

/// The (strategy, combo, model, protocol) cell summarized by the
/// decomposition and usability tables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimarySlice {
    pub strategy: StrategyCode,
    pub combo: ComboCode,
    pub model: String,
    pub protocol: Protocol,
}

impl PrimarySlice {
    /// The first listed entry of each manifest list.
    pub fn from_manifest(m: &RunManifest) -> Self {
        PrimarySlice {
            strategy: m.strategies[0],
            combo: m.combos[0],
            model: m.models[0].name().to_string(),
            protocol: m.protocols[0],
        }
    }

    fn matches(&self, id: &SampleId) -> bool {
        id.strategy == self.strategy && id.combo == self.combo && id.model == self.model && id.protocol == self.protocol
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReportInputs {
    pub manifest_hash: String,
    pub records: Vec<EvalRecord>,
    pub slice: Option<PrimarySlice>,
    pub ablation: Vec<AblationRecord>,
    pub importance: Option<ImportanceTable>,
    pub spatial: Vec<SpatialRecord>,
}

struct Table {
    name: &'static str,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &'static str, header: &[&str]) -> Self {
        Table { name, header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(self.name);
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(&path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(path)
    }
}

const CLS_METRICS: [Metric; 5] = [Metric::F1, Metric::Iou, Metric::Precision, Metric::Recall, Metric::AucRoc];
const REG_METRICS: [Metric; 3] = [Metric::R2, Metric::Mae, Metric::Rmse];

fn metric_name(m: Metric) -> String {
    serde_json::to_value(m).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

fn records_table(inputs: &ReportInputs) -> Table {
    let mut t = Table::new(
        "records.csv",
        &[
            "manifest_hash",
            "city",
            "year",
            "strategy",
            "combo",
            "model",
            "task",
            "protocol",
            "fold",
            "seed",
            "n_train",
            "n_test",
            "f1",
            "iou",
            "precision",
            "recall",
            "accuracy",
            "auc_roc",
            "r2",
            "r2_unstable",
            "mae",
            "rmse",
            "mape_pos",
            "single_r2",
            "two_stage_gain",
            "oracle_gain",
            "pos_r2",
        ],
    );
    for r in &inputs.records {
        let mut row = vec![
            inputs.manifest_hash.clone(),
            r.key.city.to_string(),
            r.key.year.to_string(),
            r.strategy.to_string(),
            r.combo.to_string(),
            r.model.clone(),
            r.task.to_string(),
            r.protocol.to_string(),
            r.fold.to_string(),
            r.seed.to_string(),
            r.n_train.to_string(),
            r.n_test.to_string(),
        ];
        for m in
            [Metric::F1, Metric::Iou, Metric::Precision, Metric::Recall, Metric::Accuracy, Metric::AucRoc, Metric::R2]
        {
            row.push(fmt_opt(m.value(r)));
        }
        row.push(r.reg.map_or("NA".into(), |m| m.r2_unstable.to_string()));
        for m in [
            Metric::Mae,
            Metric::Rmse,
            Metric::MapePos,
            Metric::SingleR2,
            Metric::TwoStageGain,
            Metric::OracleGain,
            Metric::PosR2,
        ] {
            row.push(fmt_opt(m.value(r)));
        }
        t.rows.push(row);
    }
    t
}

fn strategy_tables(records: &[EvalRecord]) -> (Table, Table) {
    let mut cmp = Table::new(
        "strategy_comparison.csv",
        &["protocol", "combo", "task", "metric", "strategy", "model", "n_samples", "median"],
    );
    let mut ranking = Table::new(
        "model_ranking.csv",
        &["protocol", "combo", "strategy", "metric", "model", "avg_rank", "wins", "n_samples"],
    );
    for (task, metrics) in [(Task::Cls, &CLS_METRICS[..]), (Task::Reg, &REG_METRICS[..])] {
        for &metric in metrics {
            let fm = fold_median(records, metric);
            let mut groups: BTreeMap<(Protocol, ComboCode, StrategyCode, String), Vec<f64>> = BTreeMap::new();
            let mut samples: BTreeMap<(Protocol, ComboCode, StrategyCode), BTreeMap<_, BTreeMap<String, f64>>> =
                BTreeMap::new();
            for (id, s) in fm.iter().filter(|(id, _)| id.task == task) {
                for model in [id.model.clone(), "ALL".to_string()] {
                    groups.entry((id.protocol, id.combo, id.strategy, model)).or_default().push(s.median);
                }
                samples
                    .entry((id.protocol, id.combo, id.strategy))
                    .or_default()
                    .entry(id.key)
                    .or_default()
                    .insert(id.model.clone(), s.median);
            }
            for ((protocol, combo, strategy, model), values) in groups {
                cmp.rows.push(vec![
                    protocol.to_string(),
                    combo.to_string(),
                    task.to_string(),
                    metric_name(metric),
                    strategy.to_string(),
                    model,
                    values.len().to_string(),
                    fmt_opt(median(&values)),
                ]);
            }
            if !matches!(metric, Metric::F1 | Metric::R2) {
                continue;
            }
            for ((protocol, combo, strategy), by_key) in samples {
                let per_sample: Vec<BTreeMap<String, f64>> = by_key.into_values().collect();
                for (model, rank) in rank_models(&per_sample, metric.higher_is_better()) {
                    ranking.rows.push(vec![
                        protocol.to_string(),
                        combo.to_string(),
                        strategy.to_string(),
                        metric_name(metric),
                        model,
                        fmt_f64(rank.avg_rank),
                        rank.wins.to_string(),
                        rank.n_samples.to_string(),
                    ]);
                }
            }
        }
    }
    (cmp, ranking)
}

fn per_city_table(records: &[EvalRecord]) -> Table {
    let mut t = Table::new(
        "per_city.csv",
        &[
            "city", "year", "protocol", "strategy", "combo", "model", "n_folds", "f1", "f1_sd", "iou", "auc_roc", "r2",
            "r2_sd", "mae",
        ],
    );
    type Key = (slumscope_core::grid::CityYear, Protocol, StrategyCode, ComboCode, String);
    let key = |id: &SampleId| -> Key { (id.key, id.protocol, id.strategy, id.combo, id.model.clone()) };
    let mut rows: BTreeMap<Key, BTreeMap<Metric, (f64, f64, usize)>> = BTreeMap::new();
    for metric in [Metric::F1, Metric::Iou, Metric::AucRoc, Metric::R2, Metric::Mae] {
        for (id, s) in fold_median(records, metric) {
            rows.entry(key(&id)).or_default().insert(metric, (s.median, s.sd, s.n_folds));
        }
    }
    for ((cy, protocol, strategy, combo, model), m) in rows {
        let med = |k: Metric| fmt_opt(m.get(&k).map(|v| v.0));
        let sd = |k: Metric| fmt_opt(m.get(&k).map(|v| v.1));
        let n_folds = m.values().map(|v| v.2).max().unwrap_or(0);
        t.rows.push(vec![
            cy.city.to_string(),
            cy.year.to_string(),
            protocol.to_string(),
            strategy.to_string(),
            combo.to_string(),
            model,
            n_folds.to_string(),
            med(Metric::F1),
            sd(Metric::F1),
            med(Metric::Iou),
            med(Metric::AucRoc),
            med(Metric::R2),
            sd(Metric::R2),
            med(Metric::Mae),
        ]);
    }
    t
}

/// Per-city medians across years of fold-median values on the slice.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CitySliceSummary {
    pub city: String,
    pub n_yr: usize,
    pub f1: Option<f64>,
    pub r2: Option<f64>,
    pub single_r2: Option<f64>,
    pub two_stage_gain: Option<f64>,
    pub oracle_gain: Option<f64>,
    pub pos_r2: Option<f64>,
}

pub fn slice_summaries(records: &[EvalRecord], slice: &PrimarySlice) -> Vec<CitySliceSummary> {
    let metrics = [Metric::F1, Metric::R2, Metric::SingleR2, Metric::TwoStageGain, Metric::OracleGain, Metric::PosR2];
    let mut values: BTreeMap<String, BTreeMap<Metric, Vec<f64>>> = BTreeMap::new();
    let mut years: BTreeMap<String, BTreeSet<i32>> = BTreeMap::new();
    for metric in metrics {
        for (id, s) in fold_median(records, metric).iter().filter(|(id, _)| slice.matches(id)) {
            let city = id.key.city.to_string();
            values.entry(city.clone()).or_default().entry(metric).or_default().push(s.median);
            years.entry(city).or_default().insert(id.key.year);
        }
    }
    values
        .into_iter()
        .map(|(city, m)| {
            let get = |k: Metric| m.get(&k).and_then(|v| median(v));
            CitySliceSummary {
                n_yr: years[&city].len(),
                f1: get(Metric::F1),
                r2: get(Metric::R2),
                single_r2: get(Metric::SingleR2),
                two_stage_gain: get(Metric::TwoStageGain),
                oracle_gain: get(Metric::OracleGain),
                pos_r2: get(Metric::PosR2),
                city,
            }
        })
        .collect()
}

fn decomposition_table(summaries: &[CitySliceSummary]) -> Table {
    let mut t = Table::new(
        "decomposition.csv",
        &["city", "n_yr", "cls F1", "single R²", "two-stage gain", "oracle gain", "pos R²"],
    );
    for s in summaries {
        t.rows.push(vec![
            s.city.clone(),
            s.n_yr.to_string(),
            fmt_opt(s.f1),
            fmt_opt(s.single_r2),
            fmt_opt(s.two_stage_gain),
            fmt_opt(s.oracle_gain),
            fmt_opt(s.pos_r2),
        ]);
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UsabilityRow {
    pub city: String,
    pub f1: Option<f64>,
    pub r2: Option<f64>,
    /// `None` when either score is missing.
    pub usability: Option<Usability>,
}

/// Applies the usability gate to per-city (F1, R²) pairs.
pub fn usability_rows(pairs: &[(String, Option<f64>, Option<f64>)]) -> Vec<UsabilityRow> {
    pairs
        .iter()
        .map(|(city, f1, r2)| UsabilityRow {
            city: city.clone(),
            f1: *f1,
            r2: *r2,
            usability: match (f1, r2) {
                (Some(f), Some(r)) => Some(usability_gate(*f, *r)),
                _ => None,
            },
        })
        .collect()
}

fn usability_table(rows: &[UsabilityRow]) -> Table {
    let mut t = Table::new("usability.csv", &["city", "f1", "r2", "usability"]);
    for r in rows {
        t.rows.push(vec![
            r.city.clone(),
            fmt_opt(r.f1),
            fmt_opt(r.r2),
            r.usability.map_or("NA".into(), |u| u.as_str().to_string()),
        ]);
    }
    t
}

fn gains_table(records: &[EvalRecord]) -> Table {
    let mut t = Table::new(
        "marginal_gains.csv",
        &["city", "strategy", "model", "protocol", "combo", "n_pairs", "d_f1", "d_iou", "d_r2"],
    );
    let (rows, _) = marginal_gains(records, ComboCode::C0);
    for r in rows {
        t.rows.push(vec![
            r.city.to_string(),
            r.strategy.to_string(),
            r.model,
            r.protocol.to_string(),
            r.combo.to_string(),
            r.n_pairs.to_string(),
            fmt_opt(r.d_f1),
            fmt_opt(r.d_iou),
            fmt_opt(r.d_r2),
        ]);
    }
    t
}

fn quadrant_cells(counts: &Option<Vec<(Quadrant, usize)>>) -> Vec<String> {
    Quadrant::ALL
        .iter()
        .map(|q| match counts {
            Some(c) => c.iter().find(|(k, _)| k == q).map_or(0, |(_, n)| *n).to_string(),
            None => "NA".into(),
        })
        .collect()
}

fn spatial_table(records: &[SpatialRecord]) -> Table {
    let mut header: Vec<String> = [
        "city",
        "year",
        "ssim_cls",
        "moran_i_gt",
        "moran_p_gt",
        "moran_i_pred",
        "moran_p_pred",
        "residual_moran_i",
        "residual_moran_p",
        "area_pct_err",
        "moran_factor",
        "lisa_factor",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for map in ["gt", "pred"] {
        header.extend(Quadrant::ALL.iter().map(|q| format!("lisa_{map}_{}", q.name())));
    }
    let mut t = Table { name: "spatial_validation.csv", header, rows: Vec::new() };
    for r in records {
        let mut row = vec![
            r.key.city.to_string(),
            r.key.year.to_string(),
            fmt_opt(r.ssim_cls),
            fmt_opt(r.moran_gt.map(|m| m.i)),
            fmt_opt(r.moran_gt.map(|m| m.p_perm)),
            fmt_opt(r.moran_pred.map(|m| m.i)),
            fmt_opt(r.moran_pred.map(|m| m.p_perm)),
            fmt_opt(r.residual_moran.map(|m| m.i)),
            fmt_opt(r.residual_moran.map(|m| m.p_perm)),
            fmt_opt(r.area_pct_err),
            r.moran_factor.to_string(),
            r.lisa_factor.to_string(),
        ];
        row.extend(quadrant_cells(&r.lisa_gt));
        row.extend(quadrant_cells(&r.lisa_pred));
        t.rows.push(row);
    }
    t
}

fn ablation_tables(records: &[AblationRecord]) -> (Table, Table) {
    let mut abl = Table::new(
        "pca_ablation.csv",
        &["metric", "model", "protocol", "k", "n_samples", "median", "pct_of_full", "median_delta", "wilcoxon_p"],
    );
    let mut sat = Table::new("pca_saturation.csv", &["metric", "scope", "model", "protocol", "k_star", "max"]);
    for metric in [Metric::F1, Metric::R2] {
        for r in ablation_table(records, metric) {
            abl.rows.push(vec![
                metric_name(metric),
                r.model,
                r.protocol.to_string(),
                r.k.to_string(),
                r.n_samples.to_string(),
                fmt_f64(r.median),
                fmt_opt(r.pct_of_full),
                fmt_f64(r.median_delta),
                fmt_f64(r.wilcoxon_p),
            ]);
        }
        for r in saturation_table(records, metric) {
            sat.rows.push(vec![
                metric_name(metric),
                r.scope,
                r.model,
                r.protocol.to_string(),
                r.k_star.map_or("NA".into(), |k| k.to_string()),
                fmt_f64(r.max),
            ]);
        }
    }
    (abl, sat)
}

fn importance_tables(table: Option<&ImportanceTable>) -> (Table, Table) {
    let d = table.and_then(|t| t.models.first()).map_or(0, |m| m.mean_abs.len());
    let mut header = vec!["model".to_string()];
    header.extend((1..=d).map(|j| format!("PC{j}")));
    let mut imp = Table { name: "importance.csv", header, rows: Vec::new() };
    let mut cons = Table::new("importance_consensus.csv", &["dimension", "consensus", "mean_rank", "p_value"]);
    if let Some(t) = table {
        for m in &t.models {
            let mut row = vec![m.model.clone()];
            row.extend(m.mean_abs.iter().map(|&v| fmt_f64(v)));
            imp.rows.push(row);
        }
        for s in &t.dimensions {
            cons.rows.push(vec![
                format!("PC{}", s.dimension),
                s.consensus.to_string(),
                fmt_f64(s.mean_rank),
                fmt_f64(s.p_value),
            ]);
        }
    }
    (imp, cons)
}

/// Model × top-10 membership grid with per-dimension consensus counts.
pub fn consensus_grid(table: &ImportanceTable) -> serde_json::Value {
    let selected: BTreeMap<&str, Vec<usize>> = table
        .models
        .iter()
        .map(|m| {
            let mut dims: Vec<usize> =
                (0..m.ranks.len()).filter(|&j| m.ranks[j] <= CONSENSUS_TOP).map(|j| j + 1).collect();
            dims.sort_unstable();
            (m.model.as_str(), dims)
        })
        .collect();
    let dims: Vec<serde_json::Value> = table
        .dimensions
        .iter()
        .filter(|s| s.consensus > 0)
        .map(|s| {
            json!({
                "dimension": format!("PC{}", s.dimension),
                "consensus": s.consensus,
                "models": table.models.iter().map(|m| m.ranks[s.dimension - 1] <= CONSENSUS_TOP).collect::<Vec<_>>(),
                "mean_rank": round(s.mean_rank),
                "p_value": round(s.p_value),
            })
        })
        .collect();
    json!({
        "top": CONSENSUS_TOP,
        "models": table.models.iter().map(|m| m.model.clone()).collect::<Vec<_>>(),
        "selected": selected,
        "dimensions": dims,
        "n_tables": table.n_tables,
        "n_perm": table.n_perm,
    })
}

fn round(v: f64) -> f64 {
    let s = 10f64.powi(PRECISION as i32);
    let r = (v * s).round() / s;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn round_opt(v: Option<f64>) -> Option<f64> {
    v.filter(|x| x.is_finite()).map(round)
}

/// Records nested city → strategy, in stream order.
pub fn nested_records(records: &[EvalRecord]) -> BTreeMap<String, BTreeMap<String, Vec<&EvalRecord>>> {
    let mut out: BTreeMap<String, BTreeMap<String, Vec<&EvalRecord>>> = BTreeMap::new();
    for r in records {
        out.entry(r.key.city.to_string()).or_default().entry(r.strategy.to_string()).or_default().push(r);
    }
    out
}

fn summary(
    inputs: &ReportInputs,
    slice_rows: &[CitySliceSummary],
    usability: &[UsabilityRow],
    files: &[String],
) -> serde_json::Value {
    let mut by_protocol: BTreeMap<String, BTreeMap<String, serde_json::Value>> = BTreeMap::new();
    for metric in [Metric::F1, Metric::R2] {
        let medians = slumscope_core::metrics::summarize(&inputs.records, metric, |id| (id.protocol, id.strategy));
        for ((protocol, strategy), v) in medians {
            by_protocol
                .entry(protocol.to_string())
                .or_default()
                .entry(strategy.to_string())
                .or_insert_with(|| json!({}))
                .as_object_mut()
                .expect("object")
                .insert(metric_name(metric), json!(round(v)));
        }
    }
    let mut gate_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in usability {
        *gate_counts.entry(r.usability.map_or("NA", |u| u.as_str())).or_default() += 1;
    }
    let samples: BTreeSet<SampleId> = inputs.records.iter().map(|r| r.sample_id()).collect();
    json!({
        "manifest_hash": inputs.manifest_hash,
        "precision": PRECISION,
        "n_records": inputs.records.len(),
        "n_samples": samples.len(),
        "primary_slice": inputs.slice,
        "median_by_protocol_strategy": by_protocol,
        "decomposition": slice_rows.iter().map(|s| json!({
            "city": s.city,
            "n_yr": s.n_yr,
            "f1": round_opt(s.f1),
            "single_r2": round_opt(s.single_r2),
            "two_stage_gain": round_opt(s.two_stage_gain),
            "oracle_gain": round_opt(s.oracle_gain),
            "pos_r2": round_opt(s.pos_r2),
        })).collect::<Vec<_>>(),
        "usability": gate_counts,
        "n_ablation_records": inputs.ablation.len(),
        "n_spatial_records": inputs.spatial.len(),
        "files": files,
    })
}

/// Writes every report file under `dir` and returns their paths.
pub fn emit_report(dir: &Path, inputs: &ReportInputs) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let slice_rows = inputs.slice.as_ref().map(|s| slice_summaries(&inputs.records, s)).unwrap_or_default();
    let pairs: Vec<(String, Option<f64>, Option<f64>)> =
        slice_rows.iter().map(|s| (s.city.clone(), s.f1, s.r2)).collect();
    let usability = usability_rows(&pairs);
    let (cmp, ranking) = strategy_tables(&inputs.records);
    let (abl, sat) = ablation_tables(&inputs.ablation);
    let (imp, cons) = importance_tables(inputs.importance.as_ref());
    let tables = [
        records_table(inputs),
        cmp,
        ranking,
        per_city_table(&inputs.records),
        decomposition_table(&slice_rows),
        gains_table(&inputs.records),
        usability_table(&usability),
        spatial_table(&inputs.spatial),
        abl,
        sat,
        imp,
        cons,
    ];
    let mut paths = Vec::new();
    for t in &tables {
        paths.push(t.write(dir)?);
    }
    let nested = dir.join("records.json");
    fs::write(&nested, serde_json::to_string_pretty(&nested_records(&inputs.records))? + "\n")?;
    paths.push(nested);
    let grid = inputs.importance.as_ref().map(consensus_grid).unwrap_or_else(|| json!({}));
    let grid_path = dir.join("consensus_grid.json");
    fs::write(&grid_path, serde_json::to_string_pretty(&grid)? + "\n")?;
    paths.push(grid_path);
    let mut files: Vec<String> =
        paths.iter().filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned())).collect();
    files.push("summary.json".into());
    let summary_path = dir.join("summary.json");
    fs::write(&summary_path, serde_json::to_string_pretty(&summary(inputs, &slice_rows, &usability, &files))? + "\n")?;
    paths.push(summary_path);
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting() {
        assert_eq!(fmt_f64(0.1234564), "0.123456");
        assert_eq!(fmt_f64(-0.0000001), "0.000000");
        assert_eq!(fmt_f64(-0.5), "-0.500000");
        assert_eq!(fmt_f64(f64::NAN), "NA");
        assert_eq!(fmt_opt(None), "NA");
    }

    #[test]
    fn empty_inputs_give_header_only_files() {
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_report(dir.path(), &ReportInputs::default()).unwrap();
        for p in paths.iter().filter(|p| p.extension().is_some_and(|e| e == "csv")) {
            let text = fs::read_to_string(p).unwrap();
            assert_eq!(text.lines().count(), 1, "{}", p.display());
        }
        let header = fs::read_to_string(dir.path().join("decomposition.csv")).unwrap();
        assert_eq!(header, "city,n_yr,cls F1,single R²,two-stage gain,oracle gain,pos R²\n");
    }

    #[test]
    fn gate_labels() {
        let rows = usability_rows(&[
            ("AAA".into(), Some(0.5), Some(0.3)),
            ("BBB".into(), Some(0.49), Some(0.31)),
            ("CCC".into(), None, Some(0.9)),
        ]);
        assert_eq!(rows[0].usability, Some(Usability::Both));
        assert_eq!(rows[1].usability, Some(Usability::RegOnly));
        assert_eq!(rows[2].usability, None);
    }
}
