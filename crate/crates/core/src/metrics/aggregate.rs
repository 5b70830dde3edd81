//! Fold-median aggregation, model rankings, marginal gains and the usability gate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EvalRecord, Metric, Task};
use crate::features::ComboCode;
use crate::grid::{CityCode, CityYear};
use crate::splits::{Protocol, StrategyCode};

/// Median with the even-length midpoint convention.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

pub fn population_sd(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Some((values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt())
}

/// Identity of one evaluated sample: everything except the fold.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SampleId {
    pub key: CityYear,
    pub strategy: StrategyCode,
    pub combo: ComboCode,
    pub model: String,
    pub task: Task,
    pub protocol: Protocol,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub median: f64,
    /// Population SD of the metric across folds.
    pub sd: f64,
    pub n_folds: usize,
}

/// Median across folds for each sample. Records lacking the metric are skipped.
pub fn fold_median(records: &[EvalRecord], metric: Metric) -> BTreeMap<SampleId, SampleSummary> {
    let mut by_sample: BTreeMap<SampleId, Vec<f64>> = BTreeMap::new();
    for r in records {
        if let Some(v) = metric.value(r) {
            by_sample.entry(r.sample_id()).or_default().push(v);
        }
    }
    by_sample
        .into_iter()
        .map(|(id, vals)| {
            let s = SampleSummary {
                median: median(&vals).expect("non-empty"),
                sd: population_sd(&vals).expect("non-empty"),
                n_folds: vals.len(),
            };
            (id, s)
        })
        .collect()
}

/// Fold medians first, then the median across samples sharing a group key.
pub fn summarize<K: Ord>(records: &[EvalRecord], metric: Metric, group: impl Fn(&SampleId) -> K) -> BTreeMap<K, f64> {
    let mut groups: BTreeMap<K, Vec<f64>> = BTreeMap::new();
    for (id, s) in fold_median(records, metric) {
        groups.entry(group(&id)).or_default().push(s.median);
    }
    groups.into_iter().map(|(k, v)| (k, median(&v).expect("non-empty"))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelRank {
    pub avg_rank: f64,
    /// Samples where the model ranks first, ties included.
    pub wins: usize,
    pub n_samples: usize,
}

/// Ranks models within each sample (1 = best; ties share the average rank).
pub fn rank_models(samples: &[BTreeMap<String, f64>], higher_is_better: bool) -> BTreeMap<String, ModelRank> {
    let mut acc: BTreeMap<String, (f64, usize, usize)> = BTreeMap::new();
    for sample in samples {
        let names: Vec<&String> = sample.keys().collect();
        let keyed: Vec<f64> = sample.values().map(|&v| if higher_is_better { -v } else { v }).collect();
        let ranks = super::average_ranks(&keyed);
        let best = keyed.iter().copied().fold(f64::INFINITY, f64::min);
        for ((name, rank), v) in names.into_iter().zip(ranks).zip(&keyed) {
            let e = acc.entry(name.clone()).or_insert((0.0, 0, 0));
            e.0 += rank;
            e.1 += usize::from(*v == best);
            e.2 += 1;
        }
    }
    acc.into_iter()
        .map(|(name, (sum, wins, n))| {
            let r = ModelRank { avg_rank: sum / n as f64, wins, n_samples: n };
            (name, r)
        })
        .collect()
}

/// Per-city median of per-year differences against the baseline combo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub city: CityCode,
    pub strategy: StrategyCode,
    pub model: String,
    pub protocol: Protocol,
    pub combo: ComboCode,
    pub n_pairs: usize,
    pub d_f1: Option<f64>,
    pub d_iou: Option<f64>,
    pub d_r2: Option<f64>,
}

type GainKey = (CityCode, StrategyCode, String, Protocol, ComboCode);

/// Matches every non-baseline sample to the baseline sample with the same
/// (city, year, strategy, model, task, protocol). Unmatched samples are
/// returned separately.
pub fn marginal_gains(records: &[EvalRecord], baseline: ComboCode) -> (Vec<GainRow>, Vec<SampleId>) {
    let mut deltas: BTreeMap<GainKey, BTreeMap<Metric, Vec<f64>>> = BTreeMap::new();
    let mut pairs: BTreeMap<GainKey, std::collections::BTreeSet<(CityYear, Task)>> = BTreeMap::new();
    let mut unmatched = std::collections::BTreeSet::new();
    for metric in [Metric::F1, Metric::Iou, Metric::R2] {
        let medians = fold_median(records, metric);
        for (id, s) in &medians {
            if id.combo == baseline {
                continue;
            }
            let base_id = SampleId { combo: baseline, ..id.clone() };
            let Some(base) = medians.get(&base_id) else {
                unmatched.insert(id.clone());
                continue;
            };
            let key = (id.key.city, id.strategy, id.model.clone(), id.protocol, id.combo);
            deltas.entry(key.clone()).or_default().entry(metric).or_default().push(s.median - base.median);
            pairs.entry(key).or_default().insert((id.key, id.task));
        }
    }
    let rows = deltas
        .into_iter()
        .map(|(key, by_metric)| {
            let d = |m: Metric| by_metric.get(&m).and_then(|v| median(v));
            let n_pairs = pairs[&key].len();
            let (city, strategy, model, protocol, combo) = key;
            GainRow {
                city,
                strategy,
                model,
                protocol,
                combo,
                n_pairs,
                d_f1: d(Metric::F1),
                d_iou: d(Metric::Iou),
                d_r2: d(Metric::R2),
            }
        })
        .collect();
    (rows, unmatched.into_iter().collect())
}

pub const CLS_GATE: f64 = 0.5;
pub const REG_GATE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Usability {
    Both,
    ClsOnly,
    RegOnly,
    Neither,
}

impl Usability {
    pub fn as_str(self) -> &'static str {
        match self {
            Usability::Both => "both",
            Usability::ClsOnly => "cls-only",
            Usability::RegOnly => "reg-only",
            Usability::Neither => "neither",
        }
    }
}

/// Inclusive thresholds: F1 ≥ 0.5 and R² ≥ 0.3.
pub fn usability_gate(f1: f64, r2: f64) -> Usability {
    match (f1 >= CLS_GATE, r2 >= REG_GATE) {
        (true, true) => Usability::Both,
        (true, false) => Usability::ClsOnly,
        (false, true) => Usability::RegOnly,
        (false, false) => Usability::Neither,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{ClsMetrics, RegMetrics};
    use proptest::prelude::*;

    fn cy(code: &str, year: i32) -> CityYear {
        CityYear::new(code.parse().unwrap(), year)
    }

    fn cls_record(key: CityYear, combo: ComboCode, model: &str, fold: usize, f1: f64) -> EvalRecord {
        EvalRecord {
            key,
            strategy: StrategyCode::S1,
            combo,
            model: model.into(),
            task: Task::Cls,
            protocol: Protocol::Spatial,
            fold,
            seed: 0,
            n_train: 10,
            n_test: 10,
            cls: Some(ClsMetrics {
                f1,
                iou: f1 / (2.0 - f1),
                precision: f1,
                recall: f1,
                accuracy: f1,
                auc_roc: None,
                threshold: 0.5,
                n: 10,
            }),
            reg: None,
            decomposition: None,
        }
    }

    fn reg_record(key: CityYear, combo: ComboCode, r2: f64) -> EvalRecord {
        EvalRecord {
            task: Task::Reg,
            cls: None,
            reg: Some(RegMetrics { r2: Some(r2), r2_unstable: false, mae: 0.0, rmse: 0.0, mape_pos: None, n: 10 }),
            ..cls_record(key, combo, "m", 0, 0.0)
        }
    }

    #[test]
    fn median_conventions() {
        assert_eq!(median(&[0.5, 0.6, 0.7]), Some(0.6));
        assert_eq!(median(&[0.3]), Some(0.3));
        assert_eq!(median(&[0.4, 0.6]), Some(0.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn fold_median_then_sample_median() {
        let mut recs = Vec::new();
        for (fold, f1) in [0.5, 0.7, 0.6].into_iter().enumerate() {
            recs.push(cls_record(cy("AAA", 2020), ComboCode::C0, "m", fold, f1));
        }
        for (fold, f1) in [0.2, 0.4].into_iter().enumerate() {
            recs.push(cls_record(cy("BBB", 2020), ComboCode::C0, "m", fold, f1));
        }
        let per = fold_median(&recs, Metric::F1);
        let a = per.values().next().unwrap();
        assert_eq!((a.median, a.n_folds), (0.6, 3));
        assert!((a.sd - (0.02f64 / 3.0).sqrt()).abs() < 1e-12);
        let overall = summarize(&recs, Metric::F1, |id| id.model.clone());
        assert!((overall["m"] - 0.45).abs() < 1e-12);
    }

    fn ranks(values: &[(&str, f64)]) -> BTreeMap<String, f64> {
        values.iter().map(|(n, v)| (n.to_string(), *v)).collect()
    }

    #[test]
    fn ranking_examples() {
        let dom: Vec<_> = (0..10).map(|_| ranks(&[("A", 0.9), ("B", 0.5)])).collect();
        let r = rank_models(&dom, true);
        assert_eq!((r["A"].avg_rank, r["A"].wins), (1.0, 10));
        assert_eq!((r["B"].avg_rank, r["B"].wins), (2.0, 0));

        let tie: Vec<_> = (0..10).map(|_| ranks(&[("A", 0.5), ("B", 0.5)])).collect();
        let r = rank_models(&tie, true);
        assert_eq!((r["A"].avg_rank, r["A"].wins), (1.5, 10));
        assert_eq!((r["B"].avg_rank, r["B"].wins), (1.5, 10));

        let cyc = vec![
            ranks(&[("A", 3.0), ("B", 2.0), ("C", 1.0)]),
            ranks(&[("A", 1.0), ("B", 3.0), ("C", 2.0)]),
            ranks(&[("A", 2.0), ("B", 1.0), ("C", 3.0)]),
        ];
        let r = rank_models(&cyc, true);
        assert!(r.values().all(|m| m.wins == 1 && m.avg_rank == 2.0));

        let lower = rank_models(&[ranks(&[("A", 1.0), ("B", 2.0)])], false);
        assert_eq!(lower["A"].wins, 1);
    }

    #[test]
    fn identical_combo_has_zero_gain() {
        let mut recs = Vec::new();
        for combo in [ComboCode::C0, ComboCode::C1] {
            recs.push(cls_record(cy("AAA", 2020), combo, "m", 0, 0.6));
            recs.push(reg_record(cy("AAA", 2020), combo, 0.3));
        }
        let (rows, unmatched) = marginal_gains(&recs, ComboCode::C0);
        assert!(unmatched.is_empty());
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].d_f1, rows[0].d_iou, rows[0].d_r2), (Some(0.0), Some(0.0), Some(0.0)));
    }

    #[test]
    fn gains_aggregate_years_and_report_unmatched() {
        let recs = vec![
            cls_record(cy("AAA", 2020), ComboCode::C0, "m", 0, 0.5),
            cls_record(cy("AAA", 2020), ComboCode::C2, "m", 0, 0.6),
            cls_record(cy("AAA", 2021), ComboCode::C0, "m", 0, 0.5),
            cls_record(cy("AAA", 2021), ComboCode::C2, "m", 0, 0.8),
            cls_record(cy("AAA", 2022), ComboCode::C2, "m", 0, 0.8),
        ];
        let (rows, unmatched) = marginal_gains(&recs, ComboCode::C0);
        assert_eq!(rows[0].n_pairs, 2);
        assert!((rows[0].d_f1.unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(rows[0].d_r2, None);
        assert_eq!(unmatched.len(), 1);
        assert_eq!(unmatched[0].key, cy("AAA", 2022));
    }

    #[test]
    fn published_gains_within_rounding() {
        // Table inputs are printed to three decimals, so a recomputed
        // difference can sit one unit in the last place from the printed one.
        let d_f1 = 0.794 - 0.759;
        assert!((d_f1 - 0.036f64).abs() <= 0.001 + 1e-12);
        let d_r2 = 0.362 - (-1.582);
        assert!((d_r2 - 1.943f64).abs() <= 0.001 + 1e-12);
    }

    #[test]
    fn gate_examples() {
        assert_eq!(usability_gate(0.794, 0.576), Usability::Both);
        assert_eq!(usability_gate(0.470, 0.346), Usability::RegOnly);
        assert_eq!(usability_gate(0.156, -0.002), Usability::Neither);
        assert_eq!(usability_gate(0.5, 0.3), Usability::Both);
        assert_eq!(usability_gate(0.6, 0.1), Usability::ClsOnly);
    }

    proptest! {
        #[test]
        fn fold_order_is_irrelevant(f1s in proptest::collection::vec(0.0f64..1.0, 1..9), rot in 0usize..9) {
            let mk = |vals: &[f64]| -> Vec<EvalRecord> {
                vals.iter().enumerate().map(|(i, &v)| cls_record(cy("AAA", 2020), ComboCode::C0, "m", i, v)).collect()
            };
            let mut rotated = f1s.clone();
            let k = rot % f1s.len();
            rotated.rotate_left(k);
            let a = fold_median(&mk(&f1s), Metric::F1);
            let b = fold_median(&mk(&rotated), Metric::F1);
            prop_assert_eq!(a.values().next().unwrap().median, b.values().next().unwrap().median);
        }
    }
}
