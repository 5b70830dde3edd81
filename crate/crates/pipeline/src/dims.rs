//! Embedding-dimension structure: PCA and its ablation over retained
//! components, saturation points, Shapley attribution, and cross-model
//! importance consensus with a rank-permutation significance test.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use slumscope_core::features::ComboCode;
use slumscope_core::grid::{CityCode, CityYear};
use slumscope_core::metrics::{median, wilcoxon_signed_rank, EvalRecord, Metric, Task};
use slumscope_core::splits::{random_split, spatial_folds, Protocol, SampleTable, Split, StrategyCode};
use slumscope_models::{train, Family, ModelError, ModelSpec, TrainedModel};
use thiserror::Error;

use crate::evaluate::score_fold;
use crate::seeds::derive_seed;

/// Retained-component grid of the ablation.
pub const DEFAULT_K_GRID: [usize; 8] = [8, 16, 24, 32, 38, 48, 56, 64];
/// Share of the curve maximum that defines the saturation point.
pub const SATURATION_SHARE: f64 = 0.95;
/// Size of the per-model top set counted by consensus.
pub const CONSENSUS_TOP: usize = 10;
pub const DEFAULT_IMPORTANCE_PERMUTATIONS: usize = 1000;

#[derive(Debug, Error)]
pub enum DimsError {
    #[error("need at least one row and one column, got {0}×{1}")]
    Empty(usize, usize),
    #[error("k = {k} outside 1..={d}")]
    BadK { k: usize, d: usize },
    #[error("input has {got} columns, model expects {expected}")]
    Width { expected: usize, got: usize },
    #[error("non-finite input")]
    NonFinite,
    #[error("Monte-Carlo attribution needs at least one ordering")]
    NoOrderings,
    #[error("background rows are empty")]
    EmptyBackground,
    #[error("consensus needs at least two importance vectors of equal width")]
    TooFewTables,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Principal axes of a row set, ordered by decreasing variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// One unit-length component per row.
    pub components: Array2<f64>,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    /// Fewer rows than dimensions or numerically zero trailing variance.
    pub rank_deficient: bool,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Centered projection onto the leading `k` components.
    pub fn transform(&self, rows: ArrayView2<f64>, k: usize) -> Result<Array2<f64>, DimsError> {
        let d = self.dim();
        if k == 0 || k > d {
            return Err(DimsError::BadK { k, d });
        }
        if rows.ncols() != d {
            return Err(DimsError::Width { expected: d, got: rows.ncols() });
        }
        let mean = ndarray::ArrayView1::from(&self.mean);
        let centered = &rows - &mean;
        Ok(centered.dot(&self.components.slice(ndarray::s![..k, ..]).t()))
    }

    /// Maps `k`-component scores back to the input space.
    pub fn inverse(&self, scores: ArrayView2<f64>) -> Result<Array2<f64>, DimsError> {
        let k = scores.ncols();
        if k == 0 || k > self.dim() {
            return Err(DimsError::BadK { k, d: self.dim() });
        }
        let mean = ndarray::ArrayView1::from(&self.mean);
        Ok(scores.dot(&self.components.slice(ndarray::s![..k, ..])) + mean)
    }

    pub fn cumulative_evr(&self) -> Vec<f64> {
        self.explained_variance_ratio
            .iter()
            .scan(0.0, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect()
    }
}

/// Eigen-decomposition of the sample covariance. Components are sign-fixed so
/// their largest-magnitude loading is positive.
pub fn pca_fit(rows: ArrayView2<f64>) -> Result<PcaModel, DimsError> {
    let (n, d) = rows.dim();
    if n == 0 || d == 0 {
        return Err(DimsError::Empty(n, d));
    }
    if rows.iter().any(|v| !v.is_finite()) {
        return Err(DimsError::NonFinite);
    }
    let mean = rows.mean_axis(Axis(0)).expect("non-empty");
    let centered = &rows - &mean;
    let denom = (n.max(2) - 1) as f64;
    let cov = centered.t().dot(&centered) / denom;
    let cov = DMatrix::from_fn(d, d, |i, j| 0.5 * (cov[[i, j]] + cov[[j, i]]));
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut components = Array2::zeros((d, d));
    let mut variance = Vec::with_capacity(d);
    for (r, &j) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(j);
        let pivot = (0..d).max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()).then(b.cmp(&a))).expect("d > 0");
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            components[[r, i]] = sign * col[i];
        }
        variance.push(eig.eigenvalues[j].max(0.0));
    }
    let total: f64 = variance.iter().sum();
    let ratio = variance.iter().map(|v| if total > 0.0 { v / total } else { 0.0 }).collect();
    let top = variance[0];
    let rank_deficient = n <= d || variance.iter().any(|&v| v <= 1e-12 * top.max(f64::MIN_POSITIVE));
    Ok(PcaModel {
        mean: mean.to_vec(),
        components,
        explained_variance: variance,
        explained_variance_ratio: ratio,
        rank_deficient,
    })
}

/// Smallest k whose value reaches 95% of the curve maximum; `None` when the
/// maximum is not positive. Points are taken in increasing k.
pub fn saturation_point(curve: &[(usize, f64)]) -> Option<usize> {
    let mut pts: Vec<(usize, f64)> = curve.iter().copied().filter(|(_, v)| v.is_finite()).collect();
    pts.sort_by_key(|p| p.0);
    let max = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return None;
    }
    pts.iter().find(|p| p.1 >= SATURATION_SHARE * max).map(|p| p.0)
}

/// Exact attribution of a linear predictor against a reference point:
/// φ_ij = w_j (x_ij − b_j).
pub fn linear_attribution(weights: &[f64], reference: &[f64], rows: ArrayView2<f64>) -> Result<Array2<f64>, DimsError> {
    if rows.ncols() != weights.len() || reference.len() != weights.len() {
        return Err(DimsError::Width { expected: weights.len(), got: rows.ncols() });
    }
    Ok(Array2::from_shape_fn(rows.dim(), |(i, j)| weights[j] * (rows[[i, j]] - reference[j])))
}

/// Orderings evaluated per batched prediction call.
const ORDERINGS_PER_BATCH: usize = 32;

/// Monte-Carlo permutation Shapley values of `f` against a single reference
/// point. Each ordering walks from the reference to the row one feature at a
/// time, so contributions telescope to f(x) − f(reference) for every ordering.
/// Row `i` uses random stream `i` of `seed`.
pub fn shapley_mc<F>(
    f: F,
    reference: &[f64],
    rows: ArrayView2<f64>,
    orderings: usize,
    seed: u64,
) -> Result<Array2<f64>, DimsError>
where
    F: Fn(ArrayView2<f64>) -> Result<Vec<f64>, DimsError> + Sync,
{
    if orderings == 0 {
        return Err(DimsError::NoOrderings);
    }
    let d = reference.len();
    if rows.ncols() != d {
        return Err(DimsError::Width { expected: d, got: rows.ncols() });
    }
    let per_row: Vec<Vec<f64>> = (0..rows.nrows())
        .into_par_iter()
        .map(|i| {
            let x = rows.row(i);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut phi = vec![0.0; d];
            let mut perm: Vec<usize> = (0..d).collect();
            let mut done = 0;
            while done < orderings {
                let m = ORDERINGS_PER_BATCH.min(orderings - done);
                let mut perms = Vec::with_capacity(m);
                let mut batch = Array2::zeros((m * (d + 1), d));
                for o in 0..m {
                    perm.shuffle(&mut rng);
                    let base = o * (d + 1);
                    let mut z: Vec<f64> = reference.to_vec();
                    batch.row_mut(base).assign(&ndarray::ArrayView1::from(&z));
                    for (t, &j) in perm.iter().enumerate() {
                        z[j] = x[j];
                        batch.row_mut(base + t + 1).assign(&ndarray::ArrayView1::from(&z));
                    }
                    perms.push(perm.clone());
                }
                let out = f(batch.view())?;
                for (o, p) in perms.iter().enumerate() {
                    let base = o * (d + 1);
                    for (t, &j) in p.iter().enumerate() {
                        phi[j] += out[base + t + 1] - out[base + t];
                    }
                }
                done += m;
            }
            phi.iter_mut().for_each(|v| *v /= orderings as f64);
            Ok(phi)
        })
        .collect::<Result<_, DimsError>>()?;
    let mut out = Array2::zeros((rows.nrows(), d));
    for (i, phi) in per_row.into_iter().enumerate() {
        out.row_mut(i).assign(&ndarray::Array1::from(phi));
    }
    Ok(out)
}

/// Per-dimension mean |φ| over explained rows.
pub fn mean_abs(phi: &Array2<f64>) -> Vec<f64> {
    let n = phi.nrows().max(1) as f64;
    phi.axis_iter(Axis(1)).map(|c| c.iter().map(|v| v.abs()).sum::<f64>() / n).collect()
}

/// Attribution of a trained model: closed form for linear models (on the
/// linear predictor, log-odds for classifiers), Monte-Carlo Shapley on the
/// task output otherwise. The reference point is the background mean.
pub fn attribute(
    model: &TrainedModel,
    background: ArrayView2<f64>,
    explain: ArrayView2<f64>,
    orderings: usize,
    seed: u64,
) -> Result<Array2<f64>, DimsError> {
    if background.nrows() == 0 {
        return Err(DimsError::EmptyBackground);
    }
    let reference = background.mean_axis(Axis(0)).expect("non-empty").to_vec();
    match model.linear_coefficients() {
        Some((w, _)) => linear_attribution(&w, &reference, explain),
        None => shapley_mc(|z| Ok(model.predict(z)?), &reference, explain, orderings, seed),
    }
}

/// Rank of each value, 1 = largest; ties go to the lower index.
pub fn importance_ranks(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; values.len()];
    for (r, &j) in order.iter().enumerate() {
        ranks[j] = r + 1;
    }
    ranks
}

/// Mean |attribution| per dimension for one model in one city.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceInput {
    pub model: String,
    pub city: CityCode,
    pub mean_abs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelImportance {
    pub model: String,
    /// Mean over cities of mean |attribution|.
    pub mean_abs: Vec<f64>,
    pub ranks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSummary {
    /// 1-based dimension index.
    pub dimension: usize,
    /// Models placing the dimension in their top set.
    pub consensus: usize,
    /// Mean rank over every (model, city) table.
    pub mean_rank: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceTable {
    pub models: Vec<ModelImportance>,
    pub dimensions: Vec<DimensionSummary>,
    pub n_tables: usize,
    pub n_perm: usize,
}

/// Per-model rankings, top-10 consensus counts, and a permutation p-value for
/// each dimension's mean rank across all (model, city) tables. The null draws
/// every table's ranks as an independent uniform permutation; p is the
/// add-one share of null mean ranks at least as good (as small) as observed.
pub fn consensus_and_significance(
    inputs: &[ImportanceInput],
    n_perm: usize,
    seed: u64,
) -> Result<ImportanceTable, DimsError> {
    let d = inputs.first().map_or(0, |t| t.mean_abs.len());
    if inputs.len() < 2 || d == 0 || inputs.iter().any(|t| t.mean_abs.len() != d) {
        return Err(DimsError::TooFewTables);
    }
    let mut by_model: BTreeMap<&str, Vec<&ImportanceInput>> = BTreeMap::new();
    for t in inputs {
        by_model.entry(t.model.as_str()).or_default().push(t);
    }
    let models: Vec<ModelImportance> = by_model
        .into_iter()
        .map(|(name, tables)| {
            let mean_abs: Vec<f64> =
                (0..d).map(|j| tables.iter().map(|t| t.mean_abs[j]).sum::<f64>() / tables.len() as f64).collect();
            ModelImportance { model: name.to_string(), ranks: importance_ranks(&mean_abs), mean_abs }
        })
        .collect();

    let tables = inputs.len();
    let mut observed = vec![0.0; d];
    for t in inputs {
        for (j, r) in importance_ranks(&t.mean_abs).into_iter().enumerate() {
            observed[j] += r as f64;
        }
    }
    observed.iter_mut().for_each(|v| *v /= tables as f64);
    let hits: Vec<usize> = (0..n_perm)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            let mut sum = vec![0.0; d];
            let mut ranks: Vec<usize> = (1..=d).collect();
            for _ in 0..tables {
                ranks.shuffle(&mut rng);
                for (s, &r) in sum.iter_mut().zip(&ranks) {
                    *s += r as f64;
                }
            }
            sum.iter().map(|s| s / tables as f64).collect::<Vec<f64>>()
        })
        .fold(
            || vec![0usize; d],
            |mut acc, null| {
                for j in 0..d {
                    acc[j] += usize::from(null[j] <= observed[j] + 1e-12);
                }
                acc
            },
        )
        .reduce(
            || vec![0usize; d],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let dimensions = (0..d)
        .map(|j| DimensionSummary {
            dimension: j + 1,
            consensus: models.iter().filter(|m| m.ranks[j] <= CONSENSUS_TOP).count(),
            mean_rank: observed[j],
            p_value: (1 + hits[j]) as f64 / (1 + n_perm) as f64,
        })
        .collect();
    Ok(ImportanceTable { models, dimensions, n_tables: tables, n_perm })
}

/// One ablation fold result at `k` retained components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRecord {
    pub k: usize,
    pub record: EvalRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationFailure {
    pub key: CityYear,
    pub model: String,
    pub protocol: Protocol,
    pub fold: usize,
    pub k: usize,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct AblationConfig {
    pub k_grid: Vec<usize>,
    pub families: Vec<Family>,
    pub protocols: Vec<Protocol>,
    pub tasks: Vec<Task>,
    pub seed: u64,
    pub threshold: f64,
}

/// Folds of `table` under `protocol`; the random split seed depends only on
/// the run seed and the city-year.
pub fn protocol_splits(
    table: &SampleTable,
    key: CityYear,
    protocol: Protocol,
    seed: u64,
) -> Result<Vec<Split>, String> {
    match protocol {
        Protocol::Random => random_split(table.n_rows(), derive_seed(seed, &["split", &key.to_string()]))
            .map(|s| vec![s])
            .map_err(|e| e.to_string()),
        Protocol::Spatial => Ok(spatial_folds(table).folds),
    }
}

/// Same-city-year (S1) retraining on PCA scores for every k, model, and fold.
/// PCA is fit on each fold's training rows only.
pub fn ablation_run(
    corpus: &BTreeMap<CityYear, SampleTable>,
    cfg: &AblationConfig,
) -> (Vec<AblationRecord>, Vec<AblationFailure>) {
    struct Job<'a> {
        key: CityYear,
        table: &'a SampleTable,
        protocol: Protocol,
        split: Split,
    }
    let mut jobs = Vec::new();
    let mut failures = Vec::new();
    for (&key, table) in corpus {
        for &protocol in &cfg.protocols {
            match protocol_splits(table, key, protocol, cfg.seed) {
                Ok(splits) => jobs.extend(splits.into_iter().map(|split| Job { key, table, protocol, split })),
                Err(error) => {
                    failures.push(AblationFailure { key, model: String::new(), protocol, fold: 0, k: 0, error })
                }
            }
        }
    }
    let results: Vec<(Vec<AblationRecord>, Vec<AblationFailure>)> = jobs
        .par_iter()
        .map(|job| {
            let train_rows = job.table.select(&job.split.train);
            let test_rows = job.table.select(&job.split.test);
            let mut records = Vec::new();
            let mut failed = Vec::new();
            let fail = |family: &Family, k: usize, error: String| AblationFailure {
                key: job.key,
                model: family.name().to_string(),
                protocol: job.protocol,
                fold: job.split.fold,
                k,
                error,
            };
            let pca = match pca_fit(train_rows.features.view()) {
                Ok(p) => p,
                Err(e) => {
                    failed.extend(cfg.families.iter().map(|f| fail(f, 0, e.to_string())));
                    return (records, failed);
                }
            };
            for &k in &cfg.k_grid {
                let (xtr, xte) =
                    match (pca.transform(train_rows.features.view(), k), pca.transform(test_rows.features.view(), k)) {
                        (Ok(a), Ok(b)) => (a, b),
                        (Err(e), _) | (_, Err(e)) => {
                            failed.extend(cfg.families.iter().map(|f| fail(f, k, e.to_string())));
                            continue;
                        }
                    };
                for family in &cfg.families {
                    let seed = derive_seed(
                        cfg.seed,
                        &[
                            "ablation",
                            &job.key.to_string(),
                            family.name(),
                            &job.protocol.to_string(),
                            &job.split.fold.to_string(),
                            &k.to_string(),
                        ],
                    );
                    match score_fold(
                        family,
                        &cfg.tasks,
                        seed,
                        cfg.threshold,
                        xtr.view(),
                        &train_rows,
                        xte.view(),
                        &test_rows,
                    ) {
                        Ok(scores) => {
                            for &task in &cfg.tasks {
                                let record = EvalRecord {
                                    key: job.key,
                                    strategy: StrategyCode::S1,
                                    combo: ComboCode::C0,
                                    model: family.name().to_string(),
                                    task,
                                    protocol: job.protocol,
                                    fold: job.split.fold,
                                    seed,
                                    n_train: train_rows.n_rows(),
                                    n_test: test_rows.n_rows(),
                                    cls: if task == Task::Cls { scores.cls } else { None },
                                    reg: if task == Task::Reg { scores.reg } else { None },
                                    decomposition: if task == Task::Reg { scores.decomposition } else { None },
                                };
                                records.push(AblationRecord { k, record });
                            }
                        }
                        Err(e) => failed.push(fail(family, k, e.to_string())),
                    }
                }
            }
            (records, failed)
        })
        .collect();
    let mut records = Vec::new();
    for (r, f) in results {
        records.extend(r);
        failures.extend(f);
    }
    (records, failures)
}

/// One row of the ablation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub model: String,
    pub protocol: Protocol,
    pub metric: Metric,
    pub k: usize,
    pub n_samples: usize,
    /// Median over city-years of the fold-median metric.
    pub median: f64,
    /// median(k) / median(baseline) × 100.
    pub pct_of_full: Option<f64>,
    /// Median paired difference versus the baseline k.
    pub median_delta: f64,
    pub wilcoxon_p: f64,
}

type CurveKey = (String, Protocol);

/// Fold-median metric per (model, protocol) → k → city-year.
fn sample_medians(
    records: &[AblationRecord],
    metric: Metric,
) -> BTreeMap<CurveKey, BTreeMap<usize, BTreeMap<CityYear, f64>>> {
    let mut folds: BTreeMap<(CurveKey, usize, CityYear), Vec<f64>> = BTreeMap::new();
    for r in records {
        if let Some(v) = metric.value(&r.record).filter(|v| v.is_finite()) {
            folds.entry(((r.record.model.clone(), r.record.protocol), r.k, r.record.key)).or_default().push(v);
        }
    }
    let mut out: BTreeMap<CurveKey, BTreeMap<usize, BTreeMap<CityYear, f64>>> = BTreeMap::new();
    for ((group, k, key), values) in folds {
        out.entry(group).or_default().entry(k).or_default().insert(key, median(&values).expect("non-empty"));
    }
    out
}

/// Per-k medians, percent of the largest-k baseline, and paired Wilcoxon tests
/// against it.
pub fn ablation_table(records: &[AblationRecord], metric: Metric) -> Vec<AblationRow> {
    let mut rows = Vec::new();
    for ((model, protocol), by_k) in sample_medians(records, metric) {
        let Some((&base_k, base)) = by_k.iter().next_back() else { continue };
        let base_median = median(&base.values().copied().collect::<Vec<_>>()).unwrap_or(f64::NAN);
        for (&k, samples) in &by_k {
            let values: Vec<f64> = samples.values().copied().collect();
            let paired: Vec<(f64, f64)> =
                samples.iter().filter_map(|(key, &v)| base.get(key).map(|&b| (v, b))).collect();
            let (a, b): (Vec<f64>, Vec<f64>) = paired.iter().copied().unzip();
            let deltas: Vec<f64> = paired.iter().map(|(x, y)| x - y).collect();
            let med = median(&values).unwrap_or(f64::NAN);
            rows.push(AblationRow {
                model: model.clone(),
                protocol,
                metric,
                k,
                n_samples: values.len(),
                median: med,
                pct_of_full: (base_median > 0.0).then(|| 100.0 * med / base_median),
                median_delta: if k == base_k { 0.0 } else { median(&deltas).unwrap_or(0.0) },
                wilcoxon_p: wilcoxon_signed_rank(&a, &b).p_value,
            });
        }
    }
    rows
}

/// Saturation point of one curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationRow {
    /// City code, or "ALL" for the pooled curve.
    pub scope: String,
    pub model: String,
    pub protocol: Protocol,
    pub metric: Metric,
    pub k_star: Option<usize>,
    pub max: f64,
}

/// Saturation points per city (median over its years) and for the pooled
/// curve (median over all city-years).
pub fn saturation_table(records: &[AblationRecord], metric: Metric) -> Vec<SaturationRow> {
    let mut rows = Vec::new();
    for ((model, protocol), by_k) in sample_medians(records, metric) {
        let mut scopes: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
        for (&k, samples) in &by_k {
            let all: Vec<f64> = samples.values().copied().collect();
            scopes.entry("ALL".into()).or_default().push((k, median(&all).unwrap_or(f64::NAN)));
            let mut by_city: BTreeMap<CityCode, Vec<f64>> = BTreeMap::new();
            for (key, &v) in samples {
                by_city.entry(key.city).or_default().push(v);
            }
            for (city, v) in by_city {
                scopes.entry(city.to_string()).or_default().push((k, median(&v).expect("non-empty")));
            }
        }
        for (scope, curve) in scopes {
            rows.push(SaturationRow {
                scope,
                model: model.clone(),
                protocol,
                metric,
                k_star: saturation_point(&curve),
                max: curve.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max),
            });
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImportanceConfig {
    /// Training rows per city (sampled without replacement when larger).
    pub max_train_rows: usize,
    pub explain_rows: usize,
    pub orderings: usize,
    pub n_perm: usize,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        ImportanceConfig {
            max_train_rows: 20_000,
            explain_rows: 64,
            orderings: 200,
            n_perm: DEFAULT_IMPORTANCE_PERMUTATIONS,
        }
    }
}

fn sample_rows(n: usize, k: usize, seed: u64) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = rand::seq::index::sample(&mut rng, n, k).into_vec();
    rows.sort_unstable();
    rows
}

/// Per-city classifier attributions over all principal components of the
/// city's pooled years.
pub fn importance_run(
    corpus: &BTreeMap<CityYear, SampleTable>,
    families: &[Family],
    cfg: &ImportanceConfig,
    seed: u64,
) -> Result<Vec<ImportanceInput>, DimsError> {
    let mut by_city: BTreeMap<CityCode, Vec<SampleTable>> = BTreeMap::new();
    for (key, t) in corpus {
        by_city.entry(key.city).or_default().push(t.clone());
    }
    let jobs: Vec<(CityCode, &Family)> = by_city.keys().flat_map(|&c| families.iter().map(move |f| (c, f))).collect();
    let prepared: BTreeMap<CityCode, (Array2<f64>, SampleTable, Vec<usize>)> = by_city
        .iter()
        .map(|(&city, tables)| {
            let pooled = SampleTable::concat(tables);
            let rows = sample_rows(
                pooled.n_rows(),
                cfg.max_train_rows,
                derive_seed(seed, &["importance-rows", city.as_str()]),
            );
            let table = pooled.select(&rows);
            let pca = pca_fit(table.features.view())?;
            let scores = pca.transform(table.features.view(), pca.dim())?;
            let explain = sample_rows(
                table.n_rows(),
                cfg.explain_rows,
                derive_seed(seed, &["importance-explain", city.as_str()]),
            );
            Ok((city, (scores, table, explain)))
        })
        .collect::<Result<_, DimsError>>()?;
    jobs.par_iter()
        .map(|&(city, family)| {
            let (scores, table, explain) = &prepared[&city];
            let y: Vec<f64> = table.y_cls.iter().map(|&v| f64::from(v)).collect();
            let model_seed = derive_seed(seed, &["importance", city.as_str(), family.name()]);
            let model = train(&ModelSpec::new(Task::Cls, family.clone(), model_seed), scores.view(), &y)?;
            let x = scores.select(Axis(0), explain);
            let phi = attribute(&model, scores.view(), x.view(), cfg.orderings, model_seed)?;
            Ok(ImportanceInput { model: family.name().to_string(), city, mean_abs: mean_abs(&phi) })
        })
        .collect()
}
