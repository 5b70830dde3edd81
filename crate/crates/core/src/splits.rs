//! Sample tables, the random and 3×3 spatial-block protocols, and training
//! corpora for the four data strategies.
//!
//! Row identity is `(city-year, cell)`; the leakage audit checks it directly.
//! Under the spatial protocol, rows of the held-out block are also withheld
//! from other years of the target city, because the block is a geographic
//! region and reappears in every year.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{CityYear, Geometry, N_BLOCKS};
use crate::labels::{LabelPair, SUBPIXELS_PER_CELL};

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("random split needs at least 5 rows, got {0}")]
    TooFewRows(usize),
    #[error("no sample table for {0}")]
    MissingSource(CityYear),
    #[error("strategy {strategy} has no source city-years for target {target}")]
    EmptySources { strategy: StrategyCode, target: CityYear },
    #[error("row arrays disagree in length")]
    RaggedTable,
    #[error("leakage: training row {key}/cell {cell} is in the target test fold")]
    Leakage { key: CityYear, cell: usize },
    #[error("leakage: training row {key}/cell {cell} lies in held-out block {block}")]
    BlockLeakage { key: CityYear, cell: usize, block: u8 },
    #[error("unknown {kind} {value:?}")]
    Unknown { kind: &'static str, value: String },
}

/// Flattened per-pixel records.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTable {
    pub features: Array2<f64>,
    pub keys: Vec<CityYear>,
    pub cells: Vec<usize>,
    pub y_cls: Vec<u8>,
    pub y_reg: Vec<u16>,
    pub blocks: Vec<u8>,
}

impl SampleTable {
    /// Rows for `cells` of one city-year, with labels and block ids.
    pub fn from_labels(
        geometry: &Geometry,
        features: Array2<f64>,
        cells: Vec<usize>,
        labels: &LabelPair,
    ) -> Result<Self, SplitError> {
        if features.nrows() != cells.len() {
            return Err(SplitError::RaggedTable);
        }
        let y_reg: Vec<u16> = cells.iter().map(|&c| labels.count()[c]).collect();
        debug_assert!(y_reg.iter().all(|&y| y <= SUBPIXELS_PER_CELL));
        Ok(SampleTable {
            features,
            keys: vec![geometry.key; cells.len()],
            y_cls: y_reg.iter().map(|&y| u8::from(y > 0)).collect(),
            blocks: cells.iter().map(|&c| geometry.block_of_cell(c).index()).collect(),
            cells,
            y_reg,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.cells.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn y_reg_f64(&self) -> Vec<f64> {
        self.y_reg.iter().map(|&y| y as f64).collect()
    }

    pub fn select(&self, rows: &[usize]) -> SampleTable {
        SampleTable {
            features: self.features.select(Axis(0), rows),
            keys: rows.iter().map(|&r| self.keys[r]).collect(),
            cells: rows.iter().map(|&r| self.cells[r]).collect(),
            y_cls: rows.iter().map(|&r| self.y_cls[r]).collect(),
            y_reg: rows.iter().map(|&r| self.y_reg[r]).collect(),
            blocks: rows.iter().map(|&r| self.blocks[r]).collect(),
        }
    }

    /// Stacks tables row-wise; all must share the feature width.
    pub fn concat(tables: &[SampleTable]) -> SampleTable {
        let width = tables.first().map_or(0, |t| t.n_features());
        let views: Vec<_> = tables.iter().map(|t| t.features.view()).collect();
        let features = if views.is_empty() {
            Array2::zeros((0, width))
        } else {
            ndarray::concatenate(Axis(0), &views).expect("equal feature widths")
        };
        SampleTable {
            features,
            keys: tables.iter().flat_map(|t| t.keys.iter().copied()).collect(),
            cells: tables.iter().flat_map(|t| t.cells.iter().copied()).collect(),
            y_cls: tables.iter().flat_map(|t| t.y_cls.iter().copied()).collect(),
            y_reg: tables.iter().flat_map(|t| t.y_reg.iter().copied()).collect(),
            blocks: tables.iter().flat_map(|t| t.blocks.iter().copied()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Random,
    Spatial,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Random => "random",
            Protocol::Spatial => "spatial",
        })
    }
}

impl FromStr for Protocol {
    type Err = SplitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(Protocol::Random),
            "spatial" => Ok(Protocol::Spatial),
            _ => Err(SplitError::Unknown { kind: "protocol", value: s.into() }),
        }
    }
}

/// Train/test partition of one table's rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub protocol: Protocol,
    pub fold: usize,
    /// Held-out block under the spatial protocol.
    pub test_block: Option<u8>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Number of training rows in a random split: round(0.8·n).
pub fn random_train_size(n: usize) -> usize {
    (4 * n + 2) / 5
}

/// Seeded uniform 80/20 split; row ids are returned sorted.
pub fn random_split(n_rows: usize, seed: u64) -> Result<Split, SplitError> {
    if n_rows < 5 {
        return Err(SplitError::TooFewRows(n_rows));
    }
    let mut rows: Vec<usize> = (0..n_rows).collect();
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = random_train_size(n_rows);
    let mut train = rows[..n_train].to_vec();
    let mut test = rows[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { protocol: Protocol::Random, fold: 0, test_block: None, train, test, seed })
}

/// The usable spatial folds plus the blocks that had no rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpatialFolds {
    pub folds: Vec<Split>,
    pub skipped: Vec<u8>,
}

/// Fold k holds out block k. Empty blocks are skipped rather than emitted.
pub fn spatial_folds(table: &SampleTable) -> SpatialFolds {
    let mut folds = Vec::new();
    let mut skipped = Vec::new();
    for block in 0..N_BLOCKS as u8 {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..table.n_rows()).partition(|&r| table.blocks[r] == block);
        if test.is_empty() {
            skipped.push(block);
            continue;
        }
        folds.push(Split {
            protocol: Protocol::Spatial,
            fold: block as usize,
            test_block: Some(block),
            train,
            test,
            seed: 0,
        });
    }
    SpatialFolds { folds, skipped }
}

/// Training-data strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StrategyCode {
    /// Target city, target year.
    S1,
    /// Target city, all years.
    S2,
    /// Other cities, target year.
    S3,
    /// Everything except the target city-year.
    S4,
}

impl StrategyCode {
    pub const ALL: [StrategyCode; 4] = [StrategyCode::S1, StrategyCode::S2, StrategyCode::S3, StrategyCode::S4];
}

impl fmt::Display for StrategyCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self)
    }
}

impl FromStr for StrategyCode {
    type Err = SplitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyCode::ALL
            .into_iter()
            .find(|c| c.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| SplitError::Unknown { kind: "strategy", value: s.into() })
    }
}

/// Training rows drawn from each source city-year.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub sources: Vec<(CityYear, Vec<usize>)>,
}

impl TrainingSet {
    pub fn n_rows(&self) -> usize {
        self.sources.iter().map(|(_, r)| r.len()).sum()
    }

    pub fn materialize(&self, corpus: &BTreeMap<CityYear, SampleTable>) -> SampleTable {
        let parts: Vec<SampleTable> = self.sources.iter().map(|(key, rows)| corpus[key].select(rows)).collect();
        SampleTable::concat(&parts)
    }
}

/// Largest-remainder apportionment of `budget` rows proportional to `sizes`.
/// Ties in the remainder go to the earlier source.
pub fn proportional_quotas(sizes: &[usize], budget: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    if budget >= total {
        return sizes.to_vec();
    }
    let (b, t) = (budget as u128, total as u128);
    let mut quotas: Vec<usize> = sizes.iter().map(|&n| (b * n as u128 / t) as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(b * sizes[i] as u128 % t));
    let leftover = budget - quotas.iter().sum::<usize>();
    for &i in order.iter().take(leftover) {
        quotas[i] += 1;
    }
    quotas
}

fn rows_outside_block(table: &SampleTable, block: Option<u8>) -> Vec<usize> {
    (0..table.n_rows()).filter(|&r| block != Some(table.blocks[r])).collect()
}

/// Builds the training corpus of `strategy` for `target` under `split`.
///
/// S1 uses the target's own training partition and ignores the budget. S2–S4
/// draw from their source city-years proportionally to source size so the
/// total is at most `budget`.
pub fn assemble_strategy(
    strategy: StrategyCode,
    target: CityYear,
    split: &Split,
    corpus: &BTreeMap<CityYear, SampleTable>,
    budget: usize,
    seed: u64,
) -> Result<TrainingSet, SplitError> {
    if !corpus.contains_key(&target) {
        return Err(SplitError::MissingSource(target));
    }
    let own = (target, split.train.clone());
    let mut pools: Vec<(CityYear, Vec<usize>)> = Vec::new();
    match strategy {
        StrategyCode::S1 => {
            return Ok(TrainingSet { sources: vec![own] });
        }
        StrategyCode::S2 => {
            pools.push(own);
            for (key, table) in corpus {
                if key.city == target.city && key.year != target.year {
                    pools.push((*key, rows_outside_block(table, split.test_block)));
                }
            }
        }
        StrategyCode::S3 => {
            for (key, table) in corpus {
                if key.city != target.city && key.year == target.year {
                    pools.push((*key, (0..table.n_rows()).collect()));
                }
            }
        }
        StrategyCode::S4 => {
            for (key, table) in corpus {
                if *key == target {
                    continue;
                }
                let rows = if key.city == target.city {
                    rows_outside_block(table, split.test_block)
                } else {
                    (0..table.n_rows()).collect()
                };
                pools.push((*key, rows));
            }
        }
    }
    pools.retain(|(_, rows)| !rows.is_empty());
    if pools.is_empty() {
        return Err(SplitError::EmptySources { strategy, target });
    }
    let sizes: Vec<usize> = pools.iter().map(|(_, r)| r.len()).collect();
    let quotas = proportional_quotas(&sizes, budget);
    let sources = pools
        .into_iter()
        .zip(quotas)
        .enumerate()
        .map(|(i, ((key, rows), quota))| {
            if quota == rows.len() {
                return (key, rows);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            let mut chosen: Vec<usize> = rows.choose_multiple(&mut rng, quota).copied().collect();
            chosen.sort_unstable();
            (key, chosen)
        })
        .collect();
    Ok(TrainingSet { sources })
}

/// Verifies no training row is a target test row and, under the spatial
/// protocol, that no training row of the target city lies in the held-out block.
pub fn audit_leakage(
    training: &TrainingSet,
    target: CityYear,
    split: &Split,
    corpus: &BTreeMap<CityYear, SampleTable>,
) -> Result<(), SplitError> {
    let target_table = corpus.get(&target).ok_or(SplitError::MissingSource(target))?;
    let test_cells: BTreeSet<usize> = split.test.iter().map(|&r| target_table.cells[r]).collect();
    for (key, rows) in &training.sources {
        let table = corpus.get(key).ok_or(SplitError::MissingSource(*key))?;
        for &r in rows {
            let cell = table.cells[r];
            if *key == target && test_cells.contains(&cell) {
                return Err(SplitError::Leakage { key: *key, cell });
            }
            if let Some(block) = split.test_block {
                if key.city == target.city && table.blocks[r] == block {
                    return Err(SplitError::BlockLeakage { key: *key, cell, block });
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{CityCode, DEFAULT_CELL_SIZE_M};
    use proptest::prelude::*;

    fn key(city: &str, year: i32) -> CityYear {
        CityYear::new(city.parse::<CityCode>().unwrap(), year)
    }

    /// Full w×h city-year table with a single constant feature.
    fn table(k: CityYear, w: usize, h: usize) -> SampleTable {
        let g = Geometry { width: w, height: h, cell_size_m: DEFAULT_CELL_SIZE_M, key: k };
        let cells: Vec<usize> = (0..w * h).collect();
        let labels = LabelPair::from_counts(g, cells.iter().map(|&c| (c % 290) as u16).collect()).unwrap();
        SampleTable::from_labels(&g, Array2::zeros((w * h, 1)), cells, &labels).unwrap()
    }

    #[test]
    fn random_split_examples() {
        let s = random_split(100, 7).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (80, 20));
        assert_eq!(random_split(100, 7).unwrap(), s);
        assert_ne!(random_split(100, 8).unwrap(), s);
        assert_eq!(random_split(101, 7).unwrap().train.len(), 81);
        assert_eq!(random_split(4, 7), Err(SplitError::TooFewRows(4)));
    }

    #[test]
    fn spatial_fold_examples() {
        let t = table(key("AAA", 2020), 90, 90);
        let f = spatial_folds(&t);
        assert_eq!(f.folds.len(), 9);
        assert!(f.folds.iter().all(|s| s.test.len() == 900));

        let sub: Vec<usize> = (0..t.n_rows()).filter(|&r| t.blocks[r] <= 1).collect();
        let f = spatial_folds(&t.select(&sub));
        assert_eq!(f.folds.len(), 2);
        assert_eq!(f.skipped, vec![2, 3, 4, 5, 6, 7, 8]);
    }

    #[test]
    fn quota_examples() {
        assert_eq!(proportional_quotas(&[300_000, 700_000], 480_000), vec![144_000, 336_000]);
        assert_eq!(proportional_quotas(&[10, 20], 100), vec![10, 20]);
        assert_eq!(proportional_quotas(&[1, 1, 1], 2), vec![1, 1, 0]);
    }

    fn corpus() -> BTreeMap<CityYear, SampleTable> {
        [key("PAK", 2021), key("PAK", 2022), key("HTI", 2022), key("HTI", 2021), key("EGY", 2020)]
            .into_iter()
            .map(|k| (k, table(k, 12, 9)))
            .collect()
    }

    #[test]
    fn strategy_sources() {
        let c = corpus();
        let target = key("PAK", 2022);
        let split = random_split(c[&target].n_rows(), 1).unwrap();

        let s1 = assemble_strategy(StrategyCode::S1, target, &split, &c, 5, 0).unwrap();
        assert_eq!(s1.sources, vec![(target, split.train.clone())]);

        let s4 = assemble_strategy(StrategyCode::S4, target, &split, &c, 1_000_000, 0).unwrap();
        let keys: Vec<CityYear> = s4.sources.iter().map(|(k, _)| *k).collect();
        assert!(!keys.contains(&target));
        assert!(keys.contains(&key("PAK", 2021)) && keys.contains(&key("HTI", 2022)));

        let s3 = assemble_strategy(StrategyCode::S3, target, &split, &c, 1_000_000, 0).unwrap();
        assert_eq!(s3.sources.iter().map(|(k, _)| *k).collect::<Vec<_>>(), vec![key("HTI", 2022)]);
        let lone = key("EGY", 2020);
        let split = random_split(c[&lone].n_rows(), 1).unwrap();
        assert_eq!(
            assemble_strategy(StrategyCode::S3, lone, &split, &c, 10, 0),
            Err(SplitError::EmptySources { strategy: StrategyCode::S3, target: lone })
        );
    }

    #[test]
    fn spatial_s2_excludes_block_in_other_years() {
        let c = corpus();
        let target = key("PAK", 2022);
        let folds = spatial_folds(&c[&target]);
        for split in &folds.folds {
            let ts = assemble_strategy(StrategyCode::S2, target, split, &c, 1_000_000, 3).unwrap();
            audit_leakage(&ts, target, split, &c).unwrap();
            let other = &ts.sources.iter().find(|(k, _)| k.year == 2021).unwrap().1;
            assert!(other.iter().all(|&r| Some(c[&key("PAK", 2021)].blocks[r]) != split.test_block));
        }
    }

    #[test]
    fn audit_catches_planted_leak() {
        let c = corpus();
        let target = key("PAK", 2022);
        let split = random_split(c[&target].n_rows(), 1).unwrap();
        let leaky = TrainingSet { sources: vec![(target, vec![split.test[0]])] };
        assert!(matches!(audit_leakage(&leaky, target, &split, &c), Err(SplitError::Leakage { .. })));
        let folds = spatial_folds(&c[&target]);
        let f = &folds.folds[0];
        let other = key("PAK", 2021);
        let in_block: Vec<usize> = (0..c[&other].n_rows()).filter(|&r| c[&other].blocks[r] == 0).take(1).collect();
        let leaky = TrainingSet { sources: vec![(other, in_block)] };
        assert!(matches!(audit_leakage(&leaky, target, f, &c), Err(SplitError::BlockLeakage { .. })));
    }

    #[test]
    fn split_json_round_trip() {
        let s = random_split(12, 5).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("\"protocol\":\"random\""));
        assert_eq!(serde_json::from_str::<Split>(&json).unwrap(), s);
    }

    proptest! {
        #[test]
        fn quotas_are_within_one_row(sizes in proptest::collection::vec(1usize..5000, 1..8), frac in 0.0f64..1.0) {
            let total: usize = sizes.iter().sum();
            let budget = (total as f64 * frac) as usize;
            let q = proportional_quotas(&sizes, budget);
            prop_assert_eq!(q.iter().sum::<usize>(), budget);
            for (qi, ni) in q.iter().zip(&sizes) {
                let exact = budget as f64 * *ni as f64 / total as f64;
                prop_assert!((*qi as f64 - exact).abs() < 1.0 + 1e-9);
                prop_assert!(qi <= ni);
            }
        }

        #[test]
        fn spatial_folds_partition_rows(w in 1usize..25, h in 1usize..25, keep in proptest::collection::vec(any::<bool>(), 625)) {
            let t = table(key("AAA", 2020), w, h);
            let rows: Vec<usize> = (0..t.n_rows()).filter(|&r| keep[r]).collect();
            let t = t.select(&rows);
            let f = spatial_folds(&t);
            let mut seen = vec![0usize; t.n_rows()];
            for s in &f.folds {
                for &r in &s.test { seen[r] += 1; }
                prop_assert_eq!(s.train.len() + s.test.len(), t.n_rows());
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
            prop_assert_eq!(f.folds.len() + f.skipped.len(), 9);
        }
    }
}
