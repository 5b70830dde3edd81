//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any fails. Positional arguments filter criteria by name.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use slumscope::dataset::{corpus, Dataset};
use slumscope::dims::{
    ablation_run, linear_attribution, pca_fit, saturation_table, shapley_mc, AblationConfig, DimsError,
};
use slumscope::manifest::{DatasetSource, RunManifest};
use slumscope::report::usability_rows;
use slumscope::run::run;
use slumscope::synth::{synth_world, SyntheticWorldSpec};
use slumscope_core::features::ComboCode;
use slumscope_core::grid::{CityYear, Geometry, Grid};
use slumscope_core::labels::{aggregate, LabelPair, SubpixelMask};
use slumscope_core::metrics::{
    cls_metrics, decompose_r2, median, r2_score, wilcoxon_signed_rank, EvalRecord, Metric, Task, Usability,
};
use slumscope_core::spatial::{lisa, morans_i, queen_weights, ssim_binary, Quadrant};
use slumscope_core::splits::{
    assemble_strategy, audit_leakage, proportional_quotas, random_split, spatial_folds, Protocol, SampleTable, Split,
    StrategyCode,
};
use slumscope_models::{train, Family, ForestParams, GbtParams, LinearParams, MlpParams, ModelSpec, TrainedModel};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn key(city: &str, year: i32) -> CityYear {
    CityYear::new(city.parse().unwrap(), year)
}

fn geometry(width: usize, height: usize) -> Geometry {
    Geometry { width, height, cell_size_m: 10.0, key: key("TST", 2020) }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn label_aggregation() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = geometry(10, 10);
    let (mut mismatches, mut density_err) = (0usize, 0.0f64);
    for _ in 0..50 {
        let p: f64 = rng.random();
        let bits: Vec<bool> = (0..170 * 170).map(|_| rng.random::<f64>() < p).collect();
        let mask = SubpixelMask::from_bits(g, 17, 170, 170, bits.iter().copied());
        let labels = aggregate(&mask).map_err(|e| e.to_string())?;
        for cell in 0..g.n_cells() {
            let (r, c) = (cell / 10, cell % 10);
            let mut n = 0u16;
            for sr in r * 17..(r + 1) * 17 {
                for sc in c * 17..(c + 1) * 17 {
                    n += u16::from(bits[sr * 170 + sc]);
                }
            }
            mismatches += usize::from(labels.count()[cell] != n);
            density_err = density_err.max((labels.density(cell) - f64::from(n) / 289.0).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(mismatches == 0, || format!("{mismatches} mismatching cells"))?;
    ensure(density_err <= f64::EPSILON, || format!("density error {density_err:e}"))?;
    ensure(secs < 5.0, || format!("took {secs:.2}s"))?;
    Ok(format!("5000 cells exact, max density error {density_err:e}, {secs:.2}s"))
}

/// Moran's I from a dense row-standardized queen matrix.
fn dense_moran(width: usize, valid: &[usize], values: &[f64]) -> f64 {
    let n = valid.len();
    let mut w = vec![vec![0.0; n]; n];
    for (i, &a) in valid.iter().enumerate() {
        for (j, &b) in valid.iter().enumerate() {
            let (ra, ca, rb, cb) = (a / width, a % width, b / width, b % width);
            if i != j && ra.abs_diff(rb) <= 1 && ca.abs_diff(cb) <= 1 {
                w[i][j] = 1.0;
            }
        }
        let s: f64 = w[i].iter().sum();
        if s > 0.0 {
            w[i].iter_mut().for_each(|v| *v /= s);
        }
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let z: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let s0: f64 = w.iter().flatten().sum();
    let num: f64 = (0..n).map(|i| (0..n).map(|j| w[i][j] * z[i] * z[j]).sum::<f64>()).sum();
    let den: f64 = z.iter().map(|v| v * v).sum();
    n as f64 / s0 * num / den
}

fn moran_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut max_diff, mut worst_se) = (0.0f64, 0.0f64);
    for field in 0..100 {
        let (w, h) = (rng.random_range(3..=30), rng.random_range(3..=30));
        let trend = normal(&mut rng);
        let valid: Vec<usize> = (0..w * h).filter(|_| rng.random::<f64>() > 0.1).collect();
        if valid.len() < 3 {
            continue;
        }
        let values: Vec<f64> = valid.iter().map(|&c| trend * (c / w) as f64 + normal(&mut rng)).collect();
        let weights = queen_weights(&geometry(w, h), &valid);
        let sparse = morans_i(&values, &weights, 999, field).map_err(|e| e.to_string())?;
        max_diff = max_diff.max((sparse.i - dense_moran(w, &valid, &values)).abs());
        let se = sparse.perm_sd / 999f64.sqrt();
        worst_se = worst_se.max((sparse.perm_mean - sparse.expected).abs() / se);
    }
    ensure(max_diff <= 1e-9, || format!("sparse vs dense differ by {max_diff:e}"))?;
    ensure(worst_se <= 3.0, || format!("permutation mean {worst_se:.2} SE from -1/(n-1)"))?;
    Ok(format!("max |sparse - dense| {max_diff:.1e}, worst permutation-mean deviation {worst_se:.2} SE"))
}

fn lisa_clusters() -> Check {
    let (w, h, radius) = (60usize, 60usize, 8.0f64);
    let centres = [(15.0, 15.0), (44.0, 44.0)];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dist = |c: usize| {
        let (r, col) = ((c / w) as f64, (c % w) as f64);
        centres.iter().map(|(cr, cc)| ((r - cr).powi(2) + (col - cc).powi(2)).sqrt()).fold(f64::INFINITY, f64::min)
    };
    // Two levels with jitter small enough that every background value stays
    // below the global mean.
    let values: Vec<f64> =
        (0..w * h).map(|c| if dist(c) <= radius { 1.0 } else { 0.0 } + 0.1 * rng.random::<f64>()).collect();
    let cells: Vec<usize> = (0..w * h).collect();
    let weights = queen_weights(&geometry(w, h), &cells);
    let map = lisa(&values, &weights, 99, 7, 0.05).map_err(|e| e.to_string())?;
    let edge = |c: usize| c / w == 0 || c.is_multiple_of(w) || c / w == h - 1 || c % w == w - 1;
    let interior: Vec<usize> = cells.iter().copied().filter(|&c| dist(c) <= radius - 1.5).collect();
    let far: Vec<usize> = cells.iter().copied().filter(|&c| dist(c) >= 2.0 * radius && !edge(c)).collect();
    let background: Vec<usize> = cells.iter().copied().filter(|&c| dist(c) > radius).collect();
    let not_hh = interior.iter().filter(|&&c| map.quadrants[c] != Quadrant::HH).count();
    let far_bad = far.iter().filter(|&&c| !matches!(map.quadrants[c], Quadrant::LL | Quadrant::NS)).count();
    let bg_hh = background.iter().filter(|&&c| map.quadrants[c] == Quadrant::HH).count();
    ensure(not_hh == 0, || format!("{not_hh} of {} interior cells not HH", interior.len()))?;
    ensure(far_bad == 0, || format!("{far_bad} far-background cells neither LL nor NS"))?;
    ensure(bg_hh == 0, || format!("{bg_hh} HH cells in the background"))?;
    Ok(format!("{} interior HH, {} far-background LL/NS, 0 background HH", interior.len(), far.len()))
}

fn binary_grid(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Grid {
    let p: f64 = rng.random();
    Grid::new(geometry(w, h), -9999.0, (0..w * h).map(|_| f32::from(u8::from(rng.random::<f64>() < p))).collect())
        .unwrap()
}

fn ssim_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut max_asym = 0.0f64;
    for _ in 0..50 {
        let (w, h) = (rng.random_range(7..40), rng.random_range(7..40));
        let a = binary_grid(w, h, &mut rng);
        let b = binary_grid(w, h, &mut rng);
        let same = ssim_binary(&a, &a).map_err(|e| e.to_string())?;
        ensure(same == 1.0, || format!("identity gave {same}"))?;
        let ab = ssim_binary(&a, &b).map_err(|e| e.to_string())?;
        let ba = ssim_binary(&b, &a).map_err(|e| e.to_string())?;
        max_asym = max_asym.max((ab - ba).abs());
    }
    ensure(max_asym <= 1e-12, || format!("asymmetry {max_asym:e}"))?;
    let zeros = Grid::filled(geometry(20, 20), -9999.0, 0.0);
    let ones = Grid::filled(geometry(20, 20), -9999.0, 1.0);
    let c1 = 0.01f64 * 0.01;
    let got = ssim_binary(&zeros, &ones).map_err(|e| e.to_string())?;
    let want = c1 / (1.0 + c1);
    ensure((got - want).abs() <= 1e-7, || format!("zeros vs ones {got:e}, expected {want:e}"))?;
    Ok(format!("identity 1, asymmetry {max_asym:.1e}, zeros vs ones {got:.4e}"))
}

fn r2_decomposition() -> Check {
    let y = [0.0, 0.0, 10.0, 20.0];
    let d = decompose_r2(&y, &[2.0, 2.0, 12.0, 18.0], &[0, 1, 1, 1], &[0, 0, 1, 1]);
    // Total sum of squares 275; residual sums 16, 12, and 8.
    let (single, two, oracle) = (1.0 - 16.0 / 275.0, 4.0 / 275.0, 8.0 / 275.0);
    let got = (d.single_r2.unwrap(), d.two_stage_gain.unwrap(), d.oracle_gain.unwrap());
    for (name, g, w) in [("single", got.0, single), ("two-stage", got.1, two), ("oracle", got.2, oracle)] {
        ensure((g - w).abs() <= 1e-6, || format!("{name} {g} vs {w}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let n = rng.random_range(4..60);
        let y: Vec<f64> =
            (0..n).map(|_| if rng.random::<f64>() < 0.5 { 0.0 } else { rng.random_range(1.0..289.0) }).collect();
        let pred: Vec<f64> = y.iter().map(|v| v + 20.0 * normal(&mut rng)).collect();
        let y_cls: Vec<u8> = y.iter().map(|&v| u8::from(v > 0.0)).collect();
        let d = decompose_r2(&y, &pred, &y_cls, &y_cls);
        ensure(d.two_stage_gain == d.oracle_gain, || "two-stage differs from oracle with true labels".into())?;
    }
    let pos = decompose_r2(&y, &[3.0, -1.0, 15.0, 15.0], &[1, 1, 1, 1], &[0, 0, 1, 1]).pos_r2.unwrap();
    ensure(pos.abs() <= 1e-12, || format!("pos R² of the positive mean is {pos}"))?;
    Ok(format!(
        "single {:.4}, two-stage {:+.4}, oracle {:+.4}; equal gains with true labels; pos R² {pos}",
        got.0, got.1, got.2
    ))
}

fn random_table(k: CityYear, rng: &mut ChaCha8Rng) -> SampleTable {
    let (w, h) = (rng.random_range(6..40), rng.random_range(6..40));
    let g = Geometry { key: k, ..geometry(w, h) };
    let counts: Vec<u16> =
        (0..w * h).map(|_| if rng.random::<f64>() < 0.7 { 0 } else { rng.random_range(1..=289) }).collect();
    let labels = LabelPair::from_counts(g, counts).unwrap();
    let cells: Vec<usize> = (0..w * h).filter(|_| rng.random::<f64>() > 0.15).collect();
    let features = Array2::from_shape_simple_fn((cells.len(), 2), || rng.random::<f64>());
    SampleTable::from_labels(&g, features, cells, &labels).unwrap()
}

fn check_partition(t: &SampleTable) -> Result<(), String> {
    let folds = spatial_folds(t);
    let all: BTreeSet<usize> = (0..t.n_rows()).collect();
    let mut seen = BTreeSet::new();
    for f in &folds.folds {
        let block = f.test_block.ok_or("spatial fold without a block")?;
        let (train, test): (BTreeSet<usize>, BTreeSet<usize>) =
            (f.train.iter().copied().collect(), f.test.iter().copied().collect());
        ensure(train.is_disjoint(&test) && train.len() + test.len() == t.n_rows(), || {
            "fold is not a partition".into()
        })?;
        ensure(test.iter().all(|&r| t.blocks[r] == block), || "test row outside its block".into())?;
        ensure(test.iter().all(|r| seen.insert(*r)), || "row tested twice".into())?;
    }
    ensure(seen == all, || "test folds do not cover every row".into())?;
    let used: BTreeSet<u8> = t.blocks.iter().copied().collect();
    ensure(folds.skipped.iter().all(|b| !used.contains(b)), || "skipped a non-empty block".into())?;
    ensure(folds.folds.len() + folds.skipped.len() == 9, || "blocks missing".into())
}

/// Independent re-check of the leakage rules and source sets.
fn check_sources(
    strategy: StrategyCode,
    target: CityYear,
    split: &Split,
    sources: &[(CityYear, Vec<usize>)],
    corpus: &BTreeMap<CityYear, SampleTable>,
) -> Result<(), String> {
    let test: BTreeSet<usize> = split.test.iter().copied().collect();
    let expected: BTreeSet<CityYear> = corpus
        .keys()
        .copied()
        .filter(|k| match strategy {
            StrategyCode::S1 => *k == target,
            StrategyCode::S2 => k.city == target.city,
            StrategyCode::S3 => k.city != target.city && k.year == target.year,
            StrategyCode::S4 => *k != target,
        })
        .collect();
    let got: BTreeSet<CityYear> = sources.iter().map(|(k, _)| *k).collect();
    ensure(got == expected, || format!("{strategy} for {target} drew from {got:?}"))?;
    for (k, rows) in sources {
        if *k == target {
            ensure(rows.iter().all(|r| !test.contains(r)), || format!("{strategy} trains on target test rows"))?;
        }
        if let (Some(b), true) = (split.test_block, k.city == target.city) {
            ensure(rows.iter().all(|&r| corpus[k].blocks[r] != b), || {
                format!("{strategy} trains in the held-out block")
            })?;
        }
    }
    Ok(())
}

fn splits() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for i in 0..20 {
        check_partition(&random_table(key("TST", 2000 + i), &mut rng))?;
    }
    let corpus: BTreeMap<CityYear, SampleTable> = ["AAA", "BBB", "CCC"]
        .iter()
        .flat_map(|c| [2020, 2021].map(|y| key(c, y)))
        .map(|k| (k, random_table(k, &mut rng)))
        .collect();
    let mut audits = 0;
    for (&target, table) in &corpus {
        let mut splits = spatial_folds(table).folds;
        splits.push(random_split(table.n_rows(), 11).map_err(|e| e.to_string())?);
        for split in &splits {
            for strategy in StrategyCode::ALL {
                let set = assemble_strategy(strategy, target, split, &corpus, 500, 13).map_err(|e| e.to_string())?;
                audit_leakage(&set, target, split, &corpus).map_err(|e| format!("{strategy} {target}: {e}"))?;
                check_sources(strategy, target, split, &set.sources, &corpus)?;
                audits += 1;
            }
        }
    }
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let sizes: Vec<usize> = (0..rng.random_range(1..8)).map(|_| rng.random_range(0..5000)).collect();
        let total: usize = sizes.iter().sum();
        let budget = rng.random_range(0..=total.max(1));
        let quotas = proportional_quotas(&sizes, budget);
        ensure(quotas.iter().sum::<usize>() == budget.min(total), || "quotas do not sum to the budget".into())?;
        for (q, n) in quotas.iter().zip(&sizes) {
            let exact = if budget >= total { *n as f64 } else { budget as f64 * *n as f64 / total as f64 };
            worst = worst.max((*q as f64 - exact).abs());
            ensure(q <= n, || "quota exceeds its source".into())?;
        }
    }
    ensure(worst <= 1.0, || format!("quota off by {worst} rows"))?;
    Ok(format!("20 tables partitioned, {audits} strategy audits clean, quotas within {worst:.3} rows"))
}

fn uniform(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n, d), || rng.random::<f64>() * 2.0 - 1.0)
}

fn fit(task: Task, family: &Family, x: ArrayView2<f64>, y: &[f64]) -> Result<TrainedModel, String> {
    train(&ModelSpec::new(task, family.clone(), 3), x, y).map_err(|e| e.to_string())
}

fn f1(m: &TrainedModel, x: &Array2<f64>, y: &[f64]) -> Result<f64, String> {
    let labels: Vec<u8> = y.iter().map(|&v| v as u8).collect();
    Ok(cls_metrics(&labels, &m.predict_proba(x.view()).map_err(|e| e.to_string())?, 0.5).f1)
}

fn model_zoo() -> Check {
    let linear = Family::Linear(LinearParams::default());
    let rf = Family::RandomForest(ForestParams { n_trees: 40, ..Default::default() });
    let gbt = Family::HistGbt(GbtParams { max_iter: 60, ..Default::default() });
    let mlp = Family::Mlp(MlpParams { hidden: vec![16], max_epochs: 20, ..Default::default() });

    let w = [3.0, -1.0, 0.5, 8.0, 0.0];
    let target = |x: &Array2<f64>| -> Vec<f64> {
        x.rows().into_iter().map(|r| r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + 40.0).collect()
    };
    let (x, xt) = (uniform(500, 5, 1), uniform(200, 5, 2));
    let ridge = fit(Task::Reg, &linear, x.view(), &target(&x))?;
    let ridge_r2 =
        r2_score(&target(&xt), &ridge.predict_density(xt.view()).map_err(|e| e.to_string())?).unwrap_or(f64::NAN);
    ensure(ridge_r2 >= 0.999, || format!("ridge R² {ridge_r2}"))?;

    let score = |r: ndarray::ArrayView1<f64>| r[0] + 0.5 * r[1] - 0.2;
    let pool = uniform(900, 3, 3);
    let kept: Vec<usize> = (0..pool.nrows()).filter(|&i| score(pool.row(i)).abs() > 0.1).collect();
    let x = pool.select(ndarray::Axis(0), &kept);
    let label = |x: &Array2<f64>| -> Vec<f64> { x.rows().into_iter().map(|r| f64::from(score(r) > 0.0)).collect() };
    let xt = uniform(300, 3, 4);
    let sep_f1 = f1(&fit(Task::Cls, &linear, x.view(), &label(&x))?, &xt, &label(&xt))?;
    ensure(sep_f1 >= 0.99, || format!("separable linear F1 {sep_f1}"))?;

    let xor = |x: &Array2<f64>| -> Vec<f64> {
        x.rows().into_iter().map(|r| f64::from((r[0] > 0.0) != (r[1] > 0.0))).collect()
    };
    let (x, xt) = (uniform(1000, 2, 5), uniform(500, 2, 6));
    let mut xor_f1 = BTreeMap::new();
    for family in [&linear, &rf, &gbt] {
        xor_f1.insert(family.name(), f1(&fit(Task::Cls, family, x.view(), &xor(&x))?, &xt, &xor(&xt))?);
    }
    ensure(xor_f1["linear"] <= 0.7, || format!("linear XOR F1 {}", xor_f1["linear"]))?;
    ensure(xor_f1["random-forest"] >= 0.9 && xor_f1["hist-gbt"] >= 0.9, || format!("tree XOR F1 {xor_f1:?}"))?;

    let x = uniform(400, 4, 7);
    let y: Vec<f64> = x.rows().into_iter().map(|r| (r[0] * 100.0 + r[1] * r[2] * 50.0).max(0.0)).collect();
    let y_cls: Vec<f64> = y.iter().map(|&v| f64::from(v > 10.0)).collect();
    let xt = uniform(100, 4, 8);
    let (cube, xt_cube) = (x.mapv(|v| v * v * v + 2.0 * v), xt.mapv(|v| v * v * v + 2.0 * v));
    for family in [&rf, &gbt] {
        for (task, t) in [(Task::Cls, &y_cls), (Task::Reg, &y)] {
            let a = fit(task, family, x.view(), t)?.predict(xt.view()).map_err(|e| e.to_string())?;
            let b = fit(task, family, cube.view(), t)?.predict(xt_cube.view()).map_err(|e| e.to_string())?;
            ensure(a == b, || format!("{} {task} changed under a monotone transform", family.name()))?;
        }
    }

    for family in [&linear, &rf, &gbt, &mlp] {
        for (task, t) in [(Task::Cls, &y_cls), (Task::Reg, &y)] {
            let a = fit(task, family, x.view(), t)?;
            let b = fit(task, family, x.view(), t)?;
            let same = a.to_bytes().map_err(|e| e.to_string())? == b.to_bytes().map_err(|e| e.to_string())?
                && a.predict(xt.view()).map_err(|e| e.to_string())?
                    == b.predict(xt.view()).map_err(|e| e.to_string())?;
            ensure(same, || format!("{} {task} not reproducible", family.name()))?;
        }
    }
    Ok(format!(
        "ridge R² {ridge_r2:.6}, separable F1 {sep_f1:.3}, XOR F1 linear {:.3} rf {:.3} gbt {:.3}, monotone-invariant, bit-exact reruns",
        xor_f1["linear"], xor_f1["random-forest"], xor_f1["hist-gbt"]
    ))
}

/// Two-sided p-value by listing every sign assignment of the ranks.
fn enumerated_p(diffs: &[f64]) -> f64 {
    let d: Vec<f64> = diffs.iter().copied().filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return 1.0;
    }
    let ranks: Vec<f64> = d
        .iter()
        .map(|v| {
            let below = d.iter().filter(|u| u.abs() < v.abs()).count() as f64;
            let tied = d.iter().filter(|u| u.abs() == v.abs()).count() as f64;
            below + (tied + 1.0) / 2.0
        })
        .collect();
    let observed: f64 = ranks.iter().zip(&d).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum();
    let (mut low, mut high) = (0usize, 0usize);
    for signs in 0u32..1 << n {
        let w: f64 = (0..n).filter(|i| signs >> i & 1 == 1).map(|i| ranks[i]).sum();
        low += usize::from(w <= observed + 1e-9);
        high += usize::from(w >= observed - 1e-9);
    }
    let total = (1u64 << n) as f64;
    (2.0 * (low as f64 / total).min(high as f64 / total)).min(1.0)
}

fn wilcoxon() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(1..=12);
        // Rounding produces ties and zero differences.
        let a: Vec<f64> = (0..n).map(|_| (normal(&mut rng) * 3.0).round()).collect();
        let b: Vec<f64> = (0..n).map(|_| (normal(&mut rng) * 3.0).round()).collect();
        let r = wilcoxon_signed_rank(&a, &b);
        ensure(r.exact, || format!("n={n} did not use the exact distribution"))?;
        let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        worst = worst.max((r.p_value - enumerated_p(&diffs)).abs());
    }
    ensure(worst <= 1e-12, || format!("exact p differs from enumeration by {worst:e}"))?;
    let p5 = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 5]).p_value;
    ensure(p5 == 0.0625, || format!("n=5 all-positive p {p5}"))?;
    Ok(format!("200 samples match enumeration (max diff {worst:.1e}); n=5 all-positive p {p5}"))
}

fn attribution() -> Check {
    let x = Array2::from_shape_vec((1, 2), vec![3.0, 4.0]).unwrap();
    let phi = linear_attribution(&[2.0, -1.0], &[1.0, 2.0], x.view()).map_err(|e| e.to_string())?;
    ensure(phi.row(0).to_vec() == vec![4.0, -2.0], || format!("worked example gave {phi}"))?;
    let f = |r: &[f64]| 2.0 * r[0] - r[1] + 5.0;
    ensure(phi.sum() == f(&[3.0, 4.0]) - f(&[1.0, 2.0]), || "worked example is not efficient".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut worst_rel, mut worst_eff, mut worst_dummy) = (0.0f64, 0.0f64, 0.0f64);
    for trial in 0..10u64 {
        let d = 6;
        // The last feature is a dummy with zero weight.
        let mut w: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
        w[d - 1] = 0.0;
        let reference: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
        let rows = Array2::from_shape_simple_fn((8, d), || normal(&mut rng));
        let closed = linear_attribution(&w, &reference, rows.view()).map_err(|e| e.to_string())?;
        for i in 0..rows.nrows() {
            let fx: f64 = rows.row(i).iter().zip(&w).map(|(a, b)| a * b).sum();
            let fb: f64 = reference.iter().zip(&w).map(|(a, b)| a * b).sum();
            worst_eff = worst_eff.max((closed.row(i).sum() - (fx - fb)).abs());
        }
        let lin =
            |z: ArrayView2<f64>| -> Result<Vec<f64>, DimsError> { Ok(z.dot(&ndarray::ArrayView1::from(&w)).to_vec()) };
        let mc = shapley_mc(lin, &reference, rows.view(), 2000, trial).map_err(|e| e.to_string())?;
        for (a, b) in mc.iter().zip(closed.iter()) {
            worst_rel = worst_rel.max((a - b).abs() / b.abs().max(1e-9));
        }
        let nonlinear = |z: ArrayView2<f64>| -> Result<Vec<f64>, DimsError> {
            Ok(z.rows().into_iter().map(|r| r[0] * r[1] + r[2].sin() + (r[3] * r[4]).tanh()).collect())
        };
        let mc = shapley_mc(nonlinear, &reference, rows.view(), 2000, trial).map_err(|e| e.to_string())?;
        worst_dummy = worst_dummy.max(mc.column(d - 1).iter().fold(0.0, |m, v| m.max(v.abs())));
        worst_dummy = worst_dummy.max(closed.column(d - 1).iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    // Efficiency is exact up to the last bit of the two dot products.
    ensure(worst_eff <= 1e-12, || format!("closed form misses efficiency by {worst_eff:e}"))?;
    ensure(worst_rel <= 0.02, || format!("MC Shapley off by {:.2}%", worst_rel * 100.0))?;
    ensure(worst_dummy < 1e-3, || format!("dummy feature |φ| {worst_dummy:e}"))?;
    Ok(format!("φ = (4, -2); MC within {:.2e}% of closed form; dummy |φ| ≤ {worst_dummy:.1e}", worst_rel * 100.0))
}

fn pca_saturation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mix = Array2::from_shape_simple_fn((64, 64), || normal(&mut rng));
    let rows = Array2::from_shape_simple_fn((500, 64), || normal(&mut rng)).dot(&mix);
    let pca = pca_fit(rows.view()).map_err(|e| e.to_string())?;
    let back =
        pca.inverse(pca.transform(rows.view(), 64).map_err(|e| e.to_string())?.view()).map_err(|e| e.to_string())?;
    let rms = ((&back - &rows).mapv(|v| v * v).sum() / rows.len() as f64).sqrt();
    ensure(rms < 1e-6, || format!("round-trip RMS {rms:e}"))?;
    let evr = &pca.explained_variance_ratio;
    ensure(evr.windows(2).all(|p| p[0] >= p[1]), || "EVR increases".into())?;

    // Rank-8 signal under isotropic white noise, shared across cities.
    let world = SyntheticWorldSpec {
        drift: 0.0,
        cluster_style: 0.0,
        noise_sd: 0.5,
        noise_spatial_share: 0.0,
        ..Default::default()
    };
    let ds = Dataset::from_world(&synth_world(&world).map_err(|e| e.to_string())?);
    let corpus = corpus(&ds, ComboCode::C0).map_err(|e| e.to_string())?;
    let cfg = AblationConfig {
        k_grid: vec![2, 4, 6, 8, 16, 24, 32, 48, 64],
        families: vec![Family::Linear(LinearParams::default())],
        protocols: vec![Protocol::Random],
        tasks: vec![Task::Cls],
        seed: 0,
        threshold: 0.5,
    };
    let (records, failures) = ablation_run(&corpus, &cfg);
    ensure(failures.is_empty(), || format!("{} ablation failures", failures.len()))?;
    let table = saturation_table(&records, Metric::F1);
    let pooled = table.iter().find(|r| r.scope == "ALL").ok_or("no pooled saturation row")?;
    ensure(pooled.k_star == Some(8), || format!("k* = {:?} (max F1 {:.3})", pooled.k_star, pooled.max))?;
    Ok(format!("round-trip RMS {rms:.1e}, EVR non-increasing, k* = 8 at max F1 {:.3}", pooled.max))
}

fn fold_medians(records: &[EvalRecord]) -> Vec<(&EvalRecord, f64)> {
    let mut groups: BTreeMap<(CityYear, StrategyCode, String, Protocol), (&EvalRecord, Vec<f64>)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.task == Task::Cls && r.combo == ComboCode::C0) {
        let f1 = r.cls.as_ref().map(|c| c.f1).unwrap_or(f64::NAN);
        groups.entry((r.key, r.strategy, r.model.clone(), r.protocol)).or_insert((r, Vec::new())).1.push(f1);
    }
    groups.into_values().map(|(r, v)| (r, median(&v).unwrap_or(f64::NAN))).collect()
}

fn pattern_reproduction() -> Check {
    let m = RunManifest {
        combos: vec![ComboCode::C0, ComboCode::C5],
        ..RunManifest::synthetic(SyntheticWorldSpec::default())
    };
    let dataset = m.load_dataset().map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let outcome = run(&m, &dataset, dir.path()).map_err(|e| format!("{e:#}"))?;
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    ensure(outcome.failures.is_empty(), || format!("{} failed cells", outcome.failures.len()))?;
    let samples = fold_medians(&outcome.records);
    let med = |keep: &dyn Fn(&EvalRecord) -> bool| {
        let v: Vec<f64> = samples.iter().filter(|(r, _)| keep(r)).map(|(_, f)| *f).collect();
        median(&v).unwrap_or(f64::NAN)
    };
    let s2 = med(&|r| r.protocol == Protocol::Spatial && r.strategy == StrategyCode::S2);
    let s3 = med(&|r| r.protocol == Protocol::Spatial && r.strategy == StrategyCode::S3);
    let mut per_model = Vec::new();
    for family in &m.models {
        let name = family.name();
        let random = med(&|r| r.model == name && r.protocol == Protocol::Random);
        let spatial = med(&|r| r.model == name && r.protocol == Protocol::Spatial);
        per_model.push(format!("{name} {random:.3}/{spatial:.3}"));
        ensure(random >= spatial, || format!("{name}: random F1 {random:.3} < spatial F1 {spatial:.3}"))?;
    }
    ensure(s2 - s3 >= 0.05, || format!("spatial F1 S2 {s2:.3} vs S3 {s3:.3}"))?;
    ensure(minutes < 30.0, || format!("desk grid took {minutes:.1} min"))?;
    Ok(format!(
        "spatial F1 S2 {s2:.3} vs S3 {s3:.3}; random/spatial F1 {}; {} cells in {minutes:.1} min",
        per_model.join(", "),
        outcome.cells_total
    ))
}

fn report_fixtures() -> Check {
    let table: [(&str, f64, f64); 12] = [
        ("PAK", 0.794, 0.576),
        ("HTI", 0.773, 0.552),
        ("BFA", 0.715, 0.564),
        ("EGY", 0.687, 0.362),
        ("HON", 0.586, 0.4),
        ("IND", 0.508, 0.356),
        ("KEN", 0.47, 0.346),
        ("VEN", 0.429, 0.246),
        ("COL", 0.477, 0.107),
        ("BRA", 0.287, 0.218),
        ("ZAF", 0.296, 0.194),
        ("LKA", 0.156, -0.002),
    ];
    let pairs: Vec<(String, Option<f64>, Option<f64>)> =
        table.iter().map(|(c, f, r)| (c.to_string(), Some(*f), Some(*r))).collect();
    let rows = usability_rows(&pairs);
    let with = |u: Usability| -> BTreeSet<&str> {
        rows.iter().filter(|r| r.usability == Some(u)).map(|r| r.city.as_str()).collect()
    };
    let both = with(Usability::Both);
    let expected: BTreeSet<&str> = ["PAK", "HTI", "BFA", "EGY", "HON", "IND"].into();
    ensure(both == expected, || format!("both-usable {both:?}"))?;
    ensure(with(Usability::RegOnly).contains("KEN"), || "KEN is not reg-only".into())?;
    ensure(with(Usability::Neither).contains("LKA"), || "LKA is not neither".into())?;
    Ok(format!("both {both:?}, reg-only {:?}, neither {:?}", with(Usability::RegOnly), with(Usability::Neither)))
}

fn pipeline_run(manifest: &Path, out: &Path, jobs: &str) -> Result<(), String> {
    for cmd in ["run", "dims", "infer", "validate-spatial", "report"] {
        let status = Command::new(env!("CARGO_BIN_EXE_slumscope"))
            .args([cmd, "--manifest", manifest.to_str().unwrap(), "--out", out.to_str().unwrap(), "--jobs", jobs])
            .env("RUST_LOG", "error")
            .status()
            .map_err(|e| e.to_string())?;
        ensure(status.success(), || format!("{cmd} --jobs {jobs} exited with {status}"))?;
    }
    Ok(())
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let world =
        SyntheticWorldSpec { cities: 2, width: 30, height: 30, unlabeled_years: vec![2022], ..Default::default() };
    let mut m = RunManifest::synthetic(world.clone());
    m.dataset = DatasetSource::Synthetic(world);
    m.models = vec![
        Family::Linear(LinearParams::default()),
        Family::HistGbt(GbtParams { max_iter: 15, max_bins: 32, ..Default::default() }),
        Family::RandomForest(ForestParams { n_trees: 8, max_depth: 8, ..Default::default() }),
        Family::Mlp(MlpParams { hidden: vec![16], max_epochs: 5, ..Default::default() }),
    ];
    m.budget = 1000;
    m.k_grid = Some(vec![4, 16, 64]);
    m.importance.explain_rows = 8;
    m.importance.orderings = 20;
    m.importance.n_perm = 100;
    let path = dir.path().join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&m).unwrap()).map_err(|e| e.to_string())?;
    let (one, eight) = (dir.path().join("jobs1"), dir.path().join("jobs8"));
    pipeline_run(&path, &one, "1")?;
    pipeline_run(&path, &eight, "8")?;
    let mut names: Vec<String> = fs::read_dir(one.join("reports"))
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let csvs = names.iter().filter(|n| n.ends_with(".csv")).count();
    ensure(csvs >= 10, || format!("only {csvs} report CSVs"))?;
    for name in &names {
        let a = fs::read(one.join("reports").join(name)).map_err(|e| e.to_string())?;
        let b = fs::read(eight.join("reports").join(name)).map_err(|e| format!("{name}: {e}"))?;
        ensure(a == b, || format!("{name} differs between --jobs 1 and --jobs 8"))?;
    }
    Ok(format!("{} report files ({csvs} CSV) byte-identical", names.len()))
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Check); 13] = [
        ("label aggregation", label_aggregation),
        ("moran oracle", moran_oracle),
        ("lisa clusters", lisa_clusters),
        ("ssim properties", ssim_properties),
        ("r2 decomposition", r2_decomposition),
        ("splits", splits),
        ("model zoo", model_zoo),
        ("wilcoxon", wilcoxon),
        ("attribution", attribution),
        ("pca saturation", pca_saturation),
        ("pattern reproduction", pattern_reproduction),
        ("report fixtures", report_fixtures),
        ("determinism", determinism),
    ];
    let (mut ran, mut failed) = (0, 0);
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {:>2} PASS {name} [{secs:.1}s]: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name} [{secs:.1}s]: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
