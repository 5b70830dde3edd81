use std::fs;
use std::path::Path;

use slumscope::commands;
use slumscope::dataset::{corpus, Dataset};
use slumscope::infer::full_scene_infer;
use slumscope::manifest::RunManifest;
use slumscope::run::run;
use slumscope::synth::{synth_world, SyntheticWorldSpec};
use slumscope_core::features::ComboCode;
use slumscope_core::metrics::{r2_score, Task};
use slumscope_core::spatial::ssim_binary;
use slumscope_core::splits::{random_split, Protocol, StrategyCode};
use slumscope_models::{train, Family, LinearParams, ModelSpec};

fn linear() -> Family {
    Family::Linear(LinearParams::default())
}

fn small_world(cities: usize) -> SyntheticWorldSpec {
    SyntheticWorldSpec { cities, width: 24, height: 24, ..Default::default() }
}

fn manifest(
    world: SyntheticWorldSpec,
    strategies: &[StrategyCode],
    protocols: &[Protocol],
    tasks: &[Task],
) -> RunManifest {
    RunManifest {
        strategies: strategies.to_vec(),
        models: vec![linear()],
        protocols: protocols.to_vec(),
        tasks: tasks.to_vec(),
        budget: 800,
        ..RunManifest::synthetic(world)
    }
}

fn run_in(m: &RunManifest, out: &Path) -> slumscope::run::RunOutcome {
    let dataset = m.load_dataset().unwrap();
    run(m, &dataset, out).unwrap()
}

#[test]
fn minimal_grid_yields_one_record() {
    let world = SyntheticWorldSpec { years: vec![2020], ..small_world(1) };
    let m = manifest(world, &[StrategyCode::S1], &[Protocol::Random], &[Task::Cls]);
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_in(&m, dir.path());
    assert_eq!(outcome.cells_total, 1);
    assert_eq!(outcome.records.len(), 1);
    assert!(outcome.failures.is_empty());
    let r = &outcome.records[0];
    assert_eq!(
        (r.strategy, r.combo, r.model.as_str(), r.protocol),
        (StrategyCode::S1, ComboCode::C0, "linear", Protocol::Random)
    );
    assert!(r.cls.is_some() && r.reg.is_none());
}

#[test]
fn interrupted_run_resumes_to_identical_output() {
    let m = manifest(
        small_world(2),
        &[StrategyCode::S1, StrategyCode::S2, StrategyCode::S4],
        &[Protocol::Random, Protocol::Spatial],
        &[Task::Cls, Task::Reg],
    );
    let full = tempfile::tempdir().unwrap();
    let first = run_in(&m, full.path());
    assert_eq!(first.cells_cached, 0);
    commands::report(&m, full.path()).unwrap();

    // A rerun over a complete directory only reads the cache.
    let again = run_in(&m, full.path());
    assert_eq!(again.cells_cached, again.cells_total);
    assert_eq!(again.records, first.records);

    // Simulate an interruption: half the cells and the merged stream are gone.
    let partial = tempfile::tempdir().unwrap();
    fs::create_dir_all(partial.path().join("cells")).unwrap();
    let mut cached: Vec<_> = fs::read_dir(full.path().join("cells")).unwrap().map(|e| e.unwrap().path()).collect();
    cached.sort();
    for p in cached.iter().step_by(2) {
        fs::copy(p, partial.path().join("cells").join(p.file_name().unwrap())).unwrap();
    }
    let resumed = run_in(&m, partial.path());
    assert_eq!(resumed.cells_cached, cached.len().div_ceil(2));
    assert_eq!(resumed.records, first.records);
    commands::report(&m, partial.path()).unwrap();
    for name in ["records.csv", "strategy_comparison.csv", "decomposition.csv"] {
        let a = fs::read(full.path().join("reports").join(name)).unwrap();
        let b = fs::read(partial.path().join("reports").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn changed_manifest_invalidates_the_cache() {
    let m = manifest(small_world(1), &[StrategyCode::S1], &[Protocol::Random], &[Task::Cls]);
    let dir = tempfile::tempdir().unwrap();
    run_in(&m, dir.path());
    let m2 = RunManifest { threshold: 0.4, ..m };
    let second = run_in(&m2, dir.path());
    assert_eq!(second.cells_cached, 0);
}

#[test]
fn failing_cells_do_not_stop_the_grid() {
    // With one city there is no other city to draw S3 training rows from.
    let m = manifest(small_world(1), &[StrategyCode::S1, StrategyCode::S3], &[Protocol::Random], &[Task::Cls]);
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_in(&m, dir.path());
    assert_eq!(outcome.failures.len(), 2);
    assert!(outcome.failures.iter().all(|f| f.id.strategy == StrategyCode::S3));
    assert_eq!(outcome.records.len(), 2);
    assert!(outcome.records.iter().all(|r| r.strategy == StrategyCode::S1));
}

#[test]
fn noiseless_world_is_linearly_recoverable() {
    let spec = SyntheticWorldSpec {
        cities: 1,
        years: vec![2020],
        width: 40,
        height: 40,
        noise_sd: 0.0,
        drift: 0.0,
        cluster_style: 0.0,
        ..Default::default()
    };
    let ds = Dataset::from_world(&synth_world(&spec).unwrap());
    let corpus = corpus(&ds, ComboCode::C0).unwrap();
    let table = corpus.values().next().unwrap();
    let split = random_split(table.n_rows(), 3).unwrap();
    let (train_rows, test_rows) = (table.select(&split.train), table.select(&split.test));
    let model =
        train(&ModelSpec::new(Task::Reg, linear(), 0), train_rows.features.view(), &train_rows.y_reg_f64()).unwrap();
    let pred = model.predict_density(test_rows.features.view()).unwrap();
    let r2 = r2_score(&test_rows.y_reg_f64(), &pred).unwrap();
    assert!(r2 >= 0.99, "linear probe r2 {r2}");
}

#[test]
fn static_world_has_stable_consecutive_year_maps() {
    let spec = SyntheticWorldSpec { cities: 1, noise_year_share: 0.0, radius_growth: 0.0, ..Default::default() };
    let ds = Dataset::from_world(&synth_world(&spec).unwrap());
    let city = spec.city_codes()[0];
    let maps = full_scene_infer(&ds, city, &linear(), ComboCode::C0, &[2020, 2021], 5_000, 0.5, 1).unwrap();
    let ssim = ssim_binary(&maps[0].cls, &maps[1].cls).unwrap();
    assert!(ssim >= 0.99, "consecutive-year ssim {ssim}");
}

#[test]
fn report_on_an_empty_directory_has_headers_only() {
    let m = manifest(small_world(1), &[StrategyCode::S1], &[Protocol::Random], &[Task::Cls]);
    let dir = tempfile::tempdir().unwrap();
    let files = commands::report(&m, dir.path()).unwrap();
    for f in files.iter().filter(|f| f.extension().is_some_and(|e| e == "csv")) {
        let text = fs::read_to_string(f).unwrap();
        assert_eq!(text.lines().count(), 1, "{}", f.display());
    }
    let header = fs::read_to_string(dir.path().join("reports/decomposition.csv")).unwrap();
    assert_eq!(header.trim_end(), "city,n_yr,cls F1,single R²,two-stage gain,oracle gain,pos R²");
}

#[test]
fn world_seed_controls_the_dataset() {
    let a = synth_world(&small_world(1)).unwrap();
    let b = synth_world(&SyntheticWorldSpec { seed: 1, ..small_world(1) }).unwrap();
    assert_ne!(a.labels()[0].1.count(), b.labels()[0].1.count());
}
