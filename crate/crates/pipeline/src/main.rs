use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use slumscope::commands;
use slumscope::manifest::{ManifestError, RunManifest};
use slumscope::synth::SyntheticWorldSpec;

const EXIT_MANIFEST: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(name = "slumscope", version, about = "Slum mapping experiments on satellite embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Overrides the manifest (or world spec) seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the manifest's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct WithManifest {
    /// Run manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world as a dataset directory.
    Synth {
        /// World spec (JSON); defaults apply to missing fields.
        #[arg(long)]
        world: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Aggregate sub-pixel masks into count rasters.
    Labels {
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Execute the strategy × combo × model × protocol grid.
    Run(WithManifest),
    /// PCA ablation and dimension importance.
    Dims(WithManifest),
    /// Full-scene maps for every year.
    Infer(WithManifest),
    /// SSIM, Moran's I, LISA, and area error of full-scene maps.
    ValidateSpatial(WithManifest),
    /// Write report tables from existing results.
    Report(WithManifest),
}

fn init_pool(jobs: usize) -> Result<()> {
    if jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().context("starting worker pool")
}

fn load(args: &WithManifest) -> Result<(RunManifest, PathBuf)> {
    let mut m = RunManifest::read(&args.manifest)?;
    if let Some(seed) = args.common.seed {
        m.seed = seed;
    }
    let out =
        args.common.out.clone().or_else(|| m.out.clone()).ok_or_else(|| {
            ManifestError::Invalid("no output directory: pass --out or set `out` in the manifest".into())
        })?;
    Ok((m, out))
}

fn read_world(path: Option<&Path>) -> Result<SyntheticWorldSpec> {
    let Some(path) = path else { return Ok(SyntheticWorldSpec::default()) };
    let text =
        std::fs::read_to_string(path).map_err(|source| ManifestError::Io { path: path.to_path_buf(), source })?;
    let spec: SyntheticWorldSpec =
        serde_json::from_str(&text).map_err(|source| ManifestError::Parse { path: path.to_path_buf(), source })?;
    spec.validate().map_err(|e| ManifestError::Invalid(e.to_string()))?;
    Ok(spec)
}

fn execute(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Synth { world, common } => {
            init_pool(common.jobs)?;
            let mut spec = read_world(world.as_deref())?;
            if let Some(seed) = common.seed {
                spec.seed = seed;
            }
            let out = common.out.context("synth needs --out")?;
            let n = commands::synth(&spec, &out)?;
            log::info!("wrote {n} city-years to {}", out.display());
            Ok(0)
        }
        Command::Labels { data, common } => {
            init_pool(common.jobs)?;
            let stats = common.out.unwrap_or_else(|| data.clone()).join("label_stats.json");
            let hist = commands::labels(&data, &stats)?;
            log::info!("aggregated {} masks", hist.len());
            Ok(0)
        }
        Command::Run(args) => {
            init_pool(args.common.jobs)?;
            let (m, out) = load(&args)?;
            let outcome = commands::run_grid(&m, &out)?;
            log::info!(
                "{} cells ({} cached), {} records, {} failed",
                outcome.cells_total,
                outcome.cells_cached,
                outcome.records.len(),
                outcome.failures.len()
            );
            Ok(if outcome.failures.is_empty() { 0 } else { EXIT_PARTIAL })
        }
        Command::Dims(args) => {
            init_pool(args.common.jobs)?;
            let (m, out) = load(&args)?;
            let (records, failures, _) = commands::dims(&m, &out)?;
            log::info!("{} ablation records, {} failures", records.len(), failures.len());
            Ok(if failures.is_empty() { 0 } else { EXIT_PARTIAL })
        }
        Command::Infer(args) => {
            init_pool(args.common.jobs)?;
            let (m, out) = load(&args)?;
            let dirs = commands::infer(&m, &out)?;
            log::info!("wrote {} scene maps", dirs.len());
            Ok(0)
        }
        Command::ValidateSpatial(args) => {
            init_pool(args.common.jobs)?;
            let (m, out) = load(&args)?;
            let records = commands::validate_spatial(&m, &out)?;
            log::info!("validated {} city-years", records.len());
            Ok(0)
        }
        Command::Report(args) => {
            init_pool(args.common.jobs)?;
            let (m, out) = load(&args)?;
            let files = commands::report(&m, &out)?;
            log::info!("wrote {} report files", files.len());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.downcast_ref::<ManifestError>().is_some()) {
                ExitCode::from(EXIT_MANIFEST)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
