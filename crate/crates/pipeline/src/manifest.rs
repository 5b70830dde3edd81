//! Run manifest: the experiment matrix and everything that parameterizes it.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use slumscope_core::features::ComboCode;
use slumscope_core::metrics::{Task, DEFAULT_THRESHOLD};
use slumscope_core::spatial::{DEFAULT_ALPHA, DEFAULT_MAP_PERMUTATIONS};
use slumscope_core::splits::{Protocol, StrategyCode};
use slumscope_models::{Family, ForestParams, GbtParams, LinearParams, MlpParams};
use thiserror::Error;

use crate::dataset::{Dataset, INDEX_FILE};
use crate::dims::ImportanceConfig;
use crate::seeds::sha256_hex;
use crate::synth::{synth_world, SyntheticWorldSpec};

pub const DEFAULT_BUDGET: usize = 480_000;
/// Training-row budget of the desk-scale preset.
pub const DESK_BUDGET: usize = 3_000;

/// Smaller models for desk-scale grids: fewer boosting rounds, bins and
/// trees, and a narrower, shorter-trained MLP.
pub fn desk_models() -> Vec<Family> {
    vec![
        Family::Linear(LinearParams::default()),
        Family::HistGbt(GbtParams { max_iter: 40, max_bins: 64, ..Default::default() }),
        Family::RandomForest(ForestParams { n_trees: 25, max_depth: 10, ..Default::default() }),
        Family::Mlp(MlpParams {
            hidden: vec![32, 16],
            batch_size: 256,
            max_epochs: 20,
            patience: 5,
            ..Default::default()
        }),
    ]
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("reading manifest {path}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing manifest {path}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("invalid manifest: {0}")]
    Invalid(String),
}

/// Where the scenes come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    /// Generated in memory from a world spec.
    Synthetic(SyntheticWorldSpec),
    /// A dataset directory with `index.json`; relative paths resolve against
    /// the manifest's directory.
    Path(PathBuf),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    /// Defaults to the first listed model.
    pub model: Option<Family>,
    /// Defaults to the first listed combo.
    pub combo: Option<ComboCode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpatialConfig {
    pub permutations: usize,
    pub alpha: f64,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        SpatialConfig { permutations: DEFAULT_MAP_PERMUTATIONS, alpha: DEFAULT_ALPHA }
    }
}

fn default_tasks() -> Vec<Task> {
    vec![Task::Cls, Task::Reg]
}

fn default_budget() -> usize {
    DEFAULT_BUDGET
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub dataset: DatasetSource,
    pub strategies: Vec<StrategyCode>,
    pub combos: Vec<ComboCode>,
    pub models: Vec<Family>,
    pub protocols: Vec<Protocol>,
    #[serde(default = "default_tasks")]
    pub tasks: Vec<Task>,
    #[serde(default)]
    pub k_grid: Option<Vec<usize>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Output directory; the `--out` flag takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub importance: ImportanceConfig,
    #[serde(default)]
    pub infer: InferConfig,
    #[serde(default)]
    pub spatial: SpatialConfig,
}

impl RunManifest {
    /// Desk-scale manifest over the given world: every strategy and protocol,
    /// the desk models, C0, and the desk budget.
    pub fn synthetic(world: SyntheticWorldSpec) -> Self {
        RunManifest {
            dataset: DatasetSource::Synthetic(world),
            strategies: StrategyCode::ALL.to_vec(),
            combos: vec![ComboCode::C0],
            models: desk_models(),
            protocols: vec![Protocol::Random, Protocol::Spatial],
            tasks: default_tasks(),
            k_grid: None,
            seed: 0,
            budget: DESK_BUDGET,
            threshold: DEFAULT_THRESHOLD,
            out: None,
            importance: ImportanceConfig::default(),
            infer: InferConfig::default(),
            spatial: SpatialConfig::default(),
        }
    }

    /// Reads and validates a manifest; relative dataset and output paths are
    /// resolved against the manifest's directory.
    pub fn read(path: &Path) -> Result<Self, ManifestError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ManifestError::Io { path: path.to_path_buf(), source })?;
        let mut m: RunManifest =
            serde_json::from_str(&text).map_err(|source| ManifestError::Parse { path: path.to_path_buf(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let DatasetSource::Path(p) = &mut m.dataset {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(out) = &mut m.out {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        let bad = |m: String| Err(ManifestError::Invalid(m));
        for (name, empty) in [
            ("strategies", self.strategies.is_empty()),
            ("combos", self.combos.is_empty()),
            ("models", self.models.is_empty()),
            ("protocols", self.protocols.is_empty()),
            ("tasks", self.tasks.is_empty()),
        ] {
            if empty {
                return bad(format!("{name} must list at least one entry"));
            }
        }
        fn distinct<T: Ord>(items: impl IntoIterator<Item = T>) -> bool {
            let v: Vec<T> = items.into_iter().collect();
            let n = v.len();
            v.into_iter().collect::<BTreeSet<T>>().len() == n
        }
        if !distinct(&self.strategies)
            || !distinct(&self.combos)
            || !distinct(&self.protocols)
            || !distinct(&self.tasks)
        {
            return bad("list entries must be distinct".into());
        }
        if !distinct(self.models.iter().map(|f| f.name())) {
            return bad("each model family may appear once".into());
        }
        if let Some(grid) = &self.k_grid {
            if grid.is_empty() || grid.iter().any(|&k| !(1..=64).contains(&k)) || !distinct(grid) {
                return bad("k_grid must hold distinct values in 1..=64".into());
            }
        }
        if self.budget == 0 {
            return bad("budget must be positive".into());
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)".into());
        }
        if self.importance.orderings == 0 || self.importance.explain_rows == 0 || self.importance.max_train_rows < 2 {
            return bad("importance settings must be positive".into());
        }
        if !(self.spatial.alpha > 0.0 && self.spatial.alpha < 1.0) {
            return bad("spatial.alpha must lie in (0, 1)".into());
        }
        match &self.dataset {
            DatasetSource::Synthetic(spec) => spec.validate().map_err(|e| ManifestError::Invalid(e.to_string())),
            DatasetSource::Path(p) if !p.join(INDEX_FILE).is_file() => {
                bad(format!("dataset {} has no {INDEX_FILE}", p.display()))
            }
            DatasetSource::Path(_) => Ok(()),
        }
    }

    /// Hash of everything that determines results (the output directory excluded).
    pub fn hash(&self) -> String {
        let mut m = self.clone();
        m.out = None;
        sha256_hex(&serde_json::to_vec(&m).expect("manifest serializes"))
    }

    /// Loads or generates the scenes; failures count as validation errors.
    pub fn load_dataset(&self) -> Result<Dataset, ManifestError> {
        let dataset = match &self.dataset {
            DatasetSource::Synthetic(spec) => {
                Dataset::from_world(&synth_world(spec).map_err(|e| ManifestError::Invalid(e.to_string()))?)
            }
            DatasetSource::Path(p) => Dataset::load(p).map_err(|e| ManifestError::Invalid(format!("{e:#}")))?,
        };
        if dataset.labeled_keys().is_empty() {
            return Err(ManifestError::Invalid("dataset has no labeled city-years".into()));
        }
        for &combo in &self.combos {
            dataset.check_combo(combo).map_err(|e| ManifestError::Invalid(e.to_string()))?;
        }
        Ok(dataset)
    }

    pub fn infer_family(&self) -> Family {
        self.infer.model.clone().unwrap_or_else(|| self.models[0].clone())
    }

    pub fn infer_combo(&self) -> ComboCode {
        self.infer.combo.unwrap_or(self.combos[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> serde_json::Value {
        serde_json::json!({
            "dataset": {"synthetic": {"cities": 1, "width": 24, "height": 24}},
            "strategies": ["S1"],
            "combos": ["C0"],
            "models": [{"family": "linear"}],
            "protocols": ["random"]
        })
    }

    fn parse(v: serde_json::Value) -> RunManifest {
        serde_json::from_value(v).unwrap()
    }

    #[test]
    fn defaults_are_filled_in() {
        let m = parse(minimal());
        m.validate().unwrap();
        assert_eq!(m.budget, 480_000);
        assert_eq!(m.threshold, 0.5);
        assert_eq!(m.tasks, vec![Task::Cls, Task::Reg]);
        assert_eq!(m.spatial.permutations, 99);
    }

    #[test]
    fn invalid_manifests_are_rejected() {
        for (field, value) in [
            ("strategies", serde_json::json!([])),
            ("models", serde_json::json!([{"family": "linear"}, {"family": "linear", "c": 2.0}])),
            ("k_grid", serde_json::json!([0, 8])),
            ("threshold", serde_json::json!(1.0)),
            ("budget", serde_json::json!(0)),
            ("dataset", serde_json::json!({"path": "/nonexistent/dir"})),
        ] {
            let mut v = minimal();
            v[field] = value;
            assert!(matches!(parse(v).validate(), Err(ManifestError::Invalid(_))), "{field}");
        }
        let mut v = minimal();
        v["unknown"] = serde_json::json!(1);
        assert!(serde_json::from_value::<RunManifest>(v).is_err());
    }

    #[test]
    fn hash_ignores_output_directory() {
        let a = parse(minimal());
        let mut b = a.clone();
        b.out = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
