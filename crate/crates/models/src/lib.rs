//! Baseline learners behind one train/predict contract: L2 logistic and ridge
//! regression, histogram gradient boosting, random forests and a normalized MLP.

mod forest;
mod gbt;
mod linear;
mod mlp;
mod tree;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use forest::{ForestModel, ForestParams};
pub use gbt::{GbtModel, GbtParams};
pub use linear::{LinearModel, LinearParams};
pub use mlp::{MlpModel, MlpParams, PosWeight};
pub use slumscope_core::metrics::Task;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("need at least 2 training rows, got {0}")]
    TooFewRows(usize),
    #[error("{rows} feature rows but {targets} targets")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("classification targets must be 0 or 1 (row {row} is {value})")]
    LabelNotBinary { row: usize, value: f64 },
    #[error("classification training set holds a single class")]
    SingleClass,
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("model was trained for {trained} but asked to {asked}")]
    TaskMismatch { trained: Task, asked: &'static str },
    #[error("model expects {expected} features, got {got}")]
    InputDim { expected: usize, got: usize },
    #[error("invalid hyperparameter: {0}")]
    InvalidParam(String),
    #[error("linear system could not be solved")]
    Singular,
    #[error("model blob: {0}")]
    Blob(String),
}

/// 0.5·r² inside `delta`, linear beyond.
pub fn huber_loss(residual: f64, delta: f64) -> f64 {
    let a = residual.abs();
    if a <= delta {
        0.5 * residual * residual
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Learner family with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Family {
    Linear(LinearParams),
    HistGbt(GbtParams),
    RandomForest(ForestParams),
    Mlp(MlpParams),
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Linear(_) => "linear",
            Family::HistGbt(_) => "hist-gbt",
            Family::RandomForest(_) => "random-forest",
            Family::Mlp(_) => "mlp",
        }
    }

    /// The four families with default hyperparameters.
    pub fn defaults() -> [Family; 4] {
        [
            Family::Linear(LinearParams::default()),
            Family::HistGbt(GbtParams::default()),
            Family::RandomForest(ForestParams::default()),
            Family::Mlp(MlpParams::default()),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub task: Task,
    #[serde(flatten)]
    pub family: Family,
    #[serde(default)]
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(task: Task, family: Family, seed: u64) -> Self {
        ModelSpec { task, family, seed }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Fitted {
    Linear(LinearModel),
    Gbt(GbtModel),
    Forest(ForestModel),
    Mlp(MlpModel),
}

/// Immutable fitted predictor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedModel {
    spec: ModelSpec,
    input_dim: usize,
    fitted: Fitted,
}

fn check_inputs(x: ArrayView2<f64>, y: Option<&[f64]>, task: Option<Task>) -> Result<(), ModelError> {
    if let Some((row, col)) = x.indexed_iter().find(|(_, v)| !v.is_finite()).map(|(ix, _)| ix) {
        return Err(ModelError::NonFinite { row, col });
    }
    let Some(y) = y else { return Ok(()) };
    if y.len() != x.nrows() {
        return Err(ModelError::LengthMismatch { rows: x.nrows(), targets: y.len() });
    }
    if x.nrows() < 2 {
        return Err(ModelError::TooFewRows(x.nrows()));
    }
    if let Some(row) = y.iter().position(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite { row, col: x.ncols() });
    }
    if task == Some(Task::Cls) {
        if let Some(row) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(ModelError::LabelNotBinary { row, value: y[row] });
        }
        let pos = y.iter().filter(|&&v| v == 1.0).count();
        if pos == 0 || pos == y.len() {
            return Err(ModelError::SingleClass);
        }
    }
    Ok(())
}

/// Fits `spec` on rows `x` with targets `y` (0/1 for cls, sub-pixel counts for reg).
pub fn train(spec: &ModelSpec, x: ArrayView2<f64>, y: &[f64]) -> Result<TrainedModel, ModelError> {
    check_inputs(x, Some(y), Some(spec.task))?;
    let fitted = match &spec.family {
        Family::Linear(p) => Fitted::Linear(LinearModel::fit(p, spec.task, x, y)?),
        Family::HistGbt(p) => Fitted::Gbt(GbtModel::fit(p, spec.task, x, y)?),
        Family::RandomForest(p) => Fitted::Forest(ForestModel::fit(p, spec.task, spec.seed, x, y)?),
        Family::Mlp(p) => Fitted::Mlp(MlpModel::fit(p, spec.task, spec.seed, x, y)?),
    };
    Ok(TrainedModel { spec: spec.clone(), input_dim: x.ncols(), fitted })
}

const BLOB_MAGIC: &[u8; 8] = b"SLMSMDL\0";
const BLOB_VERSION: u32 = 1;

impl TrainedModel {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn task(&self) -> Task {
        self.spec.task
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Task-native output: probability for cls, density count for reg.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<f64>, ModelError> {
        if x.ncols() != self.input_dim {
            return Err(ModelError::InputDim { expected: self.input_dim, got: x.ncols() });
        }
        check_inputs(x, None, None)?;
        Ok(match &self.fitted {
            Fitted::Linear(m) => m.predict(x),
            Fitted::Gbt(m) => m.predict(x),
            Fitted::Forest(m) => m.predict(x),
            Fitted::Mlp(m) => m.predict(x),
        })
    }

    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Vec<f64>, ModelError> {
        if self.task() != Task::Cls {
            return Err(ModelError::TaskMismatch { trained: self.task(), asked: "predict probabilities" });
        }
        self.predict(x)
    }

    /// Raw, unclamped sub-pixel count predictions.
    pub fn predict_density(&self, x: ArrayView2<f64>) -> Result<Vec<f64>, ModelError> {
        if self.task() != Task::Reg {
            return Err(ModelError::TaskMismatch { trained: self.task(), asked: "predict densities" });
        }
        self.predict(x)
    }

    /// Coefficients and intercept in raw feature units (logit scale for cls).
    pub fn linear_coefficients(&self) -> Option<(Vec<f64>, f64)> {
        match &self.fitted {
            Fitted::Linear(m) => Some(m.raw_coefficients()),
            _ => None,
        }
    }

    /// Versioned binary blob: magic, little-endian u32 version, CBOR body.
    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let mut out = BLOB_MAGIC.to_vec();
        out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
        ciborium::into_writer(self, &mut out).map_err(|e| ModelError::Blob(e.to_string()))?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        if bytes.len() < 12 || &bytes[..8] != BLOB_MAGIC {
            return Err(ModelError::Blob("not a model blob".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != BLOB_VERSION {
            return Err(ModelError::Blob(format!("unsupported version {version}")));
        }
        ciborium::from_reader(&bytes[12..]).map_err(|e| ModelError::Blob(e.to_string()))
    }
}
