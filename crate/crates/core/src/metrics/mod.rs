//! Evaluation metrics, fold-median aggregation, rankings, and significance tests.

mod aggregate;
mod pixel;
mod wilcoxon;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::features::ComboCode;
use crate::grid::CityYear;
use crate::splits::{Protocol, StrategyCode};

pub use aggregate::{
    fold_median, marginal_gains, median, population_sd, rank_models, summarize, usability_gate, GainRow, ModelRank,
    SampleId, SampleSummary, Usability, CLS_GATE, REG_GATE,
};
pub use pixel::{
    auc_roc, average_ranks, binarize, cls_metrics, decompose_r2, r2_score, reg_metrics, ClsMetrics, Confusion,
    Decomposition, RegMetrics, DEFAULT_THRESHOLD, R2_UNSTABLE_VARIANCE,
};
pub use wilcoxon::{wilcoxon_signed_rank, WilcoxonResult, EXACT_MAX_N};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Cls,
    Reg,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Cls => "cls",
            Task::Reg => "reg",
        })
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cls" => Ok(Task::Cls),
            "reg" => Ok(Task::Reg),
            _ => Err(format!("unknown task {s:?}")),
        }
    }
}

/// One completed fold of one evaluation cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub key: CityYear,
    pub strategy: StrategyCode,
    pub combo: ComboCode,
    pub model: String,
    pub task: Task,
    pub protocol: Protocol,
    pub fold: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cls: Option<ClsMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reg: Option<RegMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decomposition: Option<Decomposition>,
}

impl EvalRecord {
    pub fn sample_id(&self) -> SampleId {
        SampleId {
            key: self.key,
            strategy: self.strategy,
            combo: self.combo,
            model: self.model.clone(),
            task: self.task,
            protocol: self.protocol,
        }
    }
}

/// A scalar readable off an [`EvalRecord`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    F1,
    Iou,
    Precision,
    Recall,
    Accuracy,
    AucRoc,
    R2,
    Mae,
    Rmse,
    MapePos,
    SingleR2,
    TwoStageGain,
    OracleGain,
    PosR2,
}

impl Metric {
    pub fn value(self, r: &EvalRecord) -> Option<f64> {
        use Metric::*;
        match self {
            F1 => r.cls.map(|c| c.f1),
            Iou => r.cls.map(|c| c.iou),
            Precision => r.cls.map(|c| c.precision),
            Recall => r.cls.map(|c| c.recall),
            Accuracy => r.cls.map(|c| c.accuracy),
            AucRoc => r.cls.and_then(|c| c.auc_roc),
            R2 => r.reg.and_then(|m| m.r2),
            Mae => r.reg.map(|m| m.mae),
            Rmse => r.reg.map(|m| m.rmse),
            MapePos => r.reg.and_then(|m| m.mape_pos),
            SingleR2 => r.decomposition.and_then(|d| d.single_r2),
            TwoStageGain => r.decomposition.and_then(|d| d.two_stage_gain),
            OracleGain => r.decomposition.and_then(|d| d.oracle_gain),
            PosR2 => r.decomposition.and_then(|d| d.pos_r2),
        }
    }

    pub fn higher_is_better(self) -> bool {
        !matches!(self, Metric::Mae | Metric::Rmse | Metric::MapePos)
    }
}
