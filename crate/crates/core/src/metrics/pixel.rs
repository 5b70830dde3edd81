//! Pixel-level classification and regression metrics, and the R² decomposition.

use serde::{Deserialize, Serialize};

/// Default binarization threshold for F1/IoU.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Positive-class confusion counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn from_labels(y: &[u8], pred: &[u8]) -> Self {
        assert_eq!(y.len(), pred.len(), "label/prediction length mismatch");
        let mut c = Confusion::default();
        for (&t, &p) in y.iter().zip(pred) {
            match (t > 0, p > 0) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    fn ratio(num: u64, den: u64) -> f64 {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    }

    /// Ratios with an empty denominator are reported as 0.
    pub fn precision(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        Self::ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn iou(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fp + self.fn_)
    }

    pub fn accuracy(&self) -> f64 {
        Self::ratio(self.tp + self.tn, self.tp + self.tn + self.fp + self.fn_)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClsMetrics {
    pub f1: f64,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    /// `None` when the reference labels hold a single class.
    pub auc_roc: Option<f64>,
    pub threshold: f64,
    pub n: usize,
}

pub fn binarize(proba: &[f64], threshold: f64) -> Vec<u8> {
    proba.iter().map(|&p| u8::from(p >= threshold)).collect()
}

/// Average ranks (1-based) with ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// ROC AUC as the Mann–Whitney rank statistic.
pub fn auc_roc(y: &[u8], score: &[f64]) -> Option<f64> {
    let n_pos = y.iter().filter(|&&v| v > 0).count();
    let n_neg = y.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let ranks = average_ranks(score);
    let pos_rank_sum: f64 = ranks.iter().zip(y).filter(|(_, &v)| v > 0).map(|(r, _)| r).sum();
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

pub fn cls_metrics(y: &[u8], proba: &[f64], threshold: f64) -> ClsMetrics {
    let c = Confusion::from_labels(y, &binarize(proba, threshold));
    ClsMetrics {
        f1: c.f1(),
        iou: c.iou(),
        precision: c.precision(),
        recall: c.recall(),
        accuracy: c.accuracy(),
        auc_roc: auc_roc(y, proba),
        threshold,
        n: y.len(),
    }
}

/// Targets whose variance per row falls below this are flagged unstable.
pub const R2_UNSTABLE_VARIANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegMetrics {
    /// `None` when the target has zero variance.
    pub r2: Option<f64>,
    pub r2_unstable: bool,
    pub mae: f64,
    pub rmse: f64,
    /// Percent error over rows with y > 0; `None` if there are none.
    pub mape_pos: Option<f64>,
    pub n: usize,
}

pub fn r2_score(y: &[f64], pred: &[f64]) -> Option<f64> {
    assert_eq!(y.len(), pred.len(), "target/prediction length mismatch");
    if y.is_empty() {
        return None;
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return None;
    }
    let ss_res: f64 = y.iter().zip(pred).map(|(t, p)| (t - p).powi(2)).sum();
    Some(1.0 - ss_res / ss_tot)
}

pub fn reg_metrics(y: &[f64], pred: &[f64]) -> RegMetrics {
    assert_eq!(y.len(), pred.len(), "target/prediction length mismatch");
    let n = y.len();
    let nf = n.max(1) as f64;
    let mae = y.iter().zip(pred).map(|(t, p)| (t - p).abs()).sum::<f64>() / nf;
    let rmse = (y.iter().zip(pred).map(|(t, p)| (t - p).powi(2)).sum::<f64>() / nf).sqrt();
    let pos: Vec<f64> = y.iter().zip(pred).filter(|(&t, _)| t > 0.0).map(|(t, p)| ((t - p) / t).abs()).collect();
    let mape_pos = (!pos.is_empty()).then(|| 100.0 * pos.iter().sum::<f64>() / pos.len() as f64);
    let mean = y.iter().sum::<f64>() / nf;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
    RegMetrics { r2: r2_score(y, pred), r2_unstable: var < R2_UNSTABLE_VARIANCE, mae, rmse, mape_pos, n }
}

/// R² diagnostics separating zero/non-zero discrimination from density fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub single_r2: Option<f64>,
    /// R² after zeroing rows the classifier predicts negative, minus single R².
    pub two_stage_gain: Option<f64>,
    /// Same with the true classification labels.
    pub oracle_gain: Option<f64>,
    /// R² over rows with y > 0; `None` with fewer than 2 positives or no spread.
    pub pos_r2: Option<f64>,
}

fn zeroed(pred: &[f64], keep: &[u8]) -> Vec<f64> {
    pred.iter().zip(keep).map(|(&p, &k)| if k > 0 { p } else { 0.0 }).collect()
}

pub fn decompose_r2(y: &[f64], reg_pred: &[f64], cls_pred: &[u8], y_cls: &[u8]) -> Decomposition {
    assert!(
        y.len() == reg_pred.len() && y.len() == cls_pred.len() && y.len() == y_cls.len(),
        "decomposition inputs must be aligned"
    );
    let single = r2_score(y, reg_pred);
    let two_stage = r2_score(y, &zeroed(reg_pred, cls_pred));
    let oracle = r2_score(y, &zeroed(reg_pred, y_cls));
    let (pos_y, pos_pred): (Vec<f64>, Vec<f64>) =
        y.iter().zip(reg_pred).filter(|(&t, _)| t > 0.0).map(|(&t, &p)| (t, p)).unzip();
    let pos_r2 = if pos_y.len() >= 2 { r2_score(&pos_y, &pos_pred) } else { None };
    Decomposition {
        single_r2: single,
        two_stage_gain: single.zip(two_stage).map(|(s, t)| t - s),
        oracle_gain: single.zip(oracle).map(|(s, o)| o - s),
        pos_r2,
    }
}
