//! Fit-and-score of one fold for the requested tasks.

use ndarray::ArrayView2;
use slumscope_core::metrics::{
    binarize, cls_metrics, decompose_r2, reg_metrics, ClsMetrics, Decomposition, RegMetrics, Task,
};
use slumscope_core::splits::SampleTable;
use slumscope_models::{train, Family, ModelError, ModelSpec};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FoldScores {
    pub cls: Option<ClsMetrics>,
    pub reg: Option<RegMetrics>,
    pub decomposition: Option<Decomposition>,
}

/// Trains `family` on the training rows and scores the test rows.
///
/// A regression request also trains the classifier: the R² decomposition
/// zeroes densities with its hard predictions.
#[allow(clippy::too_many_arguments)]
pub fn score_fold(
    family: &Family,
    tasks: &[Task],
    seed: u64,
    threshold: f64,
    x_train: ArrayView2<f64>,
    train_rows: &SampleTable,
    x_test: ArrayView2<f64>,
    test_rows: &SampleTable,
) -> Result<FoldScores, ModelError> {
    let want_reg = tasks.contains(&Task::Reg);
    let y_cls: Vec<f64> = train_rows.y_cls.iter().map(|&v| f64::from(v)).collect();
    let classifier = train(&ModelSpec::new(Task::Cls, family.clone(), seed), x_train, &y_cls)?;
    let proba = classifier.predict_proba(x_test)?;
    let mut scores = FoldScores::default();
    if tasks.contains(&Task::Cls) {
        scores.cls = Some(cls_metrics(&test_rows.y_cls, &proba, threshold));
    }
    if want_reg {
        let regressor = train(&ModelSpec::new(Task::Reg, family.clone(), seed), x_train, &train_rows.y_reg_f64())?;
        let pred = regressor.predict_density(x_test)?;
        let y = test_rows.y_reg_f64();
        scores.reg = Some(reg_metrics(&y, &pred));
        scores.decomposition = Some(decompose_r2(&y, &pred, &binarize(&proba, threshold), &test_rows.y_cls));
    }
    Ok(scores)
}
