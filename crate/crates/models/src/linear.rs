//! L2-regularized logistic regression (Newton with backtracking) and ridge
//! regression (closed form on centred inputs). Inputs are robust-scaled with
//! statistics fitted on the training rows.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};
use slumscope_core::features::RobustScaleParams;

use crate::{ModelError, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearParams {
    /// Inverse L2 strength for the classifier.
    pub c: f64,
    /// L2 strength for ridge regression.
    pub alpha: f64,
    pub max_iter: usize,
    /// Convergence threshold on the max-abs gradient of the mean loss.
    pub tol: f64,
}

impl Default for LinearParams {
    fn default() -> Self {
        LinearParams { c: 1.0, alpha: 1.0, max_iter: 1000, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearModel {
    task: Task,
    scaler: RobustScaleParams,
    coef: Vec<f64>,
    intercept: f64,
    n_iter: usize,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(z)) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl LinearModel {
    pub(crate) fn fit(p: &LinearParams, task: Task, x: ArrayView2<f64>, y: &[f64]) -> Result<Self, ModelError> {
        let scaler = RobustScaleParams::fit(x).map_err(|_| ModelError::TooFewRows(x.nrows()))?;
        let xs = scaler.apply(x).expect("fitted on the same width");
        let (n, d) = xs.dim();
        let xm = DMatrix::from_fn(n, d, |i, j| xs[[i, j]]);
        let (coef, intercept, n_iter) = match task {
            Task::Reg => {
                if p.alpha < 0.0 {
                    return Err(ModelError::InvalidParam(format!("alpha {} < 0", p.alpha)));
                }
                let (c, b) = ridge(&xm, y, p.alpha)?;
                (c, b, 0)
            }
            Task::Cls => {
                if p.c <= 0.0 {
                    return Err(ModelError::InvalidParam(format!("C {} <= 0", p.c)));
                }
                logistic(&xm, y, p)?
            }
        };
        Ok(LinearModel { task, scaler, coef, intercept, n_iter })
    }

    pub fn n_iter(&self) -> usize {
        self.n_iter
    }

    fn decision(&self, x: ArrayView2<f64>) -> Vec<f64> {
        let xs = self.scaler.apply(x).expect("input width checked by caller");
        xs.rows()
            .into_iter()
            .map(|r| r.iter().zip(&self.coef).map(|(a, b)| a * b).sum::<f64>() + self.intercept)
            .collect()
    }

    pub(crate) fn predict(&self, x: ArrayView2<f64>) -> Vec<f64> {
        let z = self.decision(x);
        match self.task {
            Task::Cls => z.into_iter().map(sigmoid).collect(),
            Task::Reg => z,
        }
    }

    pub(crate) fn raw_coefficients(&self) -> (Vec<f64>, f64) {
        let (w, shift) = self.scaler.unscale_linear(&Array1::from(self.coef.clone()));
        (w.to_vec(), self.intercept + shift)
    }
}

fn ridge(x: &DMatrix<f64>, y: &[f64], alpha: f64) -> Result<(Vec<f64>, f64), ModelError> {
    let (n, d) = x.shape();
    let x_mean: Vec<f64> = (0..d).map(|j| x.column(j).sum() / n as f64).collect();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let xc = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - x_mean[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let mut gram = xc.tr_mul(&xc);
    for j in 0..d {
        gram[(j, j)] += alpha;
    }
    let rhs = xc.tr_mul(&yc);
    let w = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        // alpha = 0 with collinear columns
        None => gram.svd(true, true).solve(&rhs, 1e-12).map_err(|_| ModelError::Singular)?,
    };
    let intercept = y_mean - w.iter().zip(&x_mean).map(|(a, b)| a * b).sum::<f64>();
    Ok((w.iter().copied().collect(), intercept))
}

/// Minimizes mean log-loss + ||w||² / (2 C n); the intercept is unpenalized.
fn logistic(x: &DMatrix<f64>, y: &[f64], p: &LinearParams) -> Result<(Vec<f64>, f64, usize), ModelError> {
    let (n, d) = x.shape();
    let lam = 1.0 / (p.c * n as f64);
    // Design with a trailing intercept column.
    let xa = DMatrix::from_fn(n, d + 1, |i, j| if j < d { x[(i, j)] } else { 1.0 });
    let yv = DVector::from_column_slice(y);
    let objective = |beta: &DVector<f64>| -> f64 {
        let z = &xa * beta;
        let loss: f64 = z.iter().zip(y).map(|(&zi, &yi)| softplus(zi) - yi * zi).sum::<f64>() / n as f64;
        loss + 0.5 * lam * beta.rows(0, d).norm_squared()
    };
    let mut beta = DVector::zeros(d + 1);
    let prior = y.iter().sum::<f64>() / n as f64;
    beta[d] = (prior / (1.0 - prior)).ln();
    let mut f = objective(&beta);
    let mut iters = 0;
    while iters < p.max_iter {
        let z = &xa * &beta;
        let prob: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
        let resid = DVector::from_iterator(n, prob.iter().zip(yv.iter()).map(|(p, y)| p - y));
        let mut grad = xa.tr_mul(&resid) / n as f64;
        for j in 0..d {
            grad[j] += lam * beta[j];
        }
        if grad.amax() < p.tol {
            break;
        }
        iters += 1;
        let weights: Vec<f64> = prob.iter().map(|p| (p * (1.0 - p)).max(1e-12)).collect();
        let mut xw = xa.clone();
        for (i, w) in weights.iter().enumerate() {
            xw.row_mut(i).scale_mut(*w);
        }
        let mut hess = xa.tr_mul(&xw) / n as f64;
        for j in 0..d {
            hess[(j, j)] += lam;
        }
        // Tiny ridge on the whole diagonal keeps separable data solvable.
        for j in 0..=d {
            hess[(j, j)] += 1e-12;
        }
        let step = hess.cholesky().ok_or(ModelError::Singular)?.solve(&grad);
        let mut t = 1.0;
        loop {
            let cand = &beta - &step * t;
            let fc = objective(&cand);
            if fc <= f - 1e-4 * t * grad.dot(&step) || t < 1e-10 {
                beta = cand;
                f = fc;
                break;
            }
            t *= 0.5;
        }
    }
    Ok((beta.rows(0, d).iter().copied().collect(), beta[d], iters))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.random::<f64>() * 4.0 - 2.0)
    }

    #[test]
    fn ridge_recovers_noiseless_weights() {
        let x = data(400, 3, 1);
        let y: Vec<f64> = x.rows().into_iter().map(|r| 3.0 * r[0] - 2.0 * r[1] + 0.5 * r[2] + 7.0).collect();
        let m = LinearModel::fit(&LinearParams { alpha: 1e-9, ..Default::default() }, Task::Reg, x.view(), &y).unwrap();
        let (w, b) = m.raw_coefficients();
        assert!((w[0] - 3.0).abs() < 1e-6 && (w[1] + 2.0).abs() < 1e-6 && (b - 7.0).abs() < 1e-6);
    }

    #[test]
    fn constant_target() {
        let x = data(50, 4, 2);
        let m = LinearModel::fit(&LinearParams::default(), Task::Reg, x.view(), &[100.0; 50]).unwrap();
        assert!(m.predict(x.view()).iter().all(|p| (p - 100.0).abs() < 1e-6));
    }

    #[test]
    fn logistic_converges_to_stationary_point() {
        let x = data(300, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y: Vec<f64> =
            x.rows().into_iter().map(|r| f64::from(rng.random::<f64>() < sigmoid(1.5 * r[0] - r[1]))).collect();
        let m = LinearModel::fit(&LinearParams::default(), Task::Cls, x.view(), &y).unwrap();
        assert!(m.n_iter() < 50);
        let (w, _) = m.raw_coefficients();
        assert!(w[0] > 0.5 && w[1] < -0.3);
        let proba = m.predict(x.view());
        assert!(proba.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn constant_features_give_prior() {
        let x = Array2::from_elem((40, 3), 1.0);
        let y: Vec<f64> = (0..40).map(|i| f64::from(i % 4 == 0)).collect();
        let m = LinearModel::fit(&LinearParams::default(), Task::Cls, x.view(), &y).unwrap();
        assert!(m.predict(x.view()).iter().all(|p| (p - 0.25).abs() < 1e-6));
    }
}
