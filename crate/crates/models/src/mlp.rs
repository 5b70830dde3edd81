//! Multilayer perceptron: affine → batch normalization → ReLU per hidden
//! layer, scalar head, Adam, early stopping on a held-out slice of the
//! training rows with the best weights restored. Inputs are used at their raw
//! scale; the per-layer normalization absorbs it.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{huber_loss, ModelError, Task};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosWeight {
    /// #negatives / #positives on the fitting rows.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub huber_delta: f64,
    pub pos_weight: PosWeight,
}

impl Default for MlpParams {
    fn default() -> Self {
        MlpParams {
            hidden: vec![512, 256, 128, 64],
            learning_rate: 1e-3,
            max_epochs: 500,
            patience: 20,
            batch_size: 4096,
            validation_fraction: 0.1,
            huber_delta: 10.0,
            pos_weight: PosWeight::Auto,
        }
    }
}

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;
const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const PREDICT_CHUNK: usize = 8192;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpModel {
    task: Task,
    n_hidden: usize,
    /// Per hidden layer: weights, bias, gamma, beta (row vectors as 1×k);
    /// then head weights and bias.
    params: Vec<Array2<f64>>,
    /// Per hidden layer running (mean, variance).
    running: Vec<(Array1<f64>, Array1<f64>)>,
    /// Regression head reparametrization: density = center + scale · output.
    center: f64,
    scale: f64,
    epochs_run: usize,
    best_epoch: usize,
}

#[derive(Default)]
struct Cache {
    inputs: Vec<Array2<f64>>,
    xhat: Vec<Array2<f64>>,
    inv_std: Vec<Array1<f64>>,
    pre: Vec<Array2<f64>>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

struct Loss {
    task: Task,
    pos_weight: f64,
    delta: f64,
}

impl Loss {
    fn value(&self, z: f64, t: f64) -> f64 {
        match self.task {
            Task::Cls => self.pos_weight * t * softplus(-z) + (1.0 - t) * softplus(z),
            Task::Reg => huber_loss(z - t, self.delta),
        }
    }

    fn grad(&self, z: f64, t: f64) -> f64 {
        match self.task {
            Task::Cls => self.pos_weight * t * (sigmoid(z) - 1.0) + (1.0 - t) * sigmoid(z),
            Task::Reg => (z - t).clamp(-self.delta, self.delta),
        }
    }
}

impl MlpModel {
    pub(crate) fn fit(p: &MlpParams, task: Task, seed: u64, x: ArrayView2<f64>, y: &[f64]) -> Result<Self, ModelError> {
        if p.batch_size < 2 || p.learning_rate <= 0.0 || !(0.0..1.0).contains(&p.validation_fraction) {
            return Err(ModelError::InvalidParam(
                "batch_size >= 2, learning_rate > 0, validation_fraction in [0, 1)".into(),
            ));
        }
        if p.hidden.contains(&0) {
            return Err(ModelError::InvalidParam("hidden widths must be positive".into()));
        }
        let n = x.nrows();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let n_val = ((n as f64 * p.validation_fraction).round() as usize).min(n.saturating_sub(2));
        let (val_idx, fit_idx) = order.split_at(n_val);
        let mut fit_idx = fit_idx.to_vec();

        let (center, scale, pos_weight) = match task {
            Task::Reg => {
                let fy: Vec<f64> = fit_idx.iter().map(|&i| y[i]).collect();
                let mean = fy.iter().sum::<f64>() / fy.len() as f64;
                let sd = (fy.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / fy.len() as f64).sqrt();
                (mean, if sd > 0.0 { sd } else { 1.0 }, 1.0)
            }
            Task::Cls => {
                let pos = fit_idx.iter().filter(|&&i| y[i] == 1.0).count() as f64;
                let w = match p.pos_weight {
                    PosWeight::Auto if pos > 0.0 => (fit_idx.len() as f64 - pos) / pos,
                    PosWeight::Auto => 1.0,
                    PosWeight::Fixed(w) => w,
                };
                (0.0, 1.0, w)
            }
        };
        // Huber(σ·r, σ·δ) = σ²·Huber(r, δ), so the scaled problem has the same minimizer.
        let loss = Loss { task, pos_weight, delta: p.huber_delta / scale };
        let target: Vec<f64> = y.iter().map(|v| (v - center) / scale).collect();

        let mut model = MlpModel::init(task, x.ncols(), &p.hidden, center, scale, &mut rng);
        let mut m1: Vec<Array2<f64>> = model.params.iter().map(|a| Array2::zeros(a.raw_dim())).collect();
        let mut m2 = m1.clone();
        let mut step = 0i32;

        let x_val = x.select(Axis(0), val_idx);
        let y_val: Vec<f64> = val_idx.iter().map(|&i| target[i]).collect();
        let mut best = (f64::INFINITY, model.params.clone(), model.running.clone(), 0usize);
        let mut since_best = 0;
        for epoch in 1..=p.max_epochs {
            fit_idx.shuffle(&mut rng);
            for batch in fit_idx.chunks(p.batch_size) {
                if batch.len() < 2 {
                    continue;
                }
                let xb = x.select(Axis(0), batch);
                let (out, cache, stats) = model.forward_train(&xb);
                let m = batch.len() as f64;
                let dout = Array1::from_iter(out.iter().zip(batch).map(|(&z, &i)| loss.grad(z, target[i]) / m));
                let grads = model.backward(cache, dout);
                step += 1;
                let (c1, c2) = (1.0 - ADAM_B1.powi(step), 1.0 - ADAM_B2.powi(step));
                for k in 0..grads.len() {
                    Zip::from(&mut model.params[k]).and(&mut m1[k]).and(&mut m2[k]).and(&grads[k]).for_each(
                        |w, a, b, &g| {
                            *a = ADAM_B1 * *a + (1.0 - ADAM_B1) * g;
                            *b = ADAM_B2 * *b + (1.0 - ADAM_B2) * g * g;
                            *w -= p.learning_rate * (*a / c1) / ((*b / c2).sqrt() + ADAM_EPS);
                        },
                    );
                }
                for (l, (mean, var)) in stats.into_iter().enumerate() {
                    let unbiased = var * (m / (m - 1.0));
                    let (rm, rv) = &mut model.running[l];
                    *rm = &*rm * (1.0 - BN_MOMENTUM) + &(mean * BN_MOMENTUM);
                    *rv = &*rv * (1.0 - BN_MOMENTUM) + &(unbiased * BN_MOMENTUM);
                }
            }
            model.epochs_run = epoch;
            if n_val == 0 {
                best = (0.0, model.params.clone(), model.running.clone(), epoch);
                continue;
            }
            let out = model.forward_eval(x_val.view());
            let val_loss = out.iter().zip(&y_val).map(|(&z, &t)| loss.value(z, t)).sum::<f64>() / n_val as f64;
            if val_loss < best.0 {
                best = (val_loss, model.params.clone(), model.running.clone(), epoch);
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= p.patience {
                    break;
                }
            }
        }
        model.params = best.1;
        model.running = best.2;
        model.best_epoch = best.3;
        Ok(model)
    }

    fn init(task: Task, d: usize, hidden: &[usize], center: f64, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut params = Vec::new();
        let mut running = Vec::new();
        let mut fan_in = d;
        let draw = |rows: usize, cols: usize, sd: f64, rng: &mut ChaCha8Rng| {
            let normal = Normal::new(0.0, sd).expect("positive sd");
            Array2::from_shape_simple_fn((rows, cols), || normal.sample(rng))
        };
        for &width in hidden {
            params.push(draw(fan_in, width, (2.0 / fan_in as f64).sqrt(), rng));
            params.push(Array2::zeros((1, width)));
            params.push(Array2::ones((1, width)));
            params.push(Array2::zeros((1, width)));
            running.push((Array1::zeros(width), Array1::ones(width)));
            fan_in = width;
        }
        params.push(draw(fan_in, 1, (1.0 / fan_in as f64).sqrt(), rng));
        params.push(Array2::zeros((1, 1)));
        MlpModel { task, n_hidden: hidden.len(), params, running, center, scale, epochs_run: 0, best_epoch: 0 }
    }

    pub fn epochs_run(&self) -> usize {
        self.epochs_run
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    fn forward_train(&self, x: &Array2<f64>) -> (Array1<f64>, Cache, Vec<(Array1<f64>, Array1<f64>)>) {
        let mut cache = Cache::default();
        let mut stats = Vec::with_capacity(self.n_hidden);
        let mut a = x.clone();
        for l in 0..self.n_hidden {
            let z = a.dot(&self.params[4 * l]) + self.params[4 * l + 1].row(0);
            let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
            let centered = &z - &mean;
            let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty batch");
            let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
            let xhat = &centered * &inv_std;
            let pre = &xhat * &self.params[4 * l + 2].row(0) + self.params[4 * l + 3].row(0);
            let act = pre.mapv(|v| v.max(0.0));
            cache.inputs.push(a);
            cache.xhat.push(xhat);
            cache.inv_std.push(inv_std);
            cache.pre.push(pre);
            stats.push((mean, var));
            a = act;
        }
        let h = self.n_hidden;
        let out = a.dot(&self.params[4 * h]) + self.params[4 * h + 1].row(0);
        cache.inputs.push(a);
        (out.column(0).to_owned(), cache, stats)
    }

    fn backward(&self, cache: Cache, dout: Array1<f64>) -> Vec<Array2<f64>> {
        let h = self.n_hidden;
        let mut grads: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); self.params.len()];
        let d = dout.insert_axis(Axis(1));
        grads[4 * h] = cache.inputs[h].t().dot(&d);
        grads[4 * h + 1] = d.sum_axis(Axis(0)).insert_axis(Axis(0));
        let mut da = d.dot(&self.params[4 * h].t());
        for l in (0..h).rev() {
            let dy = &da * &cache.pre[l].mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            let xhat = &cache.xhat[l];
            grads[4 * l + 2] = (&dy * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
            grads[4 * l + 3] = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
            let dxhat = &dy * &self.params[4 * l + 2].row(0);
            let m = dy.nrows() as f64;
            let s1 = dxhat.sum_axis(Axis(0));
            let s2 = (&dxhat * xhat).sum_axis(Axis(0));
            let dz = (&dxhat * m - &s1 - &(xhat * &s2)) * &(&cache.inv_std[l] / m);
            grads[4 * l] = cache.inputs[l].t().dot(&dz);
            grads[4 * l + 1] = dz.sum_axis(Axis(0)).insert_axis(Axis(0));
            if l > 0 {
                da = dz.dot(&self.params[4 * l].t());
            }
        }
        grads
    }

    /// Head outputs using running normalization statistics.
    fn forward_eval(&self, x: ArrayView2<f64>) -> Array1<f64> {
        let mut a = x.to_owned();
        for l in 0..self.n_hidden {
            let (rm, rv) = &self.running[l];
            let inv_std = rv.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
            let z = a.dot(&self.params[4 * l]) + self.params[4 * l + 1].row(0);
            let pre = (&z - rm) * &inv_std * self.params[4 * l + 2].row(0) + self.params[4 * l + 3].row(0);
            a = pre.mapv(|v| v.max(0.0));
        }
        let h = self.n_hidden;
        (a.dot(&self.params[4 * h]) + self.params[4 * h + 1].row(0)).column(0).to_owned()
    }

    pub(crate) fn predict(&self, x: ArrayView2<f64>) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.nrows());
        let mut start = 0;
        while start < x.nrows() {
            let end = (start + PREDICT_CHUNK).min(x.nrows());
            for z in self.forward_eval(x.slice(s![start..end, ..])) {
                out.push(match self.task {
                    Task::Cls => sigmoid(z),
                    Task::Reg => self.center + self.scale * z,
                });
            }
            start = end;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Central finite differences against the analytic backward pass.
    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_simple_fn((6, 3), || rng.random::<f64>() * 2.0 - 1.0);
        let t: Vec<f64> = (0..6).map(|i| f64::from(i % 2 == 0)).collect();
        let model = MlpModel::init(Task::Cls, 3, &[4, 3], 0.0, 1.0, &mut rng);
        let loss = Loss { task: Task::Cls, pos_weight: 2.0, delta: 1.0 };
        let total = |m: &MlpModel| {
            let (out, _, _) = m.forward_train(&x);
            out.iter().zip(&t).map(|(&z, &y)| loss.value(z, y)).sum::<f64>() / 6.0
        };
        let (out, cache, _) = model.forward_train(&x);
        let dout = Array1::from_iter(out.iter().zip(&t).map(|(&z, &y)| loss.grad(z, y) / 6.0));
        let grads = model.backward(cache, dout);
        let eps = 1e-6;
        for k in 0..model.params.len() {
            for idx in 0..model.params[k].len() {
                let (r, c) = (idx / model.params[k].ncols(), idx % model.params[k].ncols());
                let mut plus = model.clone();
                plus.params[k][[r, c]] += eps;
                let mut minus = model.clone();
                minus.params[k][[r, c]] -= eps;
                let numeric = (total(&plus) - total(&minus)) / (2.0 * eps);
                assert!(
                    (numeric - grads[k][[r, c]]).abs() < 1e-6,
                    "param {k} [{r},{c}]: {numeric} vs {}",
                    grads[k][[r, c]]
                );
            }
        }
    }

    #[test]
    fn learns_a_linear_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_simple_fn((600, 2), || rng.random::<f64>());
        let y: Vec<f64> = x.rows().into_iter().map(|r| 100.0 * r[0] + 50.0 * r[1]).collect();
        let p =
            MlpParams { hidden: vec![16], batch_size: 64, max_epochs: 200, learning_rate: 1e-2, ..Default::default() };
        let m = MlpModel::fit(&p, Task::Reg, 0, x.view(), &y).unwrap();
        let pred = m.predict(x.view());
        let mae = pred.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64;
        assert!(mae < 5.0, "mae {mae}");
        assert!(m.best_epoch() <= m.epochs_run());
    }
}
