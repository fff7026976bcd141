//! Batch normalization kernels and a standalone stateful layer.
//!
//! Training mode normalizes each feature by the batch mean and (biased)
//! variance; the running statistics follow
//! `running = momentum * running + (1 - momentum) * batch`, with the unbiased
//! variance folded in when the batch has more than one row. Inference mode
//! normalizes by the running statistics.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Training,
    Inference,
}

/// Intermediate values a backward pass needs.
#[derive(Clone, Debug)]
pub struct BnCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
}

/// Per-feature batch statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

fn check_affine(x: &Tensor, gamma: &[f64], beta: &[f64]) -> Result<()> {
    if gamma.len() != x.cols() || beta.len() != x.cols() {
        return Err(Error::Shape(format!(
            "batchnorm over {} features given gamma/beta of length {}/{}",
            x.cols(),
            gamma.len(),
            beta.len()
        )));
    }
    Ok(())
}

pub fn batch_stats(x: &Tensor) -> BatchStats {
    let (m, d) = x.shape();
    let mut mean = vec![0.0; d];
    for i in 0..m {
        for (acc, v) in mean.iter_mut().zip(x.row(i)) {
            *acc += v;
        }
    }
    for v in &mut mean {
        *v /= m as f64;
    }
    let mut var = vec![0.0; d];
    for i in 0..m {
        for ((acc, v), mu) in var.iter_mut().zip(x.row(i)).zip(&mean) {
            *acc += (v - mu) * (v - mu);
        }
    }
    for v in &mut var {
        *v /= m as f64;
    }
    BatchStats { mean, var, count: m }
}

fn normalize(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
    eps: f64,
) -> (Tensor, BnCache) {
    let (m, d) = x.shape();
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = Tensor::zeros(m, d);
    let mut y = Tensor::zeros(m, d);
    for i in 0..m {
        let xr = x.row(i);
        for j in 0..d {
            let h = (xr[j] - mean[j]) * inv_std[j];
            xhat.set(i, j, h);
            y.set(i, j, gamma[j] * h + beta[j]);
        }
    }
    (y, BnCache { xhat, inv_std })
}

/// Training-mode forward pass. Returns the output, the backward cache and
/// the batch statistics (for the running-average update).
pub fn forward_train(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Result<(Tensor, BnCache, BatchStats)> {
    check_affine(x, gamma, beta)?;
    if x.rows() == 0 {
        return Err(Error::Shape("batchnorm training needs at least one row".into()));
    }
    let stats = batch_stats(x);
    let (y, cache) = normalize(x, gamma, beta, &stats.mean, &stats.var, eps);
    Ok((y, cache, stats))
}

pub fn forward_infer(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> Result<(Tensor, BnCache)> {
    check_affine(x, gamma, beta)?;
    if running_mean.len() != x.cols() || running_var.len() != x.cols() {
        return Err(Error::Shape("running statistics length mismatch".into()));
    }
    Ok(normalize(x, gamma, beta, running_mean, running_var, eps))
}

/// Gradients `(dx, dgamma, dbeta)` of a training-mode pass.
pub fn backward_train(dy: &Tensor, cache: &BnCache, gamma: &[f64]) -> (Tensor, Vec<f64>, Vec<f64>) {
    let (m, d) = dy.shape();
    let mut dgamma = vec![0.0; d];
    let mut dbeta = vec![0.0; d];
    for i in 0..m {
        let (g, h) = (dy.row(i), cache.xhat.row(i));
        for j in 0..d {
            dbeta[j] += g[j];
            dgamma[j] += g[j] * h[j];
        }
    }
    let mf = m as f64;
    let mut dx = Tensor::zeros(m, d);
    for i in 0..m {
        let (g, h) = (dy.row(i), cache.xhat.row(i));
        let out = dx.row_mut(i);
        for j in 0..d {
            out[j] = gamma[j] * cache.inv_std[j] / mf * (mf * g[j] - dbeta[j] - h[j] * dgamma[j]);
        }
    }
    (dx, dgamma, dbeta)
}

/// Gradients of an inference-mode pass (statistics are constants).
pub fn backward_infer(dy: &Tensor, cache: &BnCache, gamma: &[f64]) -> (Tensor, Vec<f64>, Vec<f64>) {
    let (m, d) = dy.shape();
    let mut dgamma = vec![0.0; d];
    let mut dbeta = vec![0.0; d];
    let mut dx = Tensor::zeros(m, d);
    for i in 0..m {
        let (g, h) = (dy.row(i), cache.xhat.row(i));
        let out = dx.row_mut(i);
        for j in 0..d {
            dbeta[j] += g[j];
            dgamma[j] += g[j] * h[j];
            out[j] = g[j] * gamma[j] * cache.inv_std[j];
        }
    }
    (dx, dgamma, dbeta)
}

/// Folds batch statistics into running averages.
pub fn update_running(running_mean: &mut [f64], running_var: &mut [f64], stats: &BatchStats, momentum: f64) {
    let m = stats.count as f64;
    let unbias = if stats.count > 1 { m / (m - 1.0) } else { 1.0 };
    for j in 0..running_mean.len() {
        running_mean[j] = momentum * running_mean[j] + (1.0 - momentum) * stats.mean[j];
        running_var[j] = momentum * running_var[j] + (1.0 - momentum) * stats.var[j] * unbias;
    }
}

/// A self-contained batch normalization layer.
#[derive(Clone, Debug)]
pub struct BatchNormState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
    pub mode: BnMode,
    initialized: bool,
}

impl BatchNormState {
    /// `gamma = 1`, `beta = 0`, running statistics not yet available.
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum: DEFAULT_MOMENTUM,
            epsilon: DEFAULT_EPSILON,
            mode: BnMode::Training,
            initialized: false,
        }
    }

    /// Marks the running statistics `(0, 1)` as usable for inference.
    pub fn init_running_stats(&mut self) {
        self.running_mean.iter_mut().for_each(|v| *v = 0.0);
        self.running_var.iter_mut().for_each(|v| *v = 1.0);
        self.initialized = true;
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        match self.mode {
            BnMode::Training => {
                let (y, _, stats) = forward_train(x, &self.gamma, &self.beta, self.epsilon)?;
                update_running(&mut self.running_mean, &mut self.running_var, &stats, self.momentum);
                self.initialized = true;
                Ok(y)
            }
            BnMode::Inference => {
                if !self.initialized {
                    return Err(Error::Numerical(
                        "batchnorm inference requested before any running statistics exist".into(),
                    ));
                }
                let (y, _) = forward_infer(
                    x,
                    &self.gamma,
                    &self.beta,
                    &self.running_mean,
                    &self.running_var,
                    self.epsilon,
                )?;
                Ok(y)
            }
        }
    }
}
