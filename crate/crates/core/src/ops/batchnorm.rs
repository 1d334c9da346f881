//! Per-channel batch normalization.
//!
//! Train mode normalizes with the biased mean and variance over `(n, h, w)` and
//! folds them into the running statistics as
//! `running = (1 - momentum) * running + momentum * batch`. Eval mode
//! normalizes with the running statistics and treats them as constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub epsilon: f64,
    pub momentum: f64,
}

impl BatchNorm {
    /// `gamma = 1`, `beta = 0`, running statistics of a standard normal.
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            epsilon: DEFAULT_EPSILON,
            momentum: DEFAULT_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn validate(&self, c: usize, op: &str) -> Result<()> {
        for (dim, len) in [
            ("gamma", self.gamma.len()),
            ("beta", self.beta.len()),
            ("running_mean", self.running_mean.len()),
            ("running_var", self.running_var.len()),
        ] {
            if len != c {
                return Err(Error::shape(op, dim, c, len));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!("batch norm epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.momentum > 0.0 && self.momentum < 1.0) {
            return Err(Error::InvalidConfig(format!("batch norm momentum must lie in (0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct BatchNormCache {
    normalized: Tensor4,
    inv_std: Vec<f64>,
    mode: Mode,
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads {
    pub input: Tensor4,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

fn channel_values(x: &Tensor4, c: usize) -> impl Iterator<Item = &f64> {
    (0..x.shape().n).flat_map(move |n| x.plane(n, c).iter())
}

pub fn batchnorm_forward(x: &Tensor4, bn: &mut BatchNorm, mode: Mode) -> Result<(Tensor4, BatchNormCache)> {
    let s = x.shape();
    bn.validate(s.c, "batchnorm_forward")?;
    let count = (s.n * s.plane()) as f64;
    if count == 0.0 {
        return Err(Error::Empty("batch norm over an empty batch".into()));
    }
    let mut normalized = Tensor4::zeros(s);
    let mut out = Tensor4::zeros(s);
    let mut inv_std = vec![0.0; s.c];
    for c in 0..s.c {
        let (mean, var) = match mode {
            Mode::Train => {
                let mean = channel_values(x, c).sum::<f64>() / count;
                let var = channel_values(x, c).map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
                bn.running_mean[c] = (1.0 - bn.momentum) * bn.running_mean[c] + bn.momentum * mean;
                bn.running_var[c] = (1.0 - bn.momentum) * bn.running_var[c] + bn.momentum * var;
                (mean, var)
            }
            Mode::Eval => (bn.running_mean[c], bn.running_var[c].max(0.0)),
        };
        let is = 1.0 / (var + bn.epsilon).sqrt();
        inv_std[c] = is;
        let (g, b) = (bn.gamma[c], bn.beta[c]);
        for n in 0..s.n {
            let src = x.plane(n, c);
            let xh = normalized.plane_mut(n, c);
            for (dst, &v) in xh.iter_mut().zip(src) {
                *dst = (v - mean) * is;
            }
            let xh = normalized.plane(n, c).to_vec();
            for (dst, v) in out.plane_mut(n, c).iter_mut().zip(xh) {
                *dst = g * v + b;
            }
        }
    }
    Ok((out, BatchNormCache { normalized, inv_std, mode }))
}

pub fn batchnorm_backward(cache: &BatchNormCache, bn: &BatchNorm, grad_out: &Tensor4) -> Result<BatchNormGrads> {
    let s: Shape4 = cache.normalized.shape();
    grad_out.expect_shape(s, "batchnorm_backward")?;
    let count = (s.n * s.plane()) as f64;
    let mut input = Tensor4::zeros(s);
    let mut gamma = vec![0.0; s.c];
    let mut beta = vec![0.0; s.c];
    for c in 0..s.c {
        let mut sum_dy = 0.0;
        let mut sum_dy_xh = 0.0;
        for n in 0..s.n {
            for (&dy, &xh) in grad_out.plane(n, c).iter().zip(cache.normalized.plane(n, c)) {
                sum_dy += dy;
                sum_dy_xh += dy * xh;
            }
        }
        gamma[c] = sum_dy_xh;
        beta[c] = sum_dy;
        let scale = bn.gamma[c] * cache.inv_std[c];
        for n in 0..s.n {
            let dy = grad_out.plane(n, c);
            let xh = cache.normalized.plane(n, c);
            let dst = input.plane_mut(n, c);
            match cache.mode {
                Mode::Train => {
                    for i in 0..dst.len() {
                        dst[i] = scale * (dy[i] - sum_dy / count - xh[i] * sum_dy_xh / count);
                    }
                }
                Mode::Eval => {
                    for i in 0..dst.len() {
                        dst[i] = scale * dy[i];
                    }
                }
            }
        }
    }
    Ok(BatchNormGrads { input, gamma, beta })
}
