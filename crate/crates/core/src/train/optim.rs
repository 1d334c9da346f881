//! SGD with momentum and the poly learning-rate schedule.

use crate::error::{Error, Result};
use crate::params::Parameters;

/// `base * (1 - iter / max_iter)^power`, exactly zero at `iter == max_iter`.
pub fn poly_lr(base: f64, iter: usize, max_iter: usize, power: f64) -> f64 {
    assert!(iter <= max_iter, "iteration {iter} past schedule end {max_iter}");
    if iter == max_iter {
        return 0.0;
    }
    base * (1.0 - iter as f64 / max_iter as f64).powf(power)
}

/// Velocity buffers, one per learnable tensor in visiting order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    velocity: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &dyn Parameters) -> Self {
        let mut velocity = Vec::new();
        params.visit("", &mut |_, v| velocity.push(vec![0.0; v.len()]));
        Self { velocity }
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Sgd {
    /// `g = grad + wd * p; v = momentum * v + g; p -= lr * v`.
    ///
    /// Shapes are checked before anything is written.
    pub fn step(&self, params: &mut dyn Parameters, grads: &dyn Parameters, state: &mut OptimizerState, lr: f64) -> Result<()> {
        let mut grad_list: Vec<(String, Vec<f64>)> = Vec::new();
        grads.visit("", &mut |name, v| grad_list.push((name.to_string(), v.to_vec())));
        let mut layout = Vec::new();
        params.visit("", &mut |name, v| layout.push((name.to_string(), v.len())));
        if layout.len() != grad_list.len() || layout.len() != state.velocity.len() {
            return Err(Error::InvalidArgument(format!(
                "{} parameter tensors, {} gradients, {} velocity buffers",
                layout.len(),
                grad_list.len(),
                state.velocity.len()
            )));
        }
        for (((name, len), (gname, g)), v) in layout.iter().zip(&grad_list).zip(&state.velocity) {
            if name != gname || g.len() != *len || v.len() != *len {
                return Err(Error::InvalidArgument(format!(
                    "gradient {gname} ({}) does not match parameter {name} ({len})",
                    g.len()
                )));
            }
        }
        let mut idx = 0;
        let velocity = &mut state.velocity;
        params.visit_mut("", &mut |_, p| {
            for ((pi, &gi), vi) in p.iter_mut().zip(&grad_list[idx].1).zip(velocity[idx].iter_mut()) {
                let gd = gi + self.weight_decay * *pi;
                *vi = self.momentum * *vi + gd;
                *pi -= lr * *vi;
            }
            idx += 1;
        });
        Ok(())
    }
}
