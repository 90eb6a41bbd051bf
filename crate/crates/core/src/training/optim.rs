use super::Hyperparameters;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::Matrix;

/// Learning rate at optimizer step `step` of `total_steps`: linear warmup
/// from 0 over the first `warmup_ratio · total_steps` steps, then linear
/// decay to 0 at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, hp: &Hyperparameters) -> f64 {
    if total_steps == 0 {
        return 0.0;
    }
    let step = step.min(total_steps) as f64;
    let total = total_steps as f64;
    let warmup = hp.warmup_ratio * total;
    if step < warmup {
        hp.learning_rate * step / warmup
    } else {
        hp.learning_rate * (total - step) / (total - warmup)
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the factor applied (1 when unchanged).
pub fn clip_global_norm<'a>(
    grads: impl IntoIterator<Item = &'a mut Matrix>,
    max_norm: f64,
) -> Result<f64> {
    let mut grads: Vec<&mut Matrix> = grads.into_iter().collect();
    let norm = grads.iter().map(|g| g.sum_of_squares()).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(Error::Numeric(format!("gradient norm is {norm}")));
    }
    if norm <= max_norm {
        return Ok(1.0);
    }
    let factor = max_norm / norm;
    for g in grads.iter_mut() {
        g.scale(factor);
    }
    Ok(factor)
}

/// Adam with bias correction and no weight decay.
pub struct Adam {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    t: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(model: &Model, hp: &Hyperparameters) -> Self {
        let zeros = || {
            model
                .params()
                .iter()
                .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
                .collect()
        };
        Self {
            beta1: hp.adam_beta1,
            beta2: hp.adam_beta2,
            epsilon: hp.adam_epsilon,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update from the gradients stored in `model`.
    pub fn step(&mut self, model: &mut Model, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, m), v) in model.params_mut().iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.data();
            let w = p.value.data_mut();
            for (((w, &g), m), v) in w.iter_mut().zip(g).zip(m.data_mut()).zip(v.data_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}
