//! Dense `f64` matrices, differentiable building blocks, deterministic
//! random streams and the finite-difference gradient checker.

mod matrix;
mod rng;

use rand::Rng as _;

pub use matrix::{cross_entropy, softmax_rows, CrossEntropy, Matrix, PROBABILITY_FLOOR};
pub(crate) use matrix::softmax_slice;
pub use rng::{Rng, RngState};

use crate::error::{Error, Result};

/// A trainable tensor together with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub passed: bool,
}

/// Gradients smaller than this are compared on an absolute scale.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compares `params[i].grad` against central finite differences of `loss`.
///
/// `per_tensor` entries are drawn from every parameter (all of them when the
/// tensor is smaller). The relative error of one entry is
/// `|analytic − numeric| / max(|analytic|, |numeric|, GRAD_CHECK_FLOOR)`.
pub fn gradient_check<F>(
    params: &mut [Parameter],
    mut loss: F,
    step: f64,
    tolerance: f64,
    per_tensor: usize,
    rng: &mut Rng,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Parameter]) -> f64,
{
    let base = loss(params);
    if !base.is_finite() {
        return Err(Error::Numeric(format!("loss is {base}")));
    }

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
        passed: true,
    };
    for p in 0..params.len() {
        let len = params[p].value.data().len();
        let picks: Vec<usize> = if len <= per_tensor {
            (0..len).collect()
        } else {
            (0..per_tensor).map(|_| rng.random_range(0..len)).collect()
        };
        for idx in picks {
            let original = params[p].value.data()[idx];
            params[p].value.data_mut()[idx] = original + step;
            let plus = loss(params);
            params[p].value.data_mut()[idx] = original - step;
            let minus = loss(params);
            params[p].value.data_mut()[idx] = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss not finite while perturbing {}[{idx}]",
                    params[p].name
                )));
            }
            let numeric = (plus - minus) / (2.0 * step);
            let analytic = params[p].grad.data()[idx];
            let denom = analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            let rel = (analytic - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((params[p].name.clone(), idx));
            }
        }
    }
    report.passed = report.max_rel_error <= tolerance;
    Ok(report)
}
