//! Dense fp64 matrices, reverse-mode autodiff and gradient checking.

mod gradcheck;
mod graph;
mod matrix;
mod params;

pub use gradcheck::{grad_check, rel_err, roundoff_bound, GradCheckReport, ROUNDOFF_ULPS};
pub use graph::{CustomOp, Elementwise, Gradients, Graph, Var};
pub use matrix::Matrix;
pub use params::{Parameter, ParameterSet};

use crate::error::{Error, Result};

/// `ln Σ exp(x_i)`, evaluated as `max + ln Σ exp(x_i - max)`.
pub fn log_sum_exp(x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::arg("log_sum_exp of an empty slice"));
    }
    let mut acc = LogSumExp::new();
    for &v in x {
        acc.push(v);
    }
    Ok(acc.value())
}

/// Streaming log-sum-exp: values can be pushed one at a time and the running
/// total read back after any prefix.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp {
    max: f64,
    scaled_sum: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self::new()
    }
}

impl LogSumExp {
    pub fn new() -> Self {
        LogSumExp {
            max: f64::NEG_INFINITY,
            scaled_sum: 0.0,
        }
    }

    pub fn push(&mut self, v: f64) {
        if v > self.max {
            self.scaled_sum = self.scaled_sum * (self.max - v).exp() + 1.0;
            self.max = v;
        } else {
            self.scaled_sum += (v - self.max).exp();
        }
    }

    /// `-inf` when nothing has been pushed.
    pub fn value(&self) -> f64 {
        if self.scaled_sum == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled_sum.ln()
        }
    }
}
