use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParameterSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerSpec {
    SgdMomentum {
        lr: f64,
        momentum: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec::SgdMomentum {
            lr: 0.05,
            momentum: 0.9,
        }
    }
}

impl OptimizerSpec {
    pub fn adam(lr: f64) -> Self {
        OptimizerSpec::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerSpec::SgdMomentum { lr, .. } | OptimizerSpec::Adam { lr, .. } => lr,
        }
    }

    /// `lr = 0` is allowed and freezes the parameters.
    pub fn validate(&self) -> Result<()> {
        let lr = self.lr();
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be >= 0, got {lr}")));
        }
        match *self {
            OptimizerSpec::SgdMomentum { momentum, .. } => {
                if !(0.0..1.0).contains(&momentum) {
                    return Err(Error::Config(format!(
                        "momentum must be in [0, 1), got {momentum}"
                    )));
                }
            }
            OptimizerSpec::Adam {
                beta1, beta2, eps, ..
            } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                    return Err(Error::Config(format!(
                        "adam needs betas in [0, 1) and eps > 0, got ({beta1}, {beta2}, {eps})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-parameter optimizer state, keyed by parameter name so one optimizer can
/// step several disjoint parameter sets.
#[derive(Debug, Clone)]
pub struct Optimizer {
    spec: OptimizerSpec,
    first: BTreeMap<String, Matrix>,
    second: BTreeMap<String, Matrix>,
    steps: BTreeMap<String, i32>,
}

impl Optimizer {
    pub fn new(spec: OptimizerSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Optimizer {
            spec,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
            steps: BTreeMap::new(),
        })
    }

    /// Applies the accumulated gradients in `params`; gradients are left as is.
    pub fn step(&mut self, params: &mut ParameterSet) {
        for (name, p) in params.iter_mut() {
            let shape = p.value.shape();
            match self.spec {
                OptimizerSpec::SgdMomentum { lr, momentum } => {
                    // v <- momentum * v + grad;  θ <- θ - lr * v
                    let v = self
                        .first
                        .entry(name.to_string())
                        .or_insert_with(|| Matrix::zeros(shape.0, shape.1));
                    for ((v, g), t) in v
                        .data_mut()
                        .iter_mut()
                        .zip(p.grad.data())
                        .zip(p.value.data_mut())
                    {
                        *v = momentum * *v + g;
                        *t -= lr * *v;
                    }
                }
                OptimizerSpec::Adam {
                    lr,
                    beta1,
                    beta2,
                    eps,
                } => {
                    let t = self.steps.entry(name.to_string()).or_insert(0);
                    *t += 1;
                    let (c1, c2) = (1.0 - beta1.powi(*t), 1.0 - beta2.powi(*t));
                    let m = self
                        .first
                        .entry(name.to_string())
                        .or_insert_with(|| Matrix::zeros(shape.0, shape.1));
                    let v = self
                        .second
                        .entry(name.to_string())
                        .or_insert_with(|| Matrix::zeros(shape.0, shape.1));
                    for (((m, v), g), th) in m
                        .data_mut()
                        .iter_mut()
                        .zip(v.data_mut())
                        .zip(p.grad.data())
                        .zip(p.value.data_mut())
                    {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        *th -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(value: f64, grad: f64) -> ParameterSet {
        let mut s = ParameterSet::new();
        s.insert("w", Matrix::scalar(value)).unwrap();
        s.get_mut("w").unwrap().grad = Matrix::scalar(grad);
        s
    }

    #[test]
    fn sgd_momentum_two_steps() {
        let mut opt = Optimizer::new(OptimizerSpec::SgdMomentum { lr: 0.1, momentum: 0.5 }).unwrap();
        let mut p = one_param(1.0, 2.0);
        opt.step(&mut p);
        // v = 2, θ = 1 - 0.2
        assert!((p.value("w").unwrap().data()[0] - 0.8).abs() < 1e-15);
        opt.step(&mut p);
        // v = 0.5 * 2 + 2 = 3, θ = 0.8 - 0.3
        assert!((p.value("w").unwrap().data()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut opt = Optimizer::new(OptimizerSpec::adam(0.01)).unwrap();
        let mut p = one_param(1.0, -3.0);
        opt.step(&mut p);
        assert!((p.value("w").unwrap().data()[0] - 1.01).abs() < 1e-9);
    }

    #[test]
    fn zero_lr_is_a_no_op() {
        for spec in [
            OptimizerSpec::SgdMomentum { lr: 0.0, momentum: 0.9 },
            OptimizerSpec::adam(0.0),
        ] {
            let mut opt = Optimizer::new(spec).unwrap();
            let mut p = one_param(0.123, 7.0);
            for _ in 0..5 {
                opt.step(&mut p);
            }
            assert_eq!(p.value("w").unwrap().data()[0], 0.123);
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(Optimizer::new(OptimizerSpec::SgdMomentum { lr: -1.0, momentum: 0.0 }).is_err());
        assert!(Optimizer::new(OptimizerSpec::SgdMomentum { lr: 0.1, momentum: 1.0 }).is_err());
    }
}
