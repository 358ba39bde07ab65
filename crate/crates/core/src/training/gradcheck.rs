use std::fmt;

use crate::data::generate_synthetic;
use crate::error::Result;
use crate::losses::{l1_loss, rnc_loss, supcon_binned_loss, Batch, RncConfig, SupConBinConfig};
use crate::model::{init_model, MlpSpec};
use crate::numerics::{grad_check, GradCheckReport, ParameterSet};

/// Finite-difference step of the loss gradient checks.
pub const GRADCHECK_H: f64 = 1e-5;
pub const GRADCHECK_DEFAULT_TOL: f64 = 1e-4;
/// Rows in each gradient-check batch.
pub const GRADCHECK_ROWS: usize = 8;
/// Bin width of the SupCon check; wide enough that most anchors of an
/// 8-row batch have a positive.
pub const GRADCHECK_SUPCON_BIN: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckedLoss {
    Rnc,
    L1,
    Supcon,
}

impl CheckedLoss {
    pub const ALL: [CheckedLoss; 3] = [CheckedLoss::Rnc, CheckedLoss::L1, CheckedLoss::Supcon];
}

impl fmt::Display for CheckedLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckedLoss::Rnc => "rnc",
            CheckedLoss::L1 => "l1",
            CheckedLoss::Supcon => "supcon",
        })
    }
}

#[derive(Debug, Clone)]
pub struct LossGradCheck {
    pub loss: CheckedLoss,
    pub report: GradCheckReport,
}

/// Checks the analytic gradient of `loss` through a freshly initialized model
/// against central differences. The batch is `GRADCHECK_ROWS` synthetic rows;
/// L1 covers encoder and head, the representation losses the encoder.
pub fn gradcheck_loss(spec: &MlpSpec, loss: CheckedLoss, seed: u64, tol: f64) -> Result<LossGradCheck> {
    let ds = generate_synthetic(GRADCHECK_ROWS, spec.input_dim(), 0.1, seed)?;
    let (enc, head) = init_model(spec, seed)?;
    let x = ds.features;
    let y = ds.labels;
    let report = match loss {
        CheckedLoss::L1 => {
            let params = ParameterSet::merged([enc.params(), head.params()])?;
            grad_check(&params, GRADCHECK_H, tol, |g, p| {
                let xv = g.constant(x.clone());
                let z = enc.encode_with(g, p, xv)?;
                let pred = head.predict_with(g, p, z)?;
                l1_loss(g, pred, &y)
            })?
        }
        CheckedLoss::Rnc | CheckedLoss::Supcon => grad_check(enc.params(), GRADCHECK_H, tol, |g, p| {
            let xv = g.constant(x.clone());
            let z = enc.encode_with(g, p, xv)?;
            let batch = Batch::new(g, z, y.clone())?;
            if loss == CheckedLoss::Rnc {
                rnc_loss(g, &batch, &RncConfig::default())
            } else {
                let cfg = SupConBinConfig {
                    bin_width: GRADCHECK_SUPCON_BIN,
                    ..Default::default()
                };
                supcon_binned_loss(g, &batch, &cfg)
            }
        })?,
    };
    Ok(LossGradCheck { loss, report })
}

/// Runs [`gradcheck_loss`] for every loss.
pub fn gradcheck_losses(spec: &MlpSpec, seed: u64, tol: f64) -> Result<Vec<LossGradCheck>> {
    CheckedLoss::ALL
        .iter()
        .map(|&l| gradcheck_loss(spec, l, seed, tol))
        .collect()
}
