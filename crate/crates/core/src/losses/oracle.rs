use super::{validate_labels, RncConfig, Similarity};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

const MAX_ORACLE_BATCH: usize = 32;

/// Literal evaluation of the RNC loss: for every anchor `i` and candidate
/// `j != i`, build `S_{i,j}` by scanning the batch, sum `exp(sim / tau)` over
/// it and take `-ln P(j | i, S_{i,j})`. Cubic in `M`, no gradients, no
/// stabilization; only meant as a reference for small batches.
pub fn rnc_loss_bruteforce(embeddings: &Matrix, labels: &[f64], cfg: &RncConfig) -> Result<f64> {
    cfg.validate()?;
    let m = embeddings.rows();
    validate_labels(labels, m)?;
    if m > MAX_ORACLE_BATCH {
        return Err(Error::arg(format!(
            "brute-force oracle is limited to {MAX_ORACLE_BATCH} samples, got {m}"
        )));
    }

    let sim = |a: usize, b: usize| -> Result<f64> {
        let (va, vb) = (embeddings.row(a), embeddings.row(b));
        match cfg.similarity {
            Similarity::NegL2 => {
                let mut sq = 0.0;
                for c in 0..va.len() {
                    sq += (va[c] - vb[c]) * (va[c] - vb[c]);
                }
                Ok(-(sq + 1e-12).sqrt())
            }
            Similarity::Cosine => {
                let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
                for c in 0..va.len() {
                    dot += va[c] * vb[c];
                    na += va[c] * va[c];
                    nb += vb[c] * vb[c];
                }
                if na == 0.0 || nb == 0.0 {
                    let row = if na == 0.0 { a } else { b };
                    return Err(Error::Numeric(format!("row {row} has zero norm")));
                }
                Ok(dot / (na.sqrt() * nb.sqrt()))
            }
        }
    };

    let mut total = 0.0;
    for i in 0..m {
        let mut anchor_sum = 0.0;
        for j in 0..m {
            if j == i {
                continue;
            }
            let reach = (labels[j] - labels[i]).abs();
            let mut denom = 0.0;
            for k in 0..m {
                if k != i && (labels[k] - labels[i]).abs() >= reach {
                    denom += (sim(i, k)? / cfg.tau).exp();
                }
            }
            let p = (sim(i, j)? / cfg.tau).exp() / denom;
            anchor_sum += -p.ln();
        }
        total += anchor_sum / (m - 1) as f64;
    }
    let loss = total / m as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("brute-force rnc loss is {loss}")));
    }
    Ok(loss)
}
