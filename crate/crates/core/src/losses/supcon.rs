use super::{similarity_matrix, validate_labels, Batch, SupConBinConfig};
use crate::error::{Error, Result};
use crate::numerics::{CustomOp, Graph, LogSumExp, Matrix, Var};

/// Supervised contrastive loss with labels discretized into bins of
/// `bin_width` (`bin = floor(y / bin_width)`); positives share the anchor's bin.
pub fn supcon_binned_loss(g: &mut Graph, batch: &Batch, cfg: &SupConBinConfig) -> Result<Var> {
    cfg.validate()?;
    validate_labels(&batch.labels, g.value(batch.embeddings).rows())?;
    let sim = similarity_matrix(g, batch.embeddings, cfg.similarity)?;
    supcon_loss_from_similarity(g, sim, &batch.labels, cfg)
}

/// Anchors without a positive contribute nothing and are left out of the
/// mean; with no positive anywhere the loss is 0.
pub fn supcon_loss_from_similarity(
    g: &mut Graph,
    sim: Var,
    labels: &[f64],
    cfg: &SupConBinConfig,
) -> Result<Var> {
    cfg.validate()?;
    let s = g.value(sim);
    let m = s.rows();
    if s.cols() != m {
        return Err(Error::dim("supcon similarity", s.shape(), (m, m)));
    }
    validate_labels(labels, m)?;
    let bins: Vec<i64> = labels
        .iter()
        .map(|y| (y / cfg.bin_width).floor() as i64)
        .collect();
    let tau = cfg.tau;

    let mut total = 0.0;
    let mut anchors = 0usize;
    let mut coeff = Matrix::zeros(m, m);
    for i in 0..m {
        let positives: Vec<usize> = (0..m).filter(|&p| p != i && bins[p] == bins[i]).collect();
        if positives.is_empty() {
            continue;
        }
        anchors += 1;
        let mut acc = LogSumExp::new();
        for a in (0..m).filter(|&a| a != i) {
            acc.push(s[(i, a)] / tau);
        }
        let lse = acc.value();
        let inv_p = 1.0 / positives.len() as f64;
        for &p in &positives {
            total += inv_p * (lse - s[(i, p)] / tau);
            coeff[(i, p)] -= inv_p / tau;
        }
        for a in (0..m).filter(|&a| a != i) {
            coeff[(i, a)] += (s[(i, a)] / tau - lse).exp() / tau;
        }
    }

    if anchors == 0 {
        return Ok(g.custom(&[sim], Matrix::scalar(0.0), Box::new(SupConBackward { coeff })));
    }
    let n = anchors as f64;
    let loss = total / n;
    coeff.data_mut().iter_mut().for_each(|c| *c /= n);
    if !loss.is_finite() || !coeff.is_finite() {
        return Err(Error::Numeric(format!("supcon loss evaluated to {loss}")));
    }
    Ok(g.custom(&[sim], Matrix::scalar(loss), Box::new(SupConBackward { coeff })))
}

struct SupConBackward {
    coeff: Matrix,
}

impl CustomOp for SupConBackward {
    fn name(&self) -> &'static str {
        "supcon_binned_loss"
    }

    fn backward(&self, _inputs: &[&Matrix], _output: &Matrix, grad: &Matrix) -> Vec<Matrix> {
        let g = grad.data()[0];
        vec![self.coeff.map(|c| c * g)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loss_of(emb: Matrix, labels: Vec<f64>, cfg: &SupConBinConfig) -> f64 {
        let mut g = Graph::new();
        let v = g.constant(emb);
        let batch = Batch::new(&g, v, labels).unwrap();
        let l = supcon_binned_loss(&mut g, &batch, cfg).unwrap();
        g.value(l).item().unwrap()
    }

    #[test]
    fn distinct_bins_give_zero() {
        let cfg = SupConBinConfig { bin_width: 1.0, ..Default::default() };
        let emb = Matrix::from_rows(&[vec![0.0, 1.0], vec![2.0, -1.0], vec![0.5, 0.5]]).unwrap();
        assert_eq!(loss_of(emb, vec![0.5, 1.5, 2.5], &cfg), 0.0);
    }

    #[test]
    fn two_samples_same_bin_identical_embeddings() {
        let cfg = SupConBinConfig::default();
        let emb = Matrix::filled(2, 3, 0.7);
        assert_eq!(loss_of(emb, vec![0.31, 0.32], &cfg), 0.0);
    }

    #[test]
    fn bad_bin_width_rejected() {
        let cfg = SupConBinConfig { bin_width: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
