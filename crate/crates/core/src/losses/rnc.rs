use std::cmp::Ordering;

use super::{similarity_matrix, validate_labels, Batch, RncConfig};
use crate::error::{Error, Result};
use crate::numerics::{CustomOp, Graph, LogSumExp, Matrix, Var};

/// Ranking set `S_{i,j} = { k != i : |y_k - y_i| >= |y_j - y_i| }`.
///
/// Ties are included, so the set always contains `j`.
pub fn higher_rank_set(labels: &[f64], anchor: usize, candidate: usize) -> Result<Vec<usize>> {
    let n = labels.len();
    if anchor >= n || candidate >= n {
        return Err(Error::arg(format!(
            "indices ({anchor}, {candidate}) out of range for {n} labels"
        )));
    }
    if anchor == candidate {
        return Err(Error::arg("anchor and candidate must differ"));
    }
    let yi = labels[anchor];
    let reach = (labels[candidate] - yi).abs();
    Ok((0..n)
        .filter(|&k| k != anchor && (labels[k] - yi).abs() >= reach)
        .collect())
}

pub fn rnc_loss(g: &mut Graph, batch: &Batch, cfg: &RncConfig) -> Result<Var> {
    cfg.validate()?;
    validate_labels(&batch.labels, g.value(batch.embeddings).rows())?;
    let sim = similarity_matrix(g, batch.embeddings, cfg.similarity)?;
    rnc_loss_from_similarity(g, sim, &batch.labels, cfg.tau)
}

/// RNC loss on a precomputed `M x M` similarity node. Diagonal entries are
/// never read.
///
/// For each anchor the other samples are sorted by decreasing label distance,
/// so every ranking set is a prefix of that order (extended over ties) and its
/// log-sum-exp is a running total. That makes the loss `O(M^2 log M)`.
pub fn rnc_loss_from_similarity(g: &mut Graph, sim: Var, labels: &[f64], tau: f64) -> Result<Var> {
    super::check_tau(tau)?;
    let s = g.value(sim);
    let m = s.rows();
    if s.cols() != m {
        return Err(Error::dim("rnc_loss similarity", s.shape(), (m, m)));
    }
    validate_labels(labels, m)?;

    let scale = 1.0 / (m as f64 * (m - 1) as f64);
    let mut total = 0.0;
    let mut coeff = Matrix::zeros(m, m);
    let mut order: Vec<usize> = Vec::with_capacity(m - 1);
    // (start, end, lse) for each tie group in `order`.
    let mut groups: Vec<(usize, usize, f64)> = Vec::with_capacity(m - 1);

    for i in 0..m {
        let yi = labels[i];
        let logits = |k: usize| s[(i, k)] / tau;

        order.clear();
        order.extend((0..m).filter(|&k| k != i));
        order.sort_by(|&a, &b| {
            let (da, db) = ((labels[a] - yi).abs(), (labels[b] - yi).abs());
            db.partial_cmp(&da).unwrap_or(Ordering::Equal).then(a.cmp(&b))
        });

        groups.clear();
        let mut acc = LogSumExp::new();
        let mut start = 0;
        while start < order.len() {
            let d = (labels[order[start]] - yi).abs();
            let mut end = start;
            while end < order.len() && (labels[order[end]] - yi).abs() == d {
                acc.push(logits(order[end]));
                end += 1;
            }
            let lse = acc.value();
            for &j in &order[start..end] {
                total += lse - logits(j);
            }
            groups.push((start, end, lse));
            start = end;
        }

        // d loss / d logit_k = scale * (sum over groups at or after k's of
        // |G| * exp(logit_k - lse_G) - 1); the suffix sum is kept in log space.
        let mut suffix = LogSumExp::new();
        for &(start, end, lse) in groups.iter().rev() {
            suffix.push(((end - start) as f64).ln() - lse);
            let log_w = suffix.value();
            for &k in &order[start..end] {
                coeff[(i, k)] = scale * ((logits(k) + log_w).exp() - 1.0) / tau;
            }
        }
    }

    let loss = total * scale;
    if !loss.is_finite() || !coeff.is_finite() {
        return Err(Error::Numeric(format!("rnc loss evaluated to {loss}")));
    }
    Ok(g.custom(&[sim], Matrix::scalar(loss), Box::new(RncBackward { coeff })))
}

struct RncBackward {
    coeff: Matrix,
}

impl CustomOp for RncBackward {
    fn name(&self) -> &'static str {
        "rnc_loss"
    }

    fn backward(&self, _inputs: &[&Matrix], _output: &Matrix, grad: &Matrix) -> Vec<Matrix> {
        let g = grad.data()[0];
        vec![self.coeff.map(|c| c * g)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::Similarity;

    fn loss_of(emb: Matrix, labels: Vec<f64>, cfg: RncConfig) -> f64 {
        let mut g = Graph::new();
        let v = g.constant(emb);
        let batch = Batch::new(&g, v, labels).unwrap();
        let l = rnc_loss(&mut g, &batch, &cfg).unwrap();
        g.value(l).item().unwrap()
    }

    #[test]
    fn ranking_set_examples() {
        let y = [0.0, 1.0, 2.0];
        assert_eq!(higher_rank_set(&y, 0, 2).unwrap(), vec![2]);
        assert_eq!(higher_rank_set(&y, 0, 1).unwrap(), vec![1, 2]);
        assert_eq!(higher_rank_set(&[0.0, 1.0, 1.0], 0, 1).unwrap(), vec![1, 2]);
        assert!(higher_rank_set(&y, 1, 1).is_err());
        assert!(higher_rank_set(&y, 0, 3).is_err());
    }

    #[test]
    fn two_samples_distinct_labels_is_exactly_zero() {
        for sim in [Similarity::NegL2, Similarity::Cosine] {
            let cfg = RncConfig { tau: 0.7, similarity: sim };
            let emb = Matrix::from_rows(&[vec![0.3, -1.0], vec![2.0, 0.5]]).unwrap();
            assert_eq!(loss_of(emb, vec![1.0, 4.0], cfg), 0.0);
        }
    }

    #[test]
    fn fully_symmetric_batch_is_ln_m_minus_one() {
        let emb = Matrix::filled(4, 3, 0.25);
        let l = loss_of(emb, vec![5.0; 4], RncConfig::default());
        assert!((l - 3f64.ln()).abs() < 1e-12, "{l}");
    }

    #[test]
    fn rejects_single_sample_and_bad_tau() {
        let mut g = Graph::new();
        let v = g.constant(Matrix::zeros(1, 2));
        assert!(Batch::new(&g, v, vec![0.0]).is_err());

        let v = g.constant(Matrix::zeros(2, 2));
        let batch = Batch::new(&g, v, vec![0.0, 1.0]).unwrap();
        let cfg = RncConfig { tau: 0.0, ..Default::default() };
        assert!(rnc_loss(&mut g, &batch, &cfg).is_err());
    }

    #[test]
    fn non_finite_similarity_is_a_numeric_error() {
        let mut g = Graph::new();
        let sim = g.constant(Matrix::from_rows(&[vec![0.0, f64::NAN], vec![f64::NAN, 0.0]]).unwrap());
        assert!(matches!(
            rnc_loss_from_similarity(&mut g, sim, &[0.0, 1.0], 1.0),
            Err(Error::Numeric(_))
        ));
    }
}
