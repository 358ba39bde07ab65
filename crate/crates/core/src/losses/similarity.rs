use super::Similarity;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Var};

/// Keeps the distance gradient bounded when two embeddings coincide.
pub(crate) const NEG_L2_EPS: f64 = 1e-12;

/// Differentiable `M x M` similarity matrix of the rows of `embeddings`.
pub fn similarity_matrix(g: &mut Graph, embeddings: Var, kind: Similarity) -> Result<Var> {
    let m = g.value(embeddings);
    if m.rows() < 2 {
        return Err(Error::arg(format!(
            "similarity needs at least 2 rows, got {}",
            m.rows()
        )));
    }
    match kind {
        Similarity::NegL2 => {
            let sq = g.pairwise_sq_l2(embeddings)?;
            let shifted = g.add_scalar(sq, NEG_L2_EPS);
            let dist = g.sqrt(shifted)?;
            Ok(g.scale(dist, -1.0))
        }
        Similarity::Cosine => {
            if let Some(i) = (0..m.rows()).find(|&i| m.row(i).iter().all(|&x| x == 0.0)) {
                return Err(Error::Numeric(format!(
                    "row {i} has zero norm; cosine similarity is undefined"
                )));
            }
            let unit = g.row_normalize(embeddings)?;
            let unit_t = g.transpose(unit);
            g.matmul(unit, unit_t)
        }
    }
}
