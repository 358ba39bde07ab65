use crate::error::{Error, Result};
use crate::numerics::{Graph, Matrix, Var};

/// Mean absolute error between an `M x 1` prediction node and `targets`.
/// The subgradient at a zero residual is 0.
pub fn l1_loss(g: &mut Graph, predictions: Var, targets: &[f64]) -> Result<Var> {
    let shape = g.value(predictions).shape();
    if shape.1 != 1 || shape.0 != targets.len() || targets.is_empty() {
        return Err(Error::dim("l1_loss", shape, (targets.len(), 1)));
    }
    let t = g.constant(Matrix::column(targets));
    let diff = g.sub(predictions, t)?;
    let abs = g.abs(diff);
    g.mean(abs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(pred: &[f64], y: &[f64]) -> f64 {
        let mut g = Graph::new();
        let p = g.constant(Matrix::column(pred));
        let l = l1_loss(&mut g, p, y).unwrap();
        g.value(l).item().unwrap()
    }

    #[test]
    fn perfect_prediction_is_zero() {
        assert_eq!(eval(&[1.5, -2.0, 0.0], &[1.5, -2.0, 0.0]), 0.0);
    }

    #[test]
    fn symmetric_misses() {
        assert_eq!(eval(&[0.0, 0.0], &[1.0, -1.0]), 1.0);
    }

    #[test]
    fn length_mismatch() {
        let mut g = Graph::new();
        let p = g.constant(Matrix::column(&[0.0, 1.0]));
        assert!(matches!(
            l1_loss(&mut g, p, &[0.0]),
            Err(Error::Dimension { .. })
        ));
    }
}
