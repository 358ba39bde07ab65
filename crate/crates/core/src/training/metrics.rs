use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{LinearPredictor, MlpEncoder};
use crate::numerics::Matrix;
use crate::rng::{self, stream};

/// Points used for the embedding Spearman statistic.
pub const SPEARMAN_MAX_POINTS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub mae: f64,
    pub rmse: f64,
    /// Rank correlation of pairwise embedding distance with pairwise label
    /// distance.
    pub spearman: f64,
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

/// Spearman's rho with average ranks for ties. Returns 0 when either side is
/// constant or fewer than two values are given.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dim("spearman", (x.len(), 1), (y.len(), 1)));
    }
    if x.len() < 2 {
        return Ok(0.0);
    }
    Ok(pearson(&average_ranks(x), &average_ranks(y)))
}

/// Spearman between Euclidean embedding distances and label distances over all
/// unordered pairs of at most [`SPEARMAN_MAX_POINTS`] rows (seeded subsample).
pub fn embedding_spearman(embeddings: &Matrix, labels: &[f64], seed: u64) -> Result<f64> {
    let n = labels.len();
    if embeddings.rows() != n {
        return Err(Error::dim("embedding_spearman", embeddings.shape(), (n, 1)));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    if n > SPEARMAN_MAX_POINTS {
        idx.shuffle(&mut rng::seeded(seed, stream::EVAL_SUBSAMPLE));
        idx.truncate(SPEARMAN_MAX_POINTS);
        idx.sort_unstable();
    }
    let mut emb_d = Vec::with_capacity(idx.len() * idx.len() / 2);
    let mut lab_d = Vec::with_capacity(emb_d.capacity());
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            let d: f64 = embeddings
                .row(i)
                .iter()
                .zip(embeddings.row(j))
                .map(|(p, q)| (p - q) * (p - q))
                .sum();
            emb_d.push(d.sqrt());
            lab_d.push((labels[i] - labels[j]).abs());
        }
    }
    spearman(&emb_d, &lab_d)
}

pub fn mae(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, y)| (p - y).abs()).sum::<f64>() / pred.len() as f64
}

pub fn rmse(pred: &[f64], target: &[f64]) -> f64 {
    (pred.iter().zip(target).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / pred.len() as f64).sqrt()
}

pub fn predict(encoder: &MlpEncoder, predictor: &LinearPredictor, x: &Matrix) -> Result<Vec<f64>> {
    predictor.predict_matrix(&encoder.embed(x)?)
}

pub fn evaluate(
    encoder: &MlpEncoder,
    predictor: &LinearPredictor,
    ds: &Dataset,
    seed: u64,
) -> Result<EvalMetrics> {
    if ds.is_empty() {
        return Err(Error::arg("cannot evaluate on an empty dataset"));
    }
    let z = encoder.embed(&ds.features)?;
    let pred = predictor.predict_matrix(&z)?;
    Ok(EvalMetrics {
        mae: mae(&pred, &ds.labels),
        rmse: rmse(&pred, &ds.labels),
        spearman: embedding_spearman(&z, &ds.labels, seed)?,
    })
}

/// MAE of rows whose label is inside `[lo, hi]` and of the rest; `None` for
/// an empty side.
pub fn band_mae(
    encoder: &MlpEncoder,
    predictor: &LinearPredictor,
    ds: &Dataset,
    lo: f64,
    hi: f64,
) -> Result<(Option<f64>, Option<f64>)> {
    let pred = predict(encoder, predictor, &ds.features)?;
    let (mut inside, mut outside) = ((0.0, 0usize), (0.0, 0usize));
    for (p, &y) in pred.iter().zip(&ds.labels) {
        let side = if (lo..=hi).contains(&y) {
            &mut inside
        } else {
            &mut outside
        };
        side.0 += (p - y).abs();
        side.1 += 1;
    }
    let mean = |(s, c): (f64, usize)| (c > 0).then(|| s / c as f64);
    Ok((mean(inside), mean(outside)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn average_ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn spearman_monotone_and_degenerate() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&x, &[1.0, 4.0, 9.0, 16.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&x, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(spearman(&x, &[1.0; 4]).unwrap(), 0.0);
        assert!(spearman(&x, &[1.0]).is_err());
    }

    #[test]
    fn identity_embedding_is_perfectly_ordered() {
        let y: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let z = Matrix::column(&y);
        assert!((embedding_spearman(&z, &y, 0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn error_metrics() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(mae(&[0.0, 0.0], &[3.0, -1.0]), 2.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, -1.0]) - 5f64.sqrt()).abs() < 1e-15);
    }
}
