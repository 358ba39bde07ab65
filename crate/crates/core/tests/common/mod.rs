#![allow(dead_code)]

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rnc_core::numerics::Matrix;
use rnc_core::rng::Rng;

pub fn normal_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Labels drawn either from a continuum or from a handful of integers, so
/// that some instances contain ties.
pub fn labels(rng: &mut Rng, m: usize) -> Vec<f64> {
    if rng.random_bool(0.5) {
        (0..m).map(|_| rng.random_range(-3.0..3.0)).collect()
    } else {
        (0..m).map(|_| rng.random_range(0..4) as f64).collect()
    }
}

/// Random orthogonal `d x d` matrix from Gram-Schmidt on a Gaussian matrix.
pub fn orthogonal(rng: &mut Rng, d: usize) -> Matrix {
    let a = normal_matrix(rng, d, d);
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(d);
    for c in 0..d {
        let mut v: Vec<f64> = (0..d).map(|r| a[(r, c)]).collect();
        for u in &q {
            let dot: f64 = v.iter().zip(u).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        q.push(v.into_iter().map(|x| x / norm).collect());
    }
    // q holds the columns.
    let mut m = Matrix::zeros(d, d);
    for (c, col) in q.iter().enumerate() {
        for (r, x) in col.iter().enumerate() {
            m[(r, c)] = *x;
        }
    }
    m
}
