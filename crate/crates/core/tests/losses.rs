//! RNC against its brute-force oracle, the loss invariances, and the
//! comparison losses against naive references.

mod common;

use proptest::prelude::*;
use rand::Rng as _;
use rnc_core::losses::{
    l1_loss, rnc_loss, rnc_loss_bruteforce, rnc_loss_from_similarity, similarity_matrix, supcon_binned_loss,
    Batch, RncConfig, Similarity, SupConBinConfig,
};
use rnc_core::numerics::{Graph, Matrix};
use rnc_core::rng;

use common::{labels, normal_matrix, orthogonal};

fn rnc(emb: &Matrix, y: &[f64], cfg: &RncConfig) -> f64 {
    let mut g = Graph::new();
    let v = g.constant(emb.clone());
    let batch = Batch::new(&g, v, y.to_vec()).unwrap();
    let l = rnc_loss(&mut g, &batch, cfg).unwrap();
    g.value(l).data()[0]
}

fn rnc_from_sim(sim: &Matrix, y: &[f64], tau: f64) -> f64 {
    let mut g = Graph::new();
    let s = g.constant(sim.clone());
    let l = rnc_loss_from_similarity(&mut g, s, y, tau).unwrap();
    g.value(l).data()[0]
}

fn neg_l2_similarity(emb: &Matrix) -> Matrix {
    let mut g = Graph::new();
    let v = g.constant(emb.clone());
    let s = similarity_matrix(&mut g, v, Similarity::NegL2).unwrap();
    g.value(s).clone()
}

#[test]
fn fast_path_matches_oracle() {
    let mut worst = 0.0f64;
    for m in [2, 4, 8, 16] {
        for similarity in [Similarity::NegL2, Similarity::Cosine] {
            for tau in [0.5, 2.0] {
                let cfg = RncConfig { tau, similarity };
                for seed in 0..100 {
                    let mut rng = rng::seeded(seed, 200 + m as u64);
                    let emb = normal_matrix(&mut rng, m, 3);
                    let y = labels(&mut rng, m);
                    let fast = rnc(&emb, &y, &cfg);
                    let slow = rnc_loss_bruteforce(&emb, &y, &cfg).unwrap();
                    worst = worst.max((fast - slow).abs());
                    assert!(
                        (fast - slow).abs() <= 1e-10,
                        "M={m} {similarity} tau={tau} seed={seed}: {fast} vs {slow}"
                    );
                }
            }
        }
    }
    assert!(worst.is_finite());
}

#[test]
fn golden_four_point_instance() {
    // 40-digit evaluation of the defining sums for v = [0, 1, 2, 4],
    // y = [0, 1, 2, 3], tau = 1, neg-l2.
    const GOLDEN: f64 = 0.401_412_054_916_419_26;
    let emb = Matrix::column(&[0.0, 1.0, 2.0, 4.0]);
    let y = [0.0, 1.0, 2.0, 3.0];
    let cfg = RncConfig { tau: 1.0, similarity: Similarity::NegL2 };
    assert!((rnc_loss_bruteforce(&emb, &y, &cfg).unwrap() - GOLDEN).abs() < 1e-12);
    assert!((rnc(&emb, &y, &cfg) - GOLDEN).abs() < 1e-12);
}

#[test]
fn degenerate_cases() {
    for seed in 0..20 {
        let mut rng = rng::seeded(seed, 210);
        let emb = normal_matrix(&mut rng, 2, 4);
        let a: f64 = rng.random_range(-5.0..5.0);
        let y = [a, a + rng.random_range(0.1..3.0)];
        for similarity in [Similarity::NegL2, Similarity::Cosine] {
            let cfg = RncConfig { tau: rng.random_range(0.1..5.0), similarity };
            assert_eq!(rnc(&emb, &y, &cfg), 0.0);
        }
    }
    for m in [4usize, 6] {
        let row: Vec<f64> = vec![0.3, -1.2, 2.0];
        let emb = Matrix::from_rows(&vec![row; m]).unwrap();
        let y = vec![1.5; m];
        for similarity in [Similarity::NegL2, Similarity::Cosine] {
            let cfg = RncConfig { tau: 0.7, similarity };
            let expected = ((m - 1) as f64).ln();
            assert!((rnc(&emb, &y, &cfg) - expected).abs() < 1e-12);
            assert!((rnc_loss_bruteforce(&emb, &y, &cfg).unwrap() - expected).abs() < 1e-12);
        }
    }
}

fn naive_similarity(emb: &Matrix, kind: Similarity) -> Matrix {
    let m = emb.rows();
    let mut out = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let (a, b) = (emb.row(i), emb.row(j));
            out[(i, j)] = match kind {
                Similarity::NegL2 => {
                    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                    -(sq + 1e-12).sqrt()
                }
                Similarity::Cosine => {
                    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                    dot / (na * nb)
                }
            };
        }
    }
    out
}

#[test]
fn similarity_matches_per_pair_reference() {
    for seed in 0..20 {
        let mut rng = rng::seeded(seed, 220);
        let emb = normal_matrix(&mut rng, 4, 3);
        for kind in [Similarity::NegL2, Similarity::Cosine] {
            let mut g = Graph::new();
            let v = g.constant(emb.clone());
            let s = similarity_matrix(&mut g, v, kind).unwrap();
            let s = g.value(s);
            let reference = naive_similarity(&emb, kind);
            for i in 0..4 {
                for j in 0..4 {
                    if i != j {
                        assert!((s[(i, j)] - reference[(i, j)]).abs() < 1e-12, "{kind} ({i},{j})");
                    }
                }
            }
        }
    }
}

/// Plain double loop over anchors and positives, straight from the loss
/// definition.
fn supcon_reference(emb: &Matrix, y: &[f64], cfg: &SupConBinConfig) -> f64 {
    let m = y.len();
    let sim = naive_similarity(emb, cfg.similarity);
    let bin = |v: f64| (v / cfg.bin_width).floor();
    let mut total = 0.0;
    let mut anchors = 0;
    for i in 0..m {
        let positives: Vec<usize> = (0..m).filter(|&p| p != i && bin(y[p]) == bin(y[i])).collect();
        if positives.is_empty() {
            continue;
        }
        let denom: f64 = (0..m).filter(|&a| a != i).map(|a| (sim[(i, a)] / cfg.tau).exp()).sum();
        let mut li = 0.0;
        for &p in &positives {
            li -= ((sim[(i, p)] / cfg.tau).exp() / denom).ln();
        }
        total += li / positives.len() as f64;
        anchors += 1;
    }
    if anchors == 0 {
        0.0
    } else {
        total / anchors as f64
    }
}

#[test]
fn supcon_matches_reference() {
    for m in [4usize, 6, 10] {
        for seed in 0..50 {
            let mut rng = rng::seeded(seed, 230 + m as u64);
            let emb = normal_matrix(&mut rng, m, 3);
            let y: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
            for similarity in [Similarity::NegL2, Similarity::Cosine] {
                let cfg = SupConBinConfig { tau: 0.8, bin_width: 0.3, similarity };
                let mut g = Graph::new();
                let v = g.constant(emb.clone());
                let batch = Batch::new(&g, v, y.clone()).unwrap();
                let l = supcon_binned_loss(&mut g, &batch, &cfg).unwrap();
                let fast = g.value(l).data()[0];
                let slow = supcon_reference(&emb, &y, &cfg);
                assert!((fast - slow).abs() < 1e-10, "M={m} seed={seed}: {fast} vs {slow}");
            }
        }
    }
}

#[test]
fn l1_matches_direct_evaluation() {
    for seed in 0..20 {
        let mut rng = rng::seeded(seed, 240);
        let m = rng.random_range(1..20);
        let pred: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
        let direct = pred.iter().zip(&y).map(|(p, t)| (p - t).abs()).sum::<f64>() / m as f64;
        let mut g = Graph::new();
        let p = g.constant(Matrix::column(&pred));
        let l = l1_loss(&mut g, p, &y).unwrap();
        assert!((g.value(l).data()[0] - direct).abs() < 1e-12);
    }
}

/// Random RNC instance: embeddings, labels and a config.
fn instance() -> impl Strategy<Value = (Matrix, Vec<f64>, RncConfig)> {
    (2usize..=12, 1usize..=4, any::<u64>(), prop::bool::ANY, 0.2f64..4.0).prop_map(|(m, d, seed, cosine, tau)| {
        let mut rng = rng::seeded(seed, 250);
        let emb = normal_matrix(&mut rng, m, d);
        let y = labels(&mut rng, m);
        let similarity = if cosine { Similarity::Cosine } else { Similarity::NegL2 };
        (emb, y, RncConfig { tau, similarity })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn non_negative((emb, y, cfg) in instance()) {
        prop_assert!(rnc(&emb, &y, &cfg) >= 0.0);
    }

    #[test]
    fn batch_permutation((emb, y, cfg) in instance(), seed in any::<u64>()) {
        let mut order: Vec<usize> = (0..y.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng::seeded(seed, 251));
        let emb_p = emb.select_rows(&order);
        let y_p: Vec<f64> = order.iter().map(|&i| y[i]).collect();
        prop_assert!((rnc(&emb, &y, &cfg) - rnc(&emb_p, &y_p, &cfg)).abs() <= 1e-9);
    }

    #[test]
    fn label_affine_continuous(
        (emb, _, cfg) in instance(),
        seed in any::<u64>(),
        a in prop_oneof![-10.0f64..-0.1, 0.1f64..10.0],
        b in -100.0f64..100.0,
    ) {
        let mut rng = rng::seeded(seed, 252);
        let y: Vec<f64> = (0..emb.rows()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y2: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        prop_assert_eq!(rnc(&emb, &y, &cfg), rnc(&emb, &y2, &cfg));
    }

    #[test]
    fn label_affine_with_ties(
        (emb, _, cfg) in instance(),
        seed in any::<u64>(),
        k in -4i32..=4,
        negate in prop::bool::ANY,
        b in -64i32..64,
    ) {
        // Integer labels, power-of-two slopes and integer offsets keep every
        // transformed distance exact, so ties stay ties.
        let mut rng = rng::seeded(seed, 253);
        let y: Vec<f64> = (0..emb.rows()).map(|_| rng.random_range(0..4) as f64).collect();
        let a = if negate { -(2f64.powi(k)) } else { 2f64.powi(k) };
        let y2: Vec<f64> = y.iter().map(|v| a * v + b as f64).collect();
        prop_assert_eq!(rnc(&emb, &y, &cfg), rnc(&emb, &y2, &cfg));
    }

    #[test]
    fn rigid_motion_neg_l2((emb, y, cfg) in instance(), seed in any::<u64>()) {
        let cfg = RncConfig { similarity: Similarity::NegL2, ..cfg };
        let mut rng = rng::seeded(seed, 254);
        let d = emb.cols();
        let shift = normal_matrix(&mut rng, 1, d).map(|x| 5.0 * x);
        let mut moved = emb.clone();
        for r in 0..moved.rows() {
            for (v, s) in moved.row_mut(r).iter_mut().zip(shift.data()) {
                *v += s;
            }
        }
        let base = rnc(&emb, &y, &cfg);
        prop_assert!((base - rnc(&moved, &y, &cfg)).abs() <= 1e-9);
        let rotated = emb.matmul(&orthogonal(&mut rng, d)).unwrap();
        prop_assert!((base - rnc(&rotated, &y, &cfg)).abs() <= 1e-9);
    }

    #[test]
    fn similarity_shift((emb, y, cfg) in instance(), c in -20.0f64..20.0) {
        let sim = neg_l2_similarity(&emb);
        let shifted = sim.map(|s| s + c);
        let a = rnc_from_sim(&sim, &y, cfg.tau);
        let b = rnc_from_sim(&shifted, &y, cfg.tau);
        prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
    }

    #[test]
    fn temperature_identity((emb, y, cfg) in instance()) {
        let sim = neg_l2_similarity(&emb);
        let a = rnc_from_sim(&sim, &y, cfg.tau);
        let b = rnc_from_sim(&sim.map(|s| s / cfg.tau), &y, 1.0);
        prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
    }
}
