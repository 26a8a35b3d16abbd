//! Baseline behavior: majority vote as a label recovery device and the
//! logistic fits built on imputed or true labels.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crowdsparse::baselines::{majority_logistic, majority_vote, oracle_logistic};
use crowdsparse::data::Dataset;
use crowdsparse::logreg::SolverConfig;
use crowdsparse_testkit as oracle;

#[test]
fn many_mediocre_experts_vote_their_way_to_high_accuracy() {
    // 42 independent experts, each right 70% of the time: the majority is
    // almost always right even though no individual is reliable.
    let n = 10_000;
    let d = 42;
    let mut rng = ChaCha12Rng::seed_from_u64(2024);
    let mut votes = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let z = u8::from(rng.gen_bool(0.5));
        labels.push(z);
        for k in 0..d {
            let correct = rng.gen_bool(0.7);
            votes[(i, k)] = if correct { z } else { 1 - z };
        }
    }
    let features = Array2::zeros((n, 1));
    let ds = Dataset::new_complete(features, votes, Some(labels.clone())).unwrap();
    let recovered = majority_vote(&ds).labels;
    let correct = recovered
        .iter()
        .zip(&labels)
        .filter(|(a, b)| a == b)
        .count();
    let accuracy = correct as f64 / n as f64;
    assert!(accuracy >= 0.99, "majority accuracy {accuracy}");
}

#[test]
fn majority_logistic_matches_newton_on_imputed_labels() {
    let solver = SolverConfig::default();
    for seed in 0..10u64 {
        let ds = oracle::random_dataset(seed, 80, 3, 5);
        let fit = majority_logistic(&ds, 0.0, &solver).unwrap();

        let labels = majority_vote(&ds).labels;
        let mut rows = Array2::zeros((ds.n(), ds.k() + 1));
        for i in 0..ds.n() {
            rows[(i, 0)] = 1.0;
            for j in 0..ds.k() {
                rows[(i, j + 1)] = ds.features()[(i, j)];
            }
        }
        let weights = vec![1.0; ds.n()];
        let want = oracle::newton_logistic(&rows, &weights, &labels);
        for (g, w) in fit.values.iter().zip(&want) {
            assert!((g - w).abs() < 1e-6, "seed {seed}: {:?} vs {want:?}", fit.values);
        }
    }
}

#[test]
fn oracle_equals_majority_when_votes_are_unanimous_truth() {
    for seed in 20..25u64 {
        let base = oracle::random_dataset(seed, 60, 2, 3);
        let labels = base.true_labels().unwrap().to_vec();
        let mut votes = Array2::zeros((base.n(), 3));
        for i in 0..base.n() {
            for k in 0..3 {
                votes[(i, k)] = labels[i];
            }
        }
        let ds = Dataset::new_complete(base.features().clone(), votes, Some(labels)).unwrap();
        let solver = SolverConfig::default();
        let a = majority_logistic(&ds, 0.3, &solver).unwrap();
        let b = oracle_logistic(&ds, 0.3, &solver).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-12, "seed {seed}");
        }
    }
}

#[test]
fn oracle_outperforms_majority_under_heavy_vote_noise() {
    // With three bad experts the majority labels are badly corrupted, while
    // the oracle sees the truth: its training risk should be clearly lower.
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let n = 500;
    let mut features = Array2::zeros((n, 2));
    let mut votes = Array2::zeros((n, 3));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let x0: f64 = rng.gen_range(-2.0..2.0);
        let x1: f64 = rng.gen_range(-2.0..2.0);
        features[(i, 0)] = x0;
        features[(i, 1)] = x1;
        let z = u8::from(1.5 * x0 - x1 > 0.0);
        labels.push(z);
        for k in 0..3 {
            let correct = rng.gen_bool(0.62);
            votes[(i, k)] = if correct { z } else { 1 - z };
        }
    }
    let ds = Dataset::new_complete(features, votes, Some(labels.clone())).unwrap();
    let solver = SolverConfig::default();
    let risk = |coef: &[f64]| -> f64 {
        let mut wrong = 0;
        for i in 0..ds.n() {
            let eta = coef[0]
                + coef[1] * ds.features()[(i, 0)]
                + coef[2] * ds.features()[(i, 1)];
            if u8::from(eta >= 0.0) != labels[i] {
                wrong += 1;
            }
        }
        wrong as f64 / ds.n() as f64
    };
    let maj = risk(&majority_logistic(&ds, 0.5, &solver).unwrap().values);
    let orc = risk(&oracle_logistic(&ds, 0.5, &solver).unwrap().values);
    assert!(orc <= maj, "oracle risk {orc} vs majority {maj}");
    assert!(orc < 0.1, "oracle risk {orc} unexpectedly high");
}
