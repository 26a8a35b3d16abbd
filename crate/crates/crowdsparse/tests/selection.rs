//! Selection behavior end to end: the decomposition identity at scale, grid
//! search structure, cross-validated scoring, method comparison, and the
//! deviation of the vote-disagreement score from its population target.

use ndarray::Array2;

use crowdsparse::data::Dataset;
use crowdsparse::em::EmConfig;
use crowdsparse::selection::{
    compare_methods, cross_validated_score, default_grid, empirical_risk, score_decomposition,
    select_lambda, select_lambda_run, surrogate_score, theory_check_deviation, Method,
};
use crowdsparse::simulate::{generate, FeatureSpec, SimulationConfig, VoteScheme};
use crowdsparse_testkit as oracle;

fn small_scenario(seed: u64, n: usize) -> Dataset {
    let config = SimulationConfig {
        n,
        seed,
        vote_seed: None,
        features: FeatureSpec {
            mean: vec![0.0, 0.0, 0.0],
            covariance: vec![
                vec![1.0, 0.2, 0.0],
                vec![0.2, 1.0, 0.1],
                vec![0.0, 0.1, 1.0],
            ],
            noise_covariates: 4,
        },
        beta_true: vec![0.1, 1.5, -1.0, 0.8],
        votes: VoteScheme::ConstantError {
            epsilon: vec![0.25, 0.15, 0.35],
        },
    };
    generate(&config).unwrap().dataset
}

#[test]
fn decomposition_identity_holds_on_a_thousand_instances() {
    let mut checked = 0;
    for seed in 0..1000u64 {
        let n = 2 + (seed as usize % 49);
        let d = 1 + (seed as usize % 6);
        let ds = if seed % 3 == 0 {
            // Complete votes.
            let base = oracle::random_dataset(seed, n, 2, d);
            let mut votes = Array2::zeros((n, d));
            for i in 0..n {
                for k in 0..d {
                    votes[(i, k)] = base.vote(i, k).unwrap_or(base.true_labels().unwrap()[i]);
                }
            }
            Dataset::new_complete(
                base.features().clone(),
                votes,
                Some(base.true_labels().unwrap().to_vec()),
            )
            .unwrap()
        } else {
            oracle::random_dataset(seed, n, 2, d)
        };
        let preds: Vec<u8> = (0..n).map(|i| ((seed as usize + i) % 2) as u8).collect();
        let s = surrogate_score(&preds, &ds).unwrap();
        let b = score_decomposition(&preds, &ds).unwrap();
        assert!(
            (s - (b.weighted_term + b.expert_error_term)).abs() < 1e-12,
            "seed {seed}: {s} vs {} + {}",
            b.weighted_term,
            b.expert_error_term
        );
        let naive = oracle::surrogate_by_double_loop(&preds, &ds);
        assert!((s - naive).abs() < 1e-12, "seed {seed}: {s} vs naive {naive}");
        checked += 1;
    }
    assert_eq!(checked, 1000);
}

#[test]
fn single_lambda_grid_chooses_that_lambda() {
    let ds = small_scenario(1, 160);
    let (train, test) = ds.split(&crowdsparse::SplitSpec::new(0.3, 5)).unwrap();
    let config = EmConfig {
        restarts: 2,
        seed: 3,
        ..EmConfig::default()
    };
    let report = select_lambda(&train, &test, &[0.8], &config).unwrap();
    assert_eq!(report.chosen_lambda, Some(0.8));
    assert_eq!(report.rows.len(), 1);
    assert!(!report.rows[0].failed);
    let s = report.rows[0].s_hat.unwrap();
    assert!((0.0..=1.0).contains(&s), "score {s}");
    assert!(report.rows[0].r_hat.is_some());
}

#[test]
fn duplicate_lambdas_produce_identical_rows() {
    let ds = small_scenario(2, 160);
    let (train, test) = ds.split(&crowdsparse::SplitSpec::new(0.3, 6)).unwrap();
    let config = EmConfig {
        restarts: 2,
        seed: 8,
        ..EmConfig::default()
    };
    let report = select_lambda(&train, &test, &[0.5, 0.5, 0.1], &config).unwrap();
    let a = &report.rows[0];
    let b = &report.rows[1];
    assert_eq!(a.s_hat, b.s_hat);
    assert_eq!(a.r_hat, b.r_hat);
    assert_eq!(a.nnz_gamma, b.nnz_gamma);
    assert_eq!(a.nnz_beta, b.nnz_beta);
    assert_eq!(a.converged, b.converged);
}

#[test]
fn chosen_lambda_nearly_minimizes_true_risk() {
    let ds = small_scenario(7, 1000);
    let (train, test) = ds.split(&crowdsparse::SplitSpec::new(0.4, 9)).unwrap();
    let grid = default_grid(&train, 8).unwrap();
    let config = EmConfig {
        restarts: 4,
        seed: 17,
        ..EmConfig::default()
    };
    let report = select_lambda(&train, &test, &grid, &config).unwrap();
    let chosen = report.chosen_lambda.unwrap();
    assert!(grid.contains(&chosen));
    let chosen_risk = report
        .rows
        .iter()
        .find(|r| r.lambda == chosen)
        .unwrap()
        .r_hat
        .unwrap();
    let best_risk = report
        .rows
        .iter()
        .filter_map(|r| r.r_hat)
        .fold(f64::INFINITY, f64::min);
    assert!(
        chosen_risk - best_risk <= 0.06,
        "risk at chosen lambda {chosen_risk} vs grid best {best_risk}"
    );
}

#[test]
fn cv_folds_score_identically_on_identical_units() {
    let n = 8;
    let features = Array2::from_elem((n, 2), 0.7);
    let mut votes = Array2::zeros((n, 3));
    for i in 0..n {
        votes[(i, 0)] = 1;
        votes[(i, 1)] = 1;
    }
    let ds = Dataset::new_complete(features, votes, None).unwrap();
    let config = EmConfig {
        restarts: 2,
        seed: 12,
        ..EmConfig::default()
    };
    // Any 2-fold partition of identical units is symmetric, so the mean
    // equals each fold's score; with a third identical fold it still holds.
    let two = cross_validated_score(&ds, 2, 0.4, &config).unwrap();
    let four = cross_validated_score(&ds, 4, 0.4, &config).unwrap();
    assert_eq!(two, four);
    assert!((0.0..=1.0).contains(&two));
}

#[test]
fn leave_one_out_completes_on_tiny_data() {
    let ds = small_scenario(3, 12);
    let config = EmConfig {
        restarts: 2,
        seed: 2,
        max_em_iters: 50,
        ..EmConfig::default()
    };
    let score = cross_validated_score(&ds, 12, 0.6, &config).unwrap();
    assert!((0.0..=1.0).contains(&score), "score {score}");
}

#[test]
fn cv_score_tracks_split_score() {
    let ds = small_scenario(4, 500);
    let config = EmConfig {
        restarts: 3,
        seed: 21,
        ..EmConfig::default()
    };
    let lambda = 1.0;
    let cv = cross_validated_score(&ds, 5, lambda, &config).unwrap();
    let (train, test) = ds.split(&crowdsparse::SplitSpec::new(0.2, 13)).unwrap();
    let report = select_lambda(&train, &test, &[lambda], &config).unwrap();
    let split = report.rows[0].s_hat.unwrap();
    assert!(
        (cv - split).abs() <= 0.05,
        "cv score {cv} vs split score {split}"
    );
}

#[test]
fn constant_method_scores_its_closed_form() {
    let ds = small_scenario(5, 200);
    let (train, test) = ds.split(&crowdsparse::SplitSpec::new(0.5, 4)).unwrap();
    let config = EmConfig {
        restarts: 2,
        seed: 1,
        ..EmConfig::default()
    };
    let report =
        compare_methods(&train, &test, &[Method::Constant(1)], &[], &config).unwrap();
    assert_eq!(report.method_rows.len(), 1);
    let row = &report.method_rows[0];
    assert_eq!(row.method, "constant-1");
    // Closed form: disagreement of the all-ones prediction with the votes.
    let ones = vec![1u8; test.n()];
    let want_s = surrogate_score(&ones, &test).unwrap();
    let want_r = empirical_risk(&ones, test.true_labels().unwrap()).unwrap();
    assert_eq!(row.s_hat, want_s);
    assert_eq!(row.r_hat, Some(want_r));
    // A single method is trivially both minimizers.
    assert!(row.s_min && row.r_min);
}

#[test]
fn comparison_flags_every_minimum_consistently() {
    let ds = small_scenario(6, 700);
    let (train, test) = ds.split(&crowdsparse::SplitSpec::new(0.4, 2)).unwrap();
    let grid = default_grid(&train, 6).unwrap();
    let config = EmConfig {
        restarts: 3,
        seed: 10,
        ..EmConfig::default()
    };
    let methods = [
        Method::Em,
        Method::EmSparse,
        Method::Majority,
        Method::Oracle,
        Method::Constant(0),
        Method::Constant(1),
    ];
    let report = compare_methods(&train, &test, &methods, &grid, &config).unwrap();
    assert_eq!(report.method_rows.len(), methods.len());
    let s_best = report
        .method_rows
        .iter()
        .map(|r| r.s_hat)
        .fold(f64::INFINITY, f64::min);
    for row in &report.method_rows {
        assert_eq!(row.s_min, row.s_hat == s_best, "method {}", row.method);
        assert!(row.r_hat.is_some());
    }
    let r_best = report
        .method_rows
        .iter()
        .map(|r| r.r_hat.unwrap())
        .fold(f64::INFINITY, f64::min);
    for row in &report.method_rows {
        assert_eq!(row.r_min, row.r_hat.unwrap() == r_best, "method {}", row.method);
    }
    // The EM-sparse grid rows ride along.
    assert_eq!(report.rows.len(), grid.len());
    assert!(report.chosen_lambda.is_some());
    // The constant predictors can never strictly beat the oracle's risk.
    let oracle_risk = report
        .method_rows
        .iter()
        .find(|r| r.method == "oracle")
        .unwrap()
        .r_hat
        .unwrap();
    for c in ["constant-0", "constant-1"] {
        let risk = report
            .method_rows
            .iter()
            .find(|r| r.method == c)
            .unwrap()
            .r_hat
            .unwrap();
        assert!(risk >= oracle_risk - 0.02, "{c} risk {risk} vs oracle {oracle_risk}");
    }
}

#[test]
fn deviation_collapses_without_expert_noise() {
    // Perfect experts make the surrogate equal the empirical risk, so the
    // deviation is pure sampling error and shrinks with the scoring set.
    let generator = SimulationConfig {
        n: 1,
        seed: 33,
        vote_seed: None,
        features: FeatureSpec {
            mean: vec![0.0],
            covariance: vec![vec![1.0]],
            noise_covariates: 0,
        },
        beta_true: vec![0.0, 2.0],
        votes: VoteScheme::ConstantError {
            epsilon: vec![0.0, 0.0, 0.0],
        },
    };
    let points = theory_check_deviation(&generator, &[100, 1600], 30).unwrap();
    assert_eq!(points.len(), 2);
    assert!(
        points[1].mean_sup_deviation < points[0].mean_sup_deviation,
        "{points:?}"
    );
    assert!(points[1].mean_sup_deviation < 0.05, "{points:?}");
}

#[test]
fn all_failing_lambdas_surface_as_a_numeric_error() {
    // A grid whose only entry is non-finite is rejected as invalid input,
    // not a numeric failure.
    let ds = small_scenario(8, 60);
    let (train, test) = ds.split(&crowdsparse::SplitSpec::new(0.3, 1)).unwrap();
    let config = EmConfig::default();
    let err = select_lambda_run(&train, &test, &[f64::INFINITY], &config).unwrap_err();
    assert!(!err.is_numeric());
}
