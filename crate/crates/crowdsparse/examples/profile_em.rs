use std::time::Instant;

use crowdsparse::em::EmConfig;
use crowdsparse::logreg::SolverConfig;
use crowdsparse::selection::{compare_methods, default_grid, Method};
use crowdsparse::simulate::{generate, FeatureSpec, SimulationConfig, VoteScheme};

fn scenario(n: usize, seed: u64) -> crowdsparse::data::Dataset {
    let features = FeatureSpec {
        mean: vec![1.0, 2.0, 3.0, 4.0, 5.0],
        covariance: vec![
            vec![0.50, 0.10, 0.25, 0.10, 0.10],
            vec![0.10, 0.50, 0.10, 0.05, 0.04],
            vec![0.25, 0.10, 0.80, 0.01, 0.10],
            vec![0.10, 0.05, 0.01, 0.40, 0.10],
            vec![0.10, 0.04, 0.10, 0.10, 0.50],
        ],
        noise_covariates: 50,
    };
    let config = SimulationConfig {
        n,
        seed,
        vote_seed: None,
        features,
        beta_true: vec![-0.1, 1.0, 0.25, 0.24, -0.3, -0.2],
        votes: VoteScheme::ConstantError {
            epsilon: vec![0.5, 0.15, 0.47],
        },
    };
    generate(&config).expect("generate").dataset
}

fn main() {
    let config = EmConfig {
        restarts: 10,
        seed: 9,
        em_tol: 1e-5,
        solver: SolverConfig {
            max_outer: 25,
            ..SolverConfig::default()
        },
        ..EmConfig::default()
    };
    let methods = [Method::Em, Method::EmSparse, Method::Majority, Method::Oracle];

    let grand = Instant::now();
    for seed in [41u64, 42, 43] {
        let train = scenario(1500, seed);
        let test = scenario(1000, 1000 + seed);

        let grid30 = default_grid(&train, 30).expect("grid");
        let lambda_max = grid30[0];
        let grid: Vec<f64> = (0..5)
            .map(|i| lambda_max * 6f64.powf(-(i as f64) / 4.0))
            .collect();

        let t = Instant::now();
        let report = compare_methods(&train, &test, &methods, &grid, &config).expect("compare");
        let dt = t.elapsed().as_secs_f64();
        println!("--- seed {seed}: {dt:.1}s  lambda_max {lambda_max:.2}");
        for row in &report.method_rows {
            println!(
                "  {:<9} lambda {:>8}  s_hat {:.4}  r_hat {:.4}  s_min {} r_min {}",
                row.method,
                row.lambda.map_or("-".into(), |l| format!("{l:.3}")),
                row.s_hat,
                row.r_hat.unwrap_or(f64::NAN),
                row.s_min,
                row.r_min
            );
        }
        for row in &report.rows {
            println!(
                "  grid lambda {:8.3}  s_hat {:.4}  r_hat {:.4}  nnz_g {:2}  conv {}",
                row.lambda,
                row.s_hat.unwrap_or(f64::NAN),
                row.r_hat.unwrap_or(f64::NAN),
                row.nnz_gamma,
                row.converged
            );
        }
    }
    println!("grand total {:.1}s", grand.elapsed().as_secs_f64());
}
