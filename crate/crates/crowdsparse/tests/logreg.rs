//! Solver cross-checks against independent references: Newton iteration for
//! the unpenalized case, exhaustive grid search for a penalized case, and
//! structural invariances of the weighted L1 objective.

use crowdsparse::logreg::{self, SolverConfig, WeightedProblem};
use crowdsparse_testkit as oracle;

fn fit_values(problem: &WeightedProblem) -> Vec<f64> {
    logreg::fit(problem, &SolverConfig::default())
        .expect("fit")
        .values
}

/// Optimality checks at 1e-6 need the iterate converged beyond 1e-6, so the
/// tests asserting them solve tighter than the defaults.
fn fit_tight(problem: &WeightedProblem) -> Vec<f64> {
    let tight = SolverConfig {
        tol: 1e-10,
        ..SolverConfig::default()
    };
    logreg::fit(problem, &tight).expect("fit").values
}

#[test]
fn matches_newton_without_penalty() {
    for seed in 0..40u64 {
        let m = 60 + (seed as usize % 5) * 30;
        let p = 1 + seed as usize % 5;
        let problem = oracle::random_problem(seed, m, p, 0.0);
        let got = fit_values(&problem);
        let want = oracle::newton_logistic(&problem.rows, &problem.weights, &problem.responses);
        for (g, w) in got.iter().zip(&want) {
            assert!(
                (g - w).abs() < 1e-6,
                "seed {seed}: {got:?} vs newton {want:?}"
            );
        }
    }
}

#[test]
fn kkt_conditions_hold_under_penalty() {
    for seed in 100..130u64 {
        for lambda in [0.1, 1.0, 5.0] {
            let mut problem = oracle::random_problem(seed, 80, 4, lambda);
            problem.lambda = lambda;
            let coef = fit_tight(&problem);
            let viol = logreg::kkt_violation(&problem, &coef).unwrap();
            assert!(viol <= 1e-6, "seed {seed} lambda {lambda}: violation {viol}");
        }
    }
}

#[test]
fn duplicated_row_equals_doubled_weight() {
    for seed in 200..210u64 {
        let base = oracle::random_problem(seed, 50, 3, 0.4);
        let m = base.rows.nrows();

        // A: last row appears twice with its original weight.
        let mut rows_a = base.rows.clone();
        rows_a.push_row(base.rows.row(m - 1)).unwrap();
        let mut weights_a = base.weights.clone();
        weights_a.push(base.weights[m - 1]);
        let mut responses_a = base.responses.clone();
        responses_a.push(base.responses[m - 1]);
        let a = WeightedProblem {
            rows: rows_a,
            weights: weights_a,
            responses: responses_a,
            penalty_factor: base.penalty_factor.clone(),
            lambda: base.lambda,
        };

        // B: same row once with doubled weight.
        let mut weights_b = base.weights.clone();
        weights_b[m - 1] *= 2.0;
        let b = WeightedProblem {
            rows: base.rows.clone(),
            weights: weights_b,
            responses: base.responses.clone(),
            penalty_factor: base.penalty_factor.clone(),
            lambda: base.lambda,
        };

        let ca = fit_tight(&a);
        let cb = fit_tight(&b);
        for (x, y) in ca.iter().zip(&cb) {
            assert!((x - y).abs() < 1e-8, "seed {seed}: {ca:?} vs {cb:?}");
        }
    }
}

#[test]
fn scaling_weights_and_lambda_together_changes_nothing() {
    for seed in 300..308u64 {
        let base = oracle::random_problem(seed, 70, 3, 0.8);
        for c in [0.25, 4.0] {
            let scaled = WeightedProblem {
                rows: base.rows.clone(),
                weights: base.weights.iter().map(|w| w * c).collect(),
                responses: base.responses.clone(),
                penalty_factor: base.penalty_factor.clone(),
                lambda: base.lambda * c,
            };
            let x = fit_values(&base);
            let y = fit_values(&scaled);
            for (a, b) in x.iter().zip(&y) {
                assert!((a - b).abs() < 1e-7, "seed {seed} c {c}: {x:?} vs {y:?}");
            }
        }
    }
}

#[test]
fn sparsity_grows_monotonically_along_most_of_the_path() {
    // Shrinking lambda should only ever release coefficients; tiny
    // non-monotonicities are tolerated because the solver is iterative.
    let mut steps = 0;
    let mut violations = 0;
    for seed in 400..410u64 {
        let base = oracle::random_problem(seed, 90, 6, 0.0);
        let grid: Vec<f64> = (0..12).map(|i| 8.0 * 0.55f64.powi(i)).collect();
        let mut prev_nnz = None;
        for &lambda in &grid {
            let problem = WeightedProblem {
                lambda,
                ..base.clone()
            };
            let coef = fit_values(&problem);
            let nnz = coef
                .iter()
                .zip(&problem.penalty_factor)
                .filter(|(c, pf)| **c != 0.0 && **pf > 0.0)
                .count();
            if let Some(p) = prev_nnz {
                steps += 1;
                if nnz < p {
                    violations += 1;
                }
            }
            prev_nnz = Some(nnz);
        }
    }
    assert!(
        (violations as f64) <= 0.05 * steps as f64,
        "{violations} of {steps} path steps lost nonzeros"
    );
}

#[test]
fn solution_is_a_local_corner_minimum() {
    // Coordinate perturbations around the solution may not improve the
    // penalized objective: catches wrong soft-threshold constants.
    for seed in 500..510u64 {
        let problem = oracle::random_problem(seed, 60, 4, 0.6);
        let coef = fit_values(&problem);
        let base = oracle::penalized_objective(&problem, &coef);
        for j in 0..coef.len() {
            for delta in [1e-3, -1e-3] {
                let mut trial = coef.clone();
                trial[j] += delta;
                let obj = oracle::penalized_objective(&problem, &trial);
                assert!(
                    obj >= base - 1e-9,
                    "seed {seed} coord {j} delta {delta}: {obj} < {base}"
                );
            }
        }
    }
}

#[test]
fn agrees_with_exhaustive_grid_search_on_two_coefficients() {
    for seed in 600..605u64 {
        let problem = oracle::random_problem(seed, 60, 1, 0.5);
        let got = fit_values(&problem);
        let brute = oracle::grid_search_2d(&problem, 4.0);
        let obj_got = oracle::penalized_objective(&problem, &got);
        let obj_brute = oracle::penalized_objective(&problem, &brute);
        assert!(
            obj_got <= obj_brute + 1e-9,
            "seed {seed}: solver {obj_got} worse than grid {obj_brute}"
        );
        for (g, b) in got.iter().zip(&brute) {
            assert!(
                (g - b).abs() < 2e-3,
                "seed {seed}: {got:?} vs grid oracle {brute:?}"
            );
        }
    }
}

#[test]
fn warm_and_cold_starts_land_on_the_same_answer() {
    for seed in 700..706u64 {
        let problem = oracle::random_problem(seed, 80, 4, 0.3);
        let cold = fit_values(&problem);
        let offset: Vec<f64> = cold.iter().map(|c| c + 0.5).collect();
        let warm = logreg::fit_from(&problem, &offset, &SolverConfig::default())
            .expect("warm fit")
            .values;
        for (a, b) in cold.iter().zip(&warm) {
            assert!((a - b).abs() < 1e-6, "seed {seed}: {cold:?} vs {warm:?}");
        }
    }
}
