//! Independent reference implementations used to cross-check the library:
//! a Newton solver for weighted logistic regression, brute-force posterior
//! enumeration, product-form likelihoods, and naive score loops. Everything
//! here favors obviousness over speed and shares no code with the library
//! paths it checks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crowdsparse::data::Dataset;
use crowdsparse::em::CrowdParams;
use crowdsparse::logreg::WeightedProblem;

fn sigma(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve_linear(a: &Array2<f64>, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    assert_eq!(a.dim(), (n, n));
    let mut m = vec![vec![0.0; n + 1]; n];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = a[(i, j)];
        }
        m[i][n] = b[i];
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r, &s| m[r][col].abs().partial_cmp(&m[s][col].abs()).unwrap())
            .unwrap();
        m.swap(col, pivot);
        assert!(m[col][col].abs() > 1e-12, "singular system");
        for row in (col + 1)..n {
            let f = m[row][col] / m[col][col];
            for j in col..=n {
                m[row][j] -= f * m[col][j];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = m[row][n];
        for j in (row + 1)..n {
            s -= m[row][j] * x[j];
        }
        x[row] = s / m[row][row];
    }
    x
}

/// Weighted unpenalized logistic log-likelihood.
pub fn weighted_loglik(rows: &Array2<f64>, weights: &[f64], responses: &[u8], coef: &[f64]) -> f64 {
    let mut ll = 0.0;
    for i in 0..rows.nrows() {
        let eta: f64 = (0..rows.ncols()).map(|j| coef[j] * rows[(i, j)]).sum();
        // log sigma(eta) for y=1, log sigma(-eta) for y=0, stably.
        let t = if responses[i] == 1 { eta } else { -eta };
        let log_p = if t > 0.0 {
            -(1.0 + (-t).exp()).ln()
        } else {
            t - (1.0 + t.exp()).ln()
        };
        ll += weights[i] * log_p;
    }
    ll
}

/// Newton-Raphson fit of weighted logistic regression (no penalty), with
/// step halving on the log-likelihood. Panics if it cannot converge — the
/// caller is expected to feed well-posed problems.
pub fn newton_logistic(rows: &Array2<f64>, weights: &[f64], responses: &[u8]) -> Vec<f64> {
    let p = rows.ncols();
    let m = rows.nrows();
    let mut coef = vec![0.0; p];
    for _ in 0..200 {
        let mut grad = vec![0.0; p];
        let mut hess = Array2::<f64>::zeros((p, p));
        for i in 0..m {
            let eta: f64 = (0..p).map(|j| coef[j] * rows[(i, j)]).sum();
            let mu = sigma(eta);
            let r = weights[i] * (f64::from(responses[i]) - mu);
            let v = weights[i] * mu * (1.0 - mu);
            for j in 0..p {
                grad[j] += r * rows[(i, j)];
                for l in 0..p {
                    hess[(j, l)] += v * rows[(i, j)] * rows[(i, l)];
                }
            }
        }
        let gnorm = grad.iter().map(|g| g.abs()).fold(0.0, f64::max);
        if gnorm < 1e-11 {
            return coef;
        }
        let step = solve_linear(&hess, &grad);
        let base = weighted_loglik(rows, weights, responses, &coef);
        let mut scale = 1.0;
        loop {
            let trial: Vec<f64> = coef
                .iter()
                .zip(&step)
                .map(|(c, s)| c + scale * s)
                .collect();
            if weighted_loglik(rows, weights, responses, &trial) >= base - 1e-12 {
                coef = trial;
                break;
            }
            scale *= 0.5;
            assert!(scale > 1e-12, "newton step failed to make progress");
        }
    }
    let final_grad_ok = {
        let mut grad: Vec<f64> = vec![0.0; p];
        for i in 0..m {
            let eta: f64 = (0..p).map(|j| coef[j] * rows[(i, j)]).sum();
            let mu = sigma(eta);
            for (j, g) in grad.iter_mut().enumerate() {
                *g += weights[i] * (f64::from(responses[i]) - mu) * rows[(i, j)];
            }
        }
        grad.iter().all(|g| g.abs() < 1e-7)
    };
    assert!(final_grad_ok, "newton did not converge");
    coef
}

/// Penalized objective of a [`WeightedProblem`] (negative log-likelihood
/// plus L1 term), written from the definition.
pub fn penalized_objective(problem: &WeightedProblem, coef: &[f64]) -> f64 {
    let mut obj = -weighted_loglik(
        &problem.rows,
        &problem.weights,
        &problem.responses,
        coef,
    );
    for (c, pf) in coef.iter().zip(&problem.penalty_factor) {
        obj += problem.lambda * pf * c.abs();
    }
    obj
}

/// Exhaustive minimization of a 2-coefficient penalized problem on a grid,
/// refined around the incumbent. `span` bounds |coef|.
pub fn grid_search_2d(problem: &WeightedProblem, span: f64) -> Vec<f64> {
    assert_eq!(problem.rows.ncols(), 2);
    let mut center = vec![0.0, 0.0];
    let mut half = span;
    let steps = 40usize;
    for _ in 0..14 {
        let mut best = (f64::INFINITY, center.clone());
        for a in 0..=steps {
            for b in 0..=steps {
                let c0 = center[0] - half + 2.0 * half * a as f64 / steps as f64;
                let c1 = center[1] - half + 2.0 * half * b as f64 / steps as f64;
                // Snap near-zero candidates to exact zero so the L1 kink is
                // always probed.
                for c1x in [c1, if c1.abs() < half / steps as f64 { 0.0 } else { c1 }] {
                    let obj = penalized_objective(problem, &[c0, c1x]);
                    if obj < best.0 {
                        best = (obj, vec![c0, c1x]);
                    }
                }
            }
        }
        center = best.1;
        half /= steps as f64 / 4.0;
    }
    center
}

/// P(Z_i = 1 | votes, x) by direct enumeration of the two latent states,
/// using plain products of probabilities (no log-space tricks).
pub fn posterior_by_enumeration(params: &CrowdParams, ds: &Dataset) -> Vec<f64> {
    let mut out = Vec::with_capacity(ds.n());
    for i in 0..ds.n() {
        let x = ds.feature_row(i);
        let eta = params.beta[0]
            + params.beta[1..]
                .iter()
                .zip(x.iter())
                .map(|(b, v)| b * v)
                .sum::<f64>();
        let mu = sigma(eta);
        let reliability_slope: f64 = params.gamma.iter().zip(x.iter()).map(|(g, v)| g * v).sum();
        let mut p1 = mu;
        let mut p0 = 1.0 - mu;
        for (k, y) in ds.available_votes(i) {
            let correct = sigma(params.alpha[k] + reliability_slope);
            p1 *= if y == 1 { correct } else { 1.0 - correct };
            p0 *= if y == 0 { correct } else { 1.0 - correct };
        }
        out.push(p1 / (p1 + p0));
    }
    out
}

/// Expected complete-data log posterior at soft labels `z`, from the
/// product-form definition: per unit, the label term plus one agreement
/// term per available vote, minus the L1 penalty on slopes.
pub fn complete_log_posterior_oracle(
    params: &CrowdParams,
    z: &[f64],
    ds: &Dataset,
    lambda: f64,
) -> f64 {
    let mut total = 0.0;
    for i in 0..ds.n() {
        let x = ds.feature_row(i);
        let eta = params.beta[0]
            + params.beta[1..]
                .iter()
                .zip(x.iter())
                .map(|(b, v)| b * v)
                .sum::<f64>();
        let mu = sigma(eta);
        total += z[i] * mu.ln() + (1.0 - z[i]) * (1.0 - mu).ln();
        let slope: f64 = params.gamma.iter().zip(x.iter()).map(|(g, v)| g * v).sum();
        for (k, y) in ds.available_votes(i) {
            let correct = sigma(params.alpha[k] + slope);
            let d = 1.0 + 2.0 * z[i] * f64::from(y) - z[i] - f64::from(y);
            total += d * correct.ln() + (1.0 - d) * (1.0 - correct).ln();
        }
    }
    let penalty: f64 = params.gamma.iter().map(|g| g.abs()).sum::<f64>()
        + params.beta[1..].iter().map(|b| b.abs()).sum::<f64>();
    total - lambda * penalty
}

/// Surrogate score by the naive double loop: per unit, fraction of its
/// available votes the prediction disagrees with; then the plain mean.
pub fn surrogate_by_double_loop(predictions: &[u8], ds: &Dataset) -> f64 {
    let mut acc = 0.0;
    for i in 0..ds.n() {
        let mut miss = 0.0;
        let mut cnt = 0.0;
        for (_, y) in ds.available_votes(i) {
            cnt += 1.0;
            if y != predictions[i] {
                miss += 1.0;
            }
        }
        acc += miss / cnt;
    }
    acc / ds.n() as f64
}

/// Gradient of the unpenalized expected complete-data log posterior in
/// (alpha, gamma, beta), from the same product-form definition.
pub fn complete_gradient_oracle(params: &CrowdParams, z: &[f64], ds: &Dataset) -> Vec<f64> {
    let d = params.d();
    let k = params.k();
    let mut grad = vec![0.0; d + k + (k + 1)];
    for i in 0..ds.n() {
        let x = ds.feature_row(i);
        let eta = params.beta[0]
            + params.beta[1..]
                .iter()
                .zip(x.iter())
                .map(|(b, v)| b * v)
                .sum::<f64>();
        let mu = sigma(eta);
        let slope: f64 = params.gamma.iter().zip(x.iter()).map(|(g, v)| g * v).sum();
        // Label block: (z - mu) times the design row (1, x).
        grad[d + k] += z[i] - mu;
        for j in 0..k {
            grad[d + k + 1 + j] += (z[i] - mu) * x[j];
        }
        // Agreement block: (d_ik - c_ik) times the row (e_k, x).
        for (expert, y) in ds.available_votes(i) {
            let correct = sigma(params.alpha[expert] + slope);
            let dd = 1.0 + 2.0 * z[i] * f64::from(y) - z[i] - f64::from(y);
            grad[expert] += dd - correct;
            for j in 0..k {
                grad[d + j] += (dd - correct) * x[j];
            }
        }
    }
    grad
}

/// Deterministic random weighted logistic problem: intercept column plus
/// standard-normal features, positive weights, Bernoulli responses.
pub fn random_problem(
    seed: u64,
    m: usize,
    extra_cols: usize,
    lambda: f64,
) -> WeightedProblem {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let p = extra_cols + 1;
    let mut rows = Array2::zeros((m, p));
    let mut weights = Vec::with_capacity(m);
    let mut responses = Vec::with_capacity(m);
    for i in 0..m {
        rows[(i, 0)] = 1.0;
        for j in 1..p {
            rows[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
        weights.push(rng.gen_range(0.2..2.0));
        responses.push(u8::from(rng.gen_bool(0.5)));
    }
    let mut penalty_factor = vec![1.0; p];
    penalty_factor[0] = 0.0;
    WeightedProblem {
        rows,
        weights,
        responses,
        penalty_factor,
        lambda,
    }
}

/// Deterministic random dataset with masked votes and true labels; every
/// unit keeps at least one vote.
pub fn random_dataset(seed: u64, n: usize, k: usize, d: usize) -> Dataset {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut features = Array2::zeros((n, k));
    let mut votes = Array2::zeros((n, d));
    let mut available = Array2::from_elem((n, d), false);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        for j in 0..k {
            features[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
        let z = u8::from(rng.gen_bool(0.5));
        labels.push(z);
        let keep = rng.gen_range(1..=d);
        let mut kept = 0;
        for expert in 0..d {
            // Keep experts until the quota is filled; guarantees >= 1.
            if kept < keep && (d - expert <= keep - kept || rng.gen_bool(0.6)) {
                kept += 1;
                available[(i, expert)] = true;
                let correct = rng.gen_bool(0.8);
                votes[(i, expert)] = if correct { z } else { 1 - z };
            }
        }
    }
    Dataset::new(features, votes, available, Some(labels)).unwrap()
}

/// Deterministic random parameters sized for a dataset.
pub fn random_params(seed: u64, d: usize, k: usize, spread: f64) -> CrowdParams {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut draw = |_: usize| -> f64 { spread * rng.sample::<f64, _>(StandardNormal) };
    CrowdParams {
        alpha: (0..d).map(&mut draw).collect(),
        gamma: (0..k).map(&mut draw).collect(),
        beta: (0..=k).map(&mut draw).collect(),
    }
}
