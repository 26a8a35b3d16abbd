//! Penalized EM for binary classification from noisy expert votes.
//!
//! Latent model: unit i has an unobserved label Z_i with
//! `P(Z_i = 1 | x_i) = sigmoid(beta_0 + beta . x_i)`, and expert k reports
//! the true label with probability `sigmoid(alpha_k + gamma . x_i)`
//! (independently across experts given the unit). The E-step produces soft
//! labels; the M-step splits into two independent weighted L1-penalized
//! logistic regressions, one for the expert reliability parameters and one
//! for the classifier itself.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use ndarray::Array2;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::logreg::{self, log_sigmoid, sigmoid, SolverConfig, WeightedProblem};

#[derive(Debug, Clone, PartialEq)]
pub struct CrowdParams {
    /// Per-expert reliability intercepts, length d.
    pub alpha: Vec<f64>,
    /// Shared reliability slopes over features, length k.
    pub gamma: Vec<f64>,
    /// Classifier coefficients `[intercept, slopes...]`, length k+1.
    pub beta: Vec<f64>,
}

impl CrowdParams {
    pub fn zeros(d: usize, k: usize) -> Self {
        CrowdParams {
            alpha: vec![0.0; d],
            gamma: vec![0.0; k],
            beta: vec![0.0; k + 1],
        }
    }

    /// The sign-flipped parameter point, which swaps the roles of the two
    /// latent classes and leaves the observed-data likelihood unchanged.
    pub fn negated(&self) -> Self {
        CrowdParams {
            alpha: self.alpha.iter().map(|v| -v).collect(),
            gamma: self.gamma.iter().map(|v| -v).collect(),
            beta: self.beta.iter().map(|v| -v).collect(),
        }
    }

    pub fn d(&self) -> usize {
        self.alpha.len()
    }

    pub fn k(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate_for(&self, ds: &Dataset) -> Result<()> {
        if self.alpha.len() != ds.d() {
            return Err(Error::Dim(format!(
                "{} alpha entries for {} experts",
                self.alpha.len(),
                ds.d()
            )));
        }
        if self.gamma.len() != ds.k() {
            return Err(Error::Dim(format!(
                "{} gamma entries for {} features",
                self.gamma.len(),
                ds.k()
            )));
        }
        if self.beta.len() != ds.k() + 1 {
            return Err(Error::Dim(format!(
                "{} beta entries for {} features plus intercept",
                self.beta.len(),
                ds.k()
            )));
        }
        let finite = self
            .alpha
            .iter()
            .chain(&self.gamma)
            .chain(&self.beta)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Invalid("non-finite parameter value".into()));
        }
        Ok(())
    }

    fn classifier_logit(&self, x: ndarray::ArrayView1<'_, f64>) -> f64 {
        let mut eta = self.beta[0];
        for (b, v) in self.beta[1..].iter().zip(x.iter()) {
            eta += b * v;
        }
        eta
    }

    fn reliability_slope(&self, x: ndarray::ArrayView1<'_, f64>) -> f64 {
        self.gamma.iter().zip(x.iter()).map(|(g, v)| g * v).sum()
    }
}

#[derive(Debug, Clone)]
pub struct EmConfig {
    pub lambda: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Relative change in the penalized observed-data objective that counts
    /// as convergence.
    pub em_tol: f64,
    pub max_em_iters: usize,
    pub solver: SolverConfig,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            lambda: 0.0,
            restarts: 30,
            seed: 0,
            em_tol: 1e-6,
            max_em_iters: 200,
            solver: SolverConfig::default(),
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::Invalid(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if self.restarts == 0 {
            return Err(Error::Invalid("restarts must be >= 1".into()));
        }
        if !(self.em_tol > 0.0) {
            return Err(Error::Invalid("em_tol must be strictly positive".into()));
        }
        if self.max_em_iters == 0 {
            return Err(Error::Invalid("max_em_iters must be >= 1".into()));
        }
        Ok(())
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        let mut c = self.clone();
        c.lambda = lambda;
        c
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: CrowdParams,
    /// Soft labels from an E-step at the returned parameters.
    pub posterior: Vec<f64>,
    /// Penalized observed-data log-likelihood after each EM iteration of the
    /// winning restart; nondecreasing.
    pub objective_trace: Vec<f64>,
    /// Final value of the penalized observed-data log-likelihood.
    pub penalized_observed: f64,
    /// Whether sign disambiguation negated the parameters.
    pub flipped: bool,
    /// Whether the winning restart met `em_tol` before `max_em_iters`.
    pub em_converged: bool,
}

/// Probability that a vote `y` agrees with a soft label `z`:
/// `1 + 2zy - z - y`, linear in both arguments.
pub fn expected_agreement(z: f64, y: u8) -> f64 {
    let y = y as f64;
    1.0 + 2.0 * z * y - z - y
}

/// Posterior probability of class 1 for every unit given votes and features.
///
/// Computed in log-space: the log-odds are the classifier logit plus, for
/// each available vote, `(2y - 1) * (alpha_k + gamma . x)`.
pub fn e_step(params: &CrowdParams, ds: &Dataset) -> Result<Vec<f64>> {
    params.validate_for(ds)?;
    let mut posterior = Vec::with_capacity(ds.n());
    for i in 0..ds.n() {
        let x = ds.feature_row(i);
        let mut log_odds = params.classifier_logit(x);
        let slope = params.reliability_slope(x);
        for (k, y) in ds.available_votes(i) {
            let direction = 2.0 * y as f64 - 1.0;
            log_odds += direction * (params.alpha[k] + slope);
        }
        posterior.push(sigmoid(log_odds));
    }
    Ok(posterior)
}

/// Penalized complete-data log-posterior at soft labels `z`.
pub fn complete_log_posterior(
    params: &CrowdParams,
    z: &[f64],
    ds: &Dataset,
    lambda: f64,
) -> Result<f64> {
    params.validate_for(ds)?;
    check_posterior(z, ds.n())?;
    check_lambda(lambda)?;
    let mut total = 0.0;
    for i in 0..ds.n() {
        let x = ds.feature_row(i);
        let eta = params.classifier_logit(x);
        let slope = params.reliability_slope(x);
        total += z[i] * log_sigmoid(eta) + (1.0 - z[i]) * log_sigmoid(-eta);
        for (k, y) in ds.available_votes(i) {
            let agreement = expected_agreement(z[i], y);
            let t = params.alpha[k] + slope;
            total += agreement * log_sigmoid(t) + (1.0 - agreement) * log_sigmoid(-t);
        }
    }
    total -= lambda * (l1(&params.gamma) + l1(&params.beta[1..]));
    if !total.is_finite() {
        return Err(Error::Numeric(
            "complete-data objective is not finite".into(),
        ));
    }
    Ok(total)
}

/// Penalized observed-data log-likelihood, with the latent label summed out
/// exactly per unit via log-sum-exp.
pub fn penalized_observed_loglik(
    params: &CrowdParams,
    ds: &Dataset,
    lambda: f64,
) -> Result<f64> {
    params.validate_for(ds)?;
    check_lambda(lambda)?;
    let mut total = 0.0;
    for i in 0..ds.n() {
        let x = ds.feature_row(i);
        let eta = params.classifier_logit(x);
        let slope = params.reliability_slope(x);
        let mut if_one = log_sigmoid(eta);
        let mut if_zero = log_sigmoid(-eta);
        for (k, y) in ds.available_votes(i) {
            let t = params.alpha[k] + slope;
            if y == 1 {
                if_one += log_sigmoid(t);
                if_zero += log_sigmoid(-t);
            } else {
                if_one += log_sigmoid(-t);
                if_zero += log_sigmoid(t);
            }
        }
        total += log_sum_exp2(if_one, if_zero);
    }
    total -= lambda * (l1(&params.gamma) + l1(&params.beta[1..]));
    if !total.is_finite() {
        return Err(Error::Numeric(
            "observed-data objective is not finite".into(),
        ));
    }
    Ok(total)
}

/// Weighted problem whose maximizer is the M-step update of `(alpha, gamma)`.
///
/// Each available vote contributes two rows over `d` one-hot expert columns
/// (unpenalized) followed by the `k` feature columns (penalized): first a
/// block of response-1 rows weighted by the expected agreement, then the
/// duplicated block of response-0 rows weighted by its complement.
pub fn build_expert_problem(
    posterior: &[f64],
    ds: &Dataset,
    lambda: f64,
) -> Result<WeightedProblem> {
    check_posterior(posterior, ds.n())?;
    check_lambda(lambda)?;
    let (d, k) = (ds.d(), ds.k());
    let votes = ds.total_votes();
    let mut rows = Array2::zeros((2 * votes, d + k));
    let mut weights = vec![0.0; 2 * votes];
    let mut responses = vec![0u8; 2 * votes];
    let mut r = 0;
    for i in 0..ds.n() {
        for (expert, y) in ds.available_votes(i) {
            let agreement = expected_agreement(posterior[i], y);
            rows[(r, expert)] = 1.0;
            rows[(votes + r, expert)] = 1.0;
            for (j, v) in ds.feature_row(i).iter().enumerate() {
                rows[(r, d + j)] = *v;
                rows[(votes + r, d + j)] = *v;
            }
            weights[r] = agreement;
            responses[r] = 1;
            weights[votes + r] = 1.0 - agreement;
            r += 1;
        }
    }
    let mut penalty_factor = vec![0.0; d];
    penalty_factor.extend(std::iter::repeat(1.0).take(k));
    Ok(WeightedProblem {
        rows,
        weights,
        responses,
        penalty_factor,
        lambda,
    })
}

/// Weighted problem whose maximizer is the M-step update of `beta`.
///
/// Every unit contributes a response-1 row weighted by its soft label and a
/// duplicated response-0 row weighted by the complement, over an unpenalized
/// intercept column followed by the `k` penalized feature columns.
pub fn build_truth_problem(
    posterior: &[f64],
    ds: &Dataset,
    lambda: f64,
) -> Result<WeightedProblem> {
    check_posterior(posterior, ds.n())?;
    check_lambda(lambda)?;
    let (n, k) = (ds.n(), ds.k());
    let mut rows = Array2::zeros((2 * n, 1 + k));
    let mut weights = vec![0.0; 2 * n];
    let mut responses = vec![0u8; 2 * n];
    for i in 0..n {
        rows[(i, 0)] = 1.0;
        rows[(n + i, 0)] = 1.0;
        for (j, v) in ds.feature_row(i).iter().enumerate() {
            rows[(i, 1 + j)] = *v;
            rows[(n + i, 1 + j)] = *v;
        }
        weights[i] = posterior[i];
        responses[i] = 1;
        weights[n + i] = 1.0 - posterior[i];
    }
    let mut penalty_factor = vec![0.0];
    penalty_factor.extend(std::iter::repeat(1.0).take(k));
    Ok(WeightedProblem {
        rows,
        weights,
        responses,
        penalty_factor,
        lambda,
    })
}

/// One M-step: solves the expert and truth problems independently.
pub fn m_step(
    posterior: &[f64],
    ds: &Dataset,
    lambda: f64,
    solver: &SolverConfig,
) -> Result<CrowdParams> {
    m_step_warm(posterior, ds, lambda, solver, None)
}

/// Curvature caches for the two M-step subproblems, letting consecutive
/// EM iterations reuse factorizations while the posterior drifts slowly.
#[derive(Debug, Default)]
struct MStepCaches {
    expert: logreg::NewtonCache,
    truth: logreg::NewtonCache,
}

fn m_step_warm(
    posterior: &[f64],
    ds: &Dataset,
    lambda: f64,
    solver: &SolverConfig,
    warm: Option<&CrowdParams>,
) -> Result<CrowdParams> {
    m_step_cached(posterior, ds, lambda, solver, warm, &mut MStepCaches::default())
}

fn m_step_cached(
    posterior: &[f64],
    ds: &Dataset,
    lambda: f64,
    solver: &SolverConfig,
    warm: Option<&CrowdParams>,
    caches: &mut MStepCaches,
) -> Result<CrowdParams> {
    let (d, k) = (ds.d(), ds.k());
    let expert = build_expert_problem(posterior, ds, lambda)?;
    let expert_init = match warm {
        Some(p) => {
            let mut v = p.alpha.clone();
            v.extend_from_slice(&p.gamma);
            v
        }
        None => vec![0.0; d + k],
    };
    let expert_fit = logreg::fit_from_cached(&expert, &expert_init, solver, &mut caches.expert)?;

    let truth = build_truth_problem(posterior, ds, lambda)?;
    let truth_init = match warm {
        Some(p) => p.beta.clone(),
        None => vec![0.0; 1 + k],
    };
    let truth_fit = logreg::fit_from_cached(&truth, &truth_init, solver, &mut caches.truth)?;

    Ok(CrowdParams {
        alpha: expert_fit.values[..d].to_vec(),
        gamma: expert_fit.values[d..].to_vec(),
        beta: truth_fit.values,
    })
}

/// MAP-EM fit with random restarts; the best restart by penalized
/// observed-data log-likelihood wins, with ties resolved toward the lowest
/// restart index. The returned parameters are sign-disambiguated against the
/// majority vote.
pub fn fit_map_em(
    ds: &Dataset,
    config: &EmConfig,
    init_beta_mean: &[f64],
) -> Result<FitResult> {
    fit_map_em_with_warm(ds, config, init_beta_mean, None)
}

/// [`fit_map_em`] with one extra deterministic starting point appended after
/// the random restarts (used to warm-start along a lambda path).
pub fn fit_map_em_with_warm(
    ds: &Dataset,
    config: &EmConfig,
    init_beta_mean: &[f64],
    warm_start: Option<&CrowdParams>,
) -> Result<FitResult> {
    config.validate()?;
    if init_beta_mean.len() != ds.k() + 1 {
        return Err(Error::Dim(format!(
            "{} starting-mean entries for {} features plus intercept",
            init_beta_mean.len(),
            ds.k()
        )));
    }
    if init_beta_mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite starting mean".into()));
    }
    if let Some(p) = warm_start {
        p.validate_for(ds)?;
    }

    let mut starts: Vec<CrowdParams> = (0..config.restarts)
        .map(|r| draw_start(config.seed, r, ds, init_beta_mean))
        .collect();
    if let Some(p) = warm_start {
        starts.push(p.clone());
    }

    let runs: Vec<Result<(CrowdParams, Vec<f64>, bool)>> = starts
        .into_par_iter()
        .enumerate()
        .map(|(idx, start)| {
            run_em(ds, config, start)
                .map_err(|e| Error::Numeric(format!("restart {idx}: {e}")))
        })
        .collect();

    let mut best: Option<(f64, usize)> = None;
    for (idx, run) in runs.iter().enumerate() {
        match run {
            Ok((_, trace, _)) => {
                let objective = *trace.last().expect("em ran at least one iteration");
                // Strict comparison keeps the lowest index on exact ties.
                if best.map_or(true, |(b, _)| objective > b) {
                    best = Some((objective, idx));
                }
            }
            Err(e) => return Err(Error::Numeric(e.to_string())),
        }
    }
    let (objective, winner) = best.expect("at least one restart");
    let (params, trace, converged) = match runs.into_iter().nth(winner) {
        Some(Ok(run)) => run,
        _ => unreachable!(),
    };
    let posterior = e_step(&params, ds)?;
    let result = FitResult {
        params,
        posterior,
        objective_trace: trace,
        penalized_observed: objective,
        flipped: false,
        em_converged: converged,
    };
    Ok(disambiguate_sign(result, ds))
}

fn draw_start(seed: u64, restart: usize, ds: &Dataset, init_beta_mean: &[f64]) -> CrowdParams {
    // One substream per restart keeps restarts order-independent.
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    let alpha = (0..ds.d()).map(|_| rng.sample(StandardNormal)).collect();
    let gamma = (0..ds.k()).map(|_| rng.sample(StandardNormal)).collect();
    let beta = init_beta_mean
        .iter()
        .map(|m| m + rng.sample::<f64, _>(StandardNormal))
        .collect();
    CrowdParams { alpha, gamma, beta }
}

fn run_em(
    ds: &Dataset,
    config: &EmConfig,
    start: CrowdParams,
) -> Result<(CrowdParams, Vec<f64>, bool)> {
    let mut params = start;
    params.validate_for(ds)?;
    let mut trace = Vec::new();
    let mut previous = f64::NEG_INFINITY;
    let mut converged = false;
    let mut caches = MStepCaches::default();
    for iter in 0..config.max_em_iters {
        let posterior = e_step(&params, ds)?;
        params = m_step_cached(
            &posterior,
            ds,
            config.lambda,
            &config.solver,
            Some(&params),
            &mut caches,
        )
        .map_err(|e| Error::Numeric(format!("em iteration {iter}: {e}")))?;
        let objective = penalized_observed_loglik(&params, ds, config.lambda)?;
        trace.push(objective);
        if previous.is_finite()
            && (objective - previous).abs() <= config.em_tol * (1.0 + previous.abs())
        {
            converged = true;
            break;
        }
        previous = objective;
    }
    Ok((params, trace, converged))
}

/// Resolves the label-swap symmetry: between the fitted parameters and their
/// negation, keeps whichever classifier agrees with the majority vote on
/// more units (ties keep the unnegated fit). The posterior is complemented
/// alongside a flip; the observed-data objective is unaffected.
pub fn disambiguate_sign(result: FitResult, ds: &Dataset) -> FitResult {
    let majority = crate::baselines::majority_vote(ds).labels;
    let mut agree = 0usize;
    let mut agree_negated = 0usize;
    for i in 0..ds.n() {
        let eta = result.params.classifier_logit(ds.feature_row(i));
        let label = u8::from(eta >= 0.0);
        let negated_label = u8::from(-eta >= 0.0);
        if label == majority[i] {
            agree += 1;
        }
        if negated_label == majority[i] {
            agree_negated += 1;
        }
    }
    if agree_negated > agree {
        FitResult {
            params: result.params.negated(),
            posterior: result.posterior.iter().map(|z| 1.0 - z).collect(),
            flipped: !result.flipped,
            ..result
        }
    } else {
        result
    }
}

/// Class-1 probability from features alone.
pub fn predict_proba(params: &CrowdParams, x: &[f64]) -> Result<f64> {
    if x.len() + 1 != params.beta.len() {
        return Err(Error::Dim(format!(
            "{} features for {} classifier coefficients",
            x.len(),
            params.beta.len()
        )));
    }
    let eta = params.beta[0]
        + params.beta[1..]
            .iter()
            .zip(x)
            .map(|(b, v)| b * v)
            .sum::<f64>();
    Ok(sigmoid(eta))
}

/// Class-1 probability from features plus any subset of expert votes,
/// given as `(expert index, vote)` pairs.
pub fn predict_with_votes(
    params: &CrowdParams,
    x: &[f64],
    votes: &[(usize, u8)],
) -> Result<f64> {
    if x.len() + 1 != params.beta.len() || x.len() != params.gamma.len() {
        return Err(Error::Dim(format!(
            "{} features for a model with {} reliability slopes",
            x.len(),
            params.gamma.len()
        )));
    }
    let mut seen = vec![false; params.alpha.len()];
    let mut log_odds = params.beta[0]
        + params.beta[1..]
            .iter()
            .zip(x)
            .map(|(b, v)| b * v)
            .sum::<f64>();
    let slope: f64 = params.gamma.iter().zip(x).map(|(g, v)| g * v).sum();
    for &(expert, y) in votes {
        if expert >= params.alpha.len() {
            return Err(Error::Invalid(format!(
                "vote from expert {expert}, model has {}",
                params.alpha.len()
            )));
        }
        if seen[expert] {
            return Err(Error::Invalid(format!(
                "duplicate vote from expert {expert}"
            )));
        }
        seen[expert] = true;
        if y > 1 {
            return Err(Error::Invalid("votes must be 0 or 1".into()));
        }
        log_odds += (2.0 * y as f64 - 1.0) * (params.alpha[expert] + slope);
    }
    Ok(sigmoid(log_odds))
}

fn l1(values: &[f64]) -> f64 {
    values.iter().map(|v| v.abs()).sum()
}

fn log_sum_exp2(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn check_posterior(z: &[f64], n: usize) -> Result<()> {
    if z.len() != n {
        return Err(Error::Dim(format!("{} soft labels for {n} units", z.len())));
    }
    if z.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
        return Err(Error::Invalid("soft labels must lie in [0, 1]".into()));
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::Invalid(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny() -> Dataset {
        let features = array![[0.5], [-1.0], [2.0]];
        let votes = array![[1, 0], [0, 0], [1, 1]];
        Dataset::new_complete(features, votes, None).unwrap()
    }

    #[test]
    fn expected_agreement_extremes() {
        assert_eq!(expected_agreement(1.0, 1), 1.0);
        assert_eq!(expected_agreement(1.0, 0), 0.0);
        assert_eq!(expected_agreement(0.0, 0), 1.0);
        assert_eq!(expected_agreement(0.0, 1), 0.0);
        assert_eq!(expected_agreement(0.25, 1), 0.25);
        assert_eq!(expected_agreement(0.25, 0), 0.75);
    }

    #[test]
    fn e_step_with_zero_params_is_half() {
        let ds = tiny();
        let params = CrowdParams::zeros(2, 1);
        let posterior = e_step(&params, &ds).unwrap();
        assert!(posterior.iter().all(|z| (z - 0.5).abs() < 1e-15));
    }

    #[test]
    fn e_step_single_confident_expert() {
        // One unit, one expert voting 1, alpha = 10, everything else 0:
        // log-odds = 10, posterior = sigmoid(10).
        let ds = Dataset::new_complete(array![[0.0]], array![[1]], None).unwrap();
        let params = CrowdParams {
            alpha: vec![10.0],
            gamma: vec![0.0],
            beta: vec![0.0, 0.0],
        };
        let posterior = e_step(&params, &ds).unwrap();
        assert!((posterior[0] - sigmoid(10.0)).abs() < 1e-12);
        assert!((posterior[0] - 0.999_954_602_131_297_6).abs() < 1e-12);
    }

    #[test]
    fn complete_log_posterior_all_zero_params() {
        // All parameters 0 and lambda 0: every Bernoulli factor is 1/2, so
        // the value is (n*d + n) * log(1/2) regardless of z.
        let ds = tiny();
        let params = CrowdParams::zeros(2, 1);
        let z = vec![0.3, 0.9, 0.5];
        let value = complete_log_posterior(&params, &z, &ds, 0.0).unwrap();
        let expected = (ds.n() * ds.d() + ds.n()) as f64 * 0.5_f64.ln();
        assert!((value - expected).abs() < 1e-12);
    }

    #[test]
    fn penalty_separates_from_likelihood() {
        let ds = tiny();
        let params = CrowdParams {
            alpha: vec![0.3, -0.2],
            gamma: vec![0.7],
            beta: vec![0.1, -0.4],
        };
        let z = vec![0.2, 0.6, 0.9];
        let at_zero = complete_log_posterior(&params, &z, &ds, 0.0).unwrap();
        let at_two = complete_log_posterior(&params, &z, &ds, 2.0).unwrap();
        let l1_terms = 0.7 + 0.4;
        assert!((at_zero - 2.0 * l1_terms - at_two).abs() < 1e-12);
    }

    #[test]
    fn expert_problem_has_expected_shape() {
        // n=1 with both votes available: 4 rows, d+k columns.
        let ds = Dataset::new_complete(array![[0.5]], array![[1, 0]], None).unwrap();
        let problem = build_expert_problem(&[0.8], &ds, 0.25).unwrap();
        assert_eq!(problem.rows.dim(), (4, 3));
        assert_eq!(problem.responses, vec![1, 1, 0, 0]);
        // First expert voted 1: agreement = z = 0.8; second voted 0: 1 - z.
        let w = &problem.weights;
        assert!((w[0] - 0.8).abs() < 1e-15);
        assert!((w[1] - 0.2).abs() < 1e-15);
        assert!((w[2] - 0.2).abs() < 1e-15);
        assert!((w[3] - 0.8).abs() < 1e-15);
        assert_eq!(problem.penalty_factor, vec![0.0, 0.0, 1.0]);
        assert_eq!(problem.lambda, 0.25);
    }

    #[test]
    fn truth_problem_has_expected_shape() {
        let ds = tiny();
        let problem = build_truth_problem(&[0.9, 0.1, 0.5], &ds, 0.0).unwrap();
        assert_eq!(problem.rows.dim(), (6, 2));
        assert_eq!(problem.penalty_factor, vec![0.0, 1.0]);
        assert_eq!(problem.rows[(0, 0)], 1.0);
        assert_eq!(problem.rows[(3, 0)], 1.0);
        assert!((problem.weights[0] - 0.9).abs() < 1e-15);
        assert!((problem.weights[3] - 0.1).abs() < 1e-15);
        assert_eq!(problem.responses, vec![1, 1, 1, 0, 0, 0]);
    }

    #[test]
    fn predict_proba_intercept_only() {
        let params = CrowdParams {
            alpha: vec![0.0],
            gamma: vec![0.0],
            beta: vec![1.0, 0.0],
        };
        let p = predict_proba(&params, &[123.0]).unwrap();
        assert!((p - 0.731_058_578_630_004_9).abs() < 1e-12);
    }

    #[test]
    fn predict_with_votes_matches_e_step() {
        let ds = tiny();
        let params = CrowdParams {
            alpha: vec![0.4, -0.9],
            gamma: vec![0.3],
            beta: vec![0.2, 1.1],
        };
        let posterior = e_step(&params, &ds).unwrap();
        for i in 0..ds.n() {
            let votes: Vec<(usize, u8)> = ds.available_votes(i).collect();
            let p = predict_with_votes(&params, &[ds.feature_row(i)[0]], &votes).unwrap();
            assert!((p - posterior[i]).abs() < 1e-15);
        }
        // No votes collapses to predict_proba.
        let bare = predict_with_votes(&params, &[2.0], &[]).unwrap();
        let proba = predict_proba(&params, &[2.0]).unwrap();
        assert!((bare - proba).abs() < 1e-15);
    }

    #[test]
    fn predict_with_votes_rejects_bad_votes() {
        let params = CrowdParams::zeros(2, 1);
        assert!(predict_with_votes(&params, &[0.0], &[(2, 1)]).is_err());
        assert!(predict_with_votes(&params, &[0.0], &[(0, 1), (0, 0)]).is_err());
        assert!(predict_with_votes(&params, &[0.0], &[(0, 9)]).is_err());
    }

    #[test]
    fn single_iteration_produces_single_trace_entry() {
        let ds = tiny();
        let config = EmConfig {
            restarts: 1,
            max_em_iters: 1,
            ..EmConfig::default()
        };
        let fit = fit_map_em(&ds, &config, &[0.0, 0.0]).unwrap();
        assert_eq!(fit.objective_trace.len(), 1);
        assert!(!fit.em_converged);
    }
}
