//! Model selection without true labels: the surrogate score (mean
//! disagreement with expert votes on held-out data), its decomposition into
//! a risk-proportional term plus the experts' own error rate, lambda-grid
//! search, cross-validated scoring, method comparison, and Monte-Carlo
//! checks of the score's convergence behavior.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::baselines::{majority_logistic, majority_vote, oracle_logistic};
use crate::data::Dataset;
use crate::em::{self, CrowdParams, EmConfig, FitResult};
use crate::error::{Error, Result};
use crate::logreg::Coefficients;
use crate::simulate::{generate, SimulationConfig};

/// The surrogate score split per the identity
/// `s_hat = weighted_term + expert_error_term`: the first term scales the
/// classifier's true-label disagreement by how often the experts are right,
/// the second is the experts' own average error and does not depend on the
/// classifier at all.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreBreakdown {
    pub s_hat: f64,
    pub weighted_term: f64,
    pub expert_error_term: f64,
}

/// One lambda of a grid search. `failed` rows carry the fit error message
/// and never participate in the argmin.
#[derive(Debug, Clone)]
pub struct LambdaRow {
    pub lambda: f64,
    pub s_hat: Option<f64>,
    /// Test-set misclassification rate; present only with true labels.
    pub r_hat: Option<f64>,
    /// Nonzero reliability slopes.
    pub nnz_gamma: usize,
    /// Nonzero classifier slopes (intercept excluded).
    pub nnz_beta: usize,
    pub converged: bool,
    pub failed: bool,
    pub error: Option<String>,
}

/// One method of a comparison run. `s_min`/`r_min` flag every row attaining
/// the respective minimum (ties flag all of them).
#[derive(Debug, Clone)]
pub struct MethodRow {
    pub method: String,
    pub lambda: Option<f64>,
    pub s_hat: f64,
    pub r_hat: Option<f64>,
    pub s_min: bool,
    pub r_min: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChosenBy {
    SurrogateMin,
    CrossValidated,
}

/// Grid rows, per-method rows (for comparisons), and the chosen lambda.
#[derive(Debug, Clone)]
pub struct SelectionReport {
    pub rows: Vec<LambdaRow>,
    pub method_rows: Vec<MethodRow>,
    pub chosen_lambda: Option<f64>,
    pub chosen_by: ChosenBy,
}

/// A grid search plus the winning fit, for callers that go on to predict.
#[derive(Debug, Clone)]
pub struct SelectionRun {
    pub report: SelectionReport,
    pub chosen: FitResult,
}

/// Competitors for [`compare_methods`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// MAP-EM without sparsity (lambda = 0).
    Em,
    /// MAP-EM at the surrogate-score-chosen lambda from the grid.
    EmSparse,
    /// L1 logistic regression on majority-vote labels, lambda tuned by the
    /// surrogate score over the same grid.
    Majority,
    /// L1 logistic regression on the true labels, lambda tuned the same way;
    /// requires labels on the training set.
    Oracle,
    /// Predicts the given label everywhere; a floor for sanity checks.
    Constant(u8),
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Em => "em".into(),
            Method::EmSparse => "em-sparse".into(),
            Method::Majority => "majority".into(),
            Method::Oracle => "oracle".into(),
            Method::Constant(c) => format!("constant-{c}"),
        }
    }

    fn needs_grid(&self) -> bool {
        matches!(self, Method::EmSparse | Method::Majority | Method::Oracle)
    }
}

/// Mean over units of the mean disagreement between the unit's prediction
/// and its available votes. Lives in [0, 1]; each unit counts equally no
/// matter how many experts scored it.
pub fn surrogate_score(predictions: &[u8], ds_test: &Dataset) -> Result<f64> {
    check_predictions(predictions, ds_test.n())?;
    let mut frac_sum = 0.0;
    let mut count_sum = 0usize;
    let mut uniform = None;
    for (i, &z) in predictions.iter().enumerate() {
        let mut disagree = 0usize;
        let mut avail = 0usize;
        for (_, y) in ds_test.available_votes(i) {
            avail += 1;
            disagree += usize::from(y != z);
        }
        frac_sum += disagree as f64 / avail as f64;
        count_sum += disagree;
        uniform = match uniform {
            None => Some(Some(avail)),
            Some(Some(a)) if a == avail => Some(Some(a)),
            _ => Some(None),
        };
    }
    // With one shared vote count the per-unit average equals the pooled
    // count over n*d, an integer ratio: keeps identities like
    // s(z) + s(1-z) = 1 exact instead of accurate to rounding.
    match uniform.flatten() {
        Some(a) => Ok(count_sum as f64 / (ds_test.n() * a) as f64),
        None => Ok(frac_sum / ds_test.n() as f64),
    }
}

/// Mean disagreement with the true labels.
pub fn empirical_risk(predictions: &[u8], true_labels: &[u8]) -> Result<f64> {
    if predictions.len() != true_labels.len() {
        return Err(Error::Dim(format!(
            "{} predictions for {} labels",
            predictions.len(),
            true_labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Invalid("empty prediction vector".into()));
    }
    if predictions.iter().chain(true_labels).any(|v| *v > 1) {
        return Err(Error::Invalid("labels must be 0 or 1".into()));
    }
    let wrong = predictions
        .iter()
        .zip(true_labels)
        .filter(|(z, y)| z != y)
        .count();
    Ok(wrong as f64 / predictions.len() as f64)
}

/// Splits the surrogate score using the true labels:
/// per unit, `I(z != y_k) = I(z != Z)(1 - 2 e_k) + e_k` where
/// `e_k = I(y_k != Z)`; averaging gives `weighted_term + expert_error_term`
/// with the second term independent of the predictions.
pub fn score_decomposition(predictions: &[u8], ds_test: &Dataset) -> Result<ScoreBreakdown> {
    check_predictions(predictions, ds_test.n())?;
    let labels = ds_test
        .true_labels()
        .ok_or_else(|| Error::Invalid("score decomposition requires true labels".into()))?;
    let n = ds_test.n() as f64;
    let mut weighted = 0.0;
    let mut expert_err = 0.0;
    for (i, &z) in predictions.iter().enumerate() {
        let mut err_sum = 0.0;
        let mut avail = 0usize;
        for (_, y) in ds_test.available_votes(i) {
            avail += 1;
            err_sum += f64::from(y != labels[i]);
        }
        let mean_err = err_sum / avail as f64;
        expert_err += mean_err;
        if z != labels[i] {
            weighted += 1.0 - 2.0 * mean_err;
        }
    }
    weighted /= n;
    expert_err /= n;
    Ok(ScoreBreakdown {
        s_hat: weighted + expert_err,
        weighted_term: weighted,
        expert_error_term: expert_err,
    })
}

/// Logarithmic grid of `size` lambdas descending from the smallest lambda
/// that zeroes every slope of the majority-vote logistic problem (its
/// gradient bound at the intercept-only fit) down to 1/1000 of it.
pub fn default_grid(ds: &Dataset, size: usize) -> Result<Vec<f64>> {
    if size == 0 {
        return Err(Error::Invalid("grid size must be >= 1".into()));
    }
    let labels = majority_vote(ds).labels;
    let n = ds.n();
    let ybar = labels.iter().map(|&y| f64::from(y)).sum::<f64>() / n as f64;
    let mut bound: f64 = 0.0;
    for j in 0..ds.k() {
        let mut g = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            g += (f64::from(y) - ybar) * ds.features()[(i, j)];
        }
        bound = bound.max(g.abs());
    }
    if !bound.is_finite() {
        return Err(Error::Numeric("non-finite gradient bound".into()));
    }
    // All-equal majority labels (or all-zero features) give bound 0; any
    // positive lambda then yields the same all-zero slopes, so anchor at 1.
    let lambda_max = if bound > 0.0 { bound } else { 1.0 };
    if size == 1 {
        return Ok(vec![lambda_max]);
    }
    let ratio: f64 = 1e-3;
    Ok((0..size)
        .map(|i| lambda_max * ratio.powf(i as f64 / (size - 1) as f64))
        .collect())
}

/// Fits the crowd model at every lambda of a descending grid, scores each on
/// the test votes, and picks the surrogate-score minimizer (ties go to the
/// larger lambda, i.e. the sparser model). Numeric fit failures mark their
/// row and drop out of the argmin; the grid keeps going.
pub fn select_lambda(
    train: &Dataset,
    test: &Dataset,
    grid: &[f64],
    config: &EmConfig,
) -> Result<SelectionReport> {
    select_lambda_run(train, test, grid, config).map(|run| run.report)
}

/// [`select_lambda`] plus the winning lambda's fitted model.
pub fn select_lambda_run(
    train: &Dataset,
    test: &Dataset,
    grid: &[f64],
    config: &EmConfig,
) -> Result<SelectionRun> {
    config.validate()?;
    check_grid(grid)?;
    check_feature_width(train, test)?;

    let mut rows: Vec<LambdaRow> = Vec::with_capacity(grid.len());
    let mut fits: Vec<Option<FitResult>> = Vec::with_capacity(grid.len());
    let mut warm: Option<CrowdParams> = None;

    for (g, &lambda) in grid.iter().enumerate() {
        // An exactly repeated lambda is the same subproblem with the same
        // seed; reuse the answer instead of refitting.
        if g > 0 && grid[g - 1] == lambda {
            rows.push(rows[g - 1].clone());
            fits.push(fits[g - 1].clone());
            continue;
        }
        match fit_at_lambda(train, test, lambda, config, warm.as_ref()) {
            Ok((row, fit)) => {
                warm = Some(fit.params.clone());
                rows.push(row);
                fits.push(Some(fit));
            }
            Err(e) if e.is_numeric() => {
                rows.push(LambdaRow {
                    lambda,
                    s_hat: None,
                    r_hat: None,
                    nnz_gamma: 0,
                    nnz_beta: 0,
                    converged: false,
                    failed: true,
                    error: Some(e.to_string()),
                });
                fits.push(None);
            }
            Err(e) => return Err(e),
        }
    }

    let scores: Vec<Option<f64>> = rows.iter().map(|r| r.s_hat).collect();
    let best = pick_min_index(&scores).ok_or_else(|| {
        Error::Numeric("every lambda on the grid failed to fit".into())
    })?;
    let chosen = fits[best]
        .clone()
        .expect("argmin only ranges over fitted rows");
    Ok(SelectionRun {
        report: SelectionReport {
            chosen_lambda: Some(rows[best].lambda),
            rows,
            method_rows: Vec::new(),
            chosen_by: ChosenBy::SurrogateMin,
        },
        chosen,
    })
}

/// Fits the crowd model at one lambda with the standard initialization: the
/// classifier-coefficient means come from a majority-vote logistic fit at the
/// same penalty. `warm` optionally adds a previous solution as an extra
/// restart candidate, which is how grid traversals reuse work.
pub fn fit_with_majority_init(
    ds: &Dataset,
    lambda: f64,
    config: &EmConfig,
    warm: Option<&CrowdParams>,
) -> Result<FitResult> {
    let at = config.with_lambda(lambda);
    at.validate()?;
    let init = majority_logistic(ds, lambda, &config.solver)?;
    em::fit_map_em_with_warm(ds, &at, &init.values, warm)
}

fn fit_at_lambda(
    train: &Dataset,
    test: &Dataset,
    lambda: f64,
    config: &EmConfig,
    warm: Option<&CrowdParams>,
) -> Result<(LambdaRow, FitResult)> {
    let ctx = |e: Error| e.prefixed(&format!("lambda {lambda}"));
    let fit = fit_with_majority_init(train, lambda, config, warm).map_err(ctx)?;
    let preds = classify_em(&fit.params, test)?;
    let s_hat = surrogate_score(&preds, test)?;
    let r_hat = match test.true_labels() {
        Some(labels) => Some(empirical_risk(&preds, labels)?),
        None => None,
    };
    let row = LambdaRow {
        lambda,
        s_hat: Some(s_hat),
        r_hat,
        nnz_gamma: count_nonzero(&fit.params.gamma),
        nnz_beta: count_nonzero(&fit.params.beta[1..]),
        converged: fit.em_converged,
        failed: false,
        error: None,
    };
    Ok((row, fit))
}

/// Grid search scored by K-fold cross-validation instead of a held-out
/// split. Every row's nonzero counts and convergence flag come from a
/// full-data fit at that lambda (warm-started down the grid); r_hat is never
/// available because no labeled units are held out. Ties and numeric
/// failures follow the same rules as [`select_lambda_run`].
pub fn select_lambda_cv(
    ds: &Dataset,
    folds: usize,
    grid: &[f64],
    config: &EmConfig,
) -> Result<SelectionRun> {
    config.validate()?;
    check_grid(grid)?;

    let mut rows: Vec<LambdaRow> = Vec::with_capacity(grid.len());
    let mut fits: Vec<Option<FitResult>> = Vec::with_capacity(grid.len());
    let mut warm: Option<CrowdParams> = None;

    for (g, &lambda) in grid.iter().enumerate() {
        if g > 0 && grid[g - 1] == lambda {
            rows.push(rows[g - 1].clone());
            fits.push(fits[g - 1].clone());
            continue;
        }
        let attempt = cross_validated_score(ds, folds, lambda, config).and_then(|score| {
            let fit = fit_with_majority_init(ds, lambda, config, warm.as_ref())
                .map_err(|e| e.prefixed(&format!("lambda {lambda}")))?;
            Ok((score, fit))
        });
        match attempt {
            Ok((score, fit)) => {
                warm = Some(fit.params.clone());
                rows.push(LambdaRow {
                    lambda,
                    s_hat: Some(score),
                    r_hat: None,
                    nnz_gamma: count_nonzero(&fit.params.gamma),
                    nnz_beta: count_nonzero(&fit.params.beta[1..]),
                    converged: fit.em_converged,
                    failed: false,
                    error: None,
                });
                fits.push(Some(fit));
            }
            Err(e) if e.is_numeric() => {
                rows.push(LambdaRow {
                    lambda,
                    s_hat: None,
                    r_hat: None,
                    nnz_gamma: 0,
                    nnz_beta: 0,
                    converged: false,
                    failed: true,
                    error: Some(e.to_string()),
                });
                fits.push(None);
            }
            Err(e) => return Err(e),
        }
    }

    let scores: Vec<Option<f64>> = rows.iter().map(|r| r.s_hat).collect();
    let best = pick_min_index(&scores).ok_or_else(|| {
        Error::Numeric("every lambda on the grid failed to fit".into())
    })?;
    let chosen = fits[best]
        .clone()
        .expect("argmin only ranges over fitted rows");
    Ok(SelectionRun {
        report: SelectionReport {
            chosen_lambda: Some(rows[best].lambda),
            rows,
            method_rows: Vec::new(),
            chosen_by: ChosenBy::CrossValidated,
        },
        chosen,
    })
}

/// Mean over folds of the surrogate score of fold-held-out predictions from
/// models fit on the complement. Units are shuffled by the config seed and
/// dealt round-robin, so folds differ in size by at most one unit.
pub fn cross_validated_score(
    ds: &Dataset,
    folds: usize,
    lambda: f64,
    config: &EmConfig,
) -> Result<f64> {
    config.with_lambda(lambda).validate()?;
    let n = ds.n();
    if folds < 2 {
        return Err(Error::Invalid("need at least 2 folds".into()));
    }
    if folds > n {
        return Err(Error::Invalid(format!(
            "{folds} folds for {n} units; folds may not exceed the unit count"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    // A stream index no restart can reach keeps fold assignment independent
    // of the restart draws that share this seed.
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    rng.set_stream(u64::MAX);
    order.shuffle(&mut rng);

    let fold_scores: Result<Vec<f64>> = (0..folds)
        .into_par_iter()
        .map(|f| {
            let ctx = |e: Error| e.prefixed(&format!("fold {f}"));
            let held: Vec<usize> = order[f..].iter().step_by(folds).copied().collect();
            let kept: Vec<usize> = order
                .iter()
                .enumerate()
                .filter(|(pos, _)| pos % folds != f)
                .map(|(_, &u)| u)
                .collect();
            let test = ds.subset(&held).map_err(ctx)?;
            let train = ds.subset(&kept).map_err(ctx)?;
            let at = config.with_lambda(lambda);
            let init = majority_logistic(&train, lambda, &config.solver).map_err(ctx)?;
            let fit = em::fit_map_em(&train, &at, &init.values).map_err(ctx)?;
            let preds = classify_em(&fit.params, &test).map_err(ctx)?;
            surrogate_score(&preds, &test).map_err(ctx)
        })
        .collect();
    let fold_scores = fold_scores?;
    Ok(fold_scores.iter().sum::<f64>() / folds as f64)
}

/// Fits every requested method on the training votes, scores each on the
/// test votes, and flags the surrogate-score and risk minimizers. Grid-tuned
/// methods share `grid`; the EM-sparse grid rows ride along in the report.
pub fn compare_methods(
    train: &Dataset,
    test: &Dataset,
    methods: &[Method],
    grid: &[f64],
    config: &EmConfig,
) -> Result<SelectionReport> {
    config.validate()?;
    check_feature_width(train, test)?;
    if methods.is_empty() {
        return Err(Error::Invalid("no methods requested".into()));
    }
    if methods.iter().any(Method::needs_grid) {
        check_grid(grid)?;
    }
    for m in methods {
        if let Method::Constant(c) = m {
            if *c > 1 {
                return Err(Error::Invalid("constant method label must be 0 or 1".into()));
            }
        }
    }

    let mut rows = Vec::new();
    let mut chosen_lambda = None;
    let mut method_rows = Vec::new();
    for m in methods {
        let (lambda, preds) = match m {
            Method::Em => {
                let at = config.with_lambda(0.0);
                let init = majority_logistic(train, 0.0, &config.solver)?;
                let fit = em::fit_map_em(train, &at, &init.values)?;
                (Some(0.0), classify_em(&fit.params, test)?)
            }
            Method::EmSparse => {
                let run = select_lambda_run(train, test, grid, config)?;
                let preds = classify_em(&run.chosen.params, test)?;
                chosen_lambda = run.report.chosen_lambda;
                rows = run.report.rows;
                (run.report.chosen_lambda, preds)
            }
            Method::Majority => tune_linear(grid, test, |lambda| {
                majority_logistic(train, lambda, &config.solver)
            })?,
            Method::Oracle => tune_linear(grid, test, |lambda| {
                oracle_logistic(train, lambda, &config.solver)
            })?,
            Method::Constant(c) => (None, vec![*c; test.n()]),
        };
        let s_hat = surrogate_score(&preds, test)?;
        let r_hat = match test.true_labels() {
            Some(labels) => Some(empirical_risk(&preds, labels)?),
            None => None,
        };
        method_rows.push(MethodRow {
            method: m.name(),
            lambda,
            s_hat,
            r_hat,
            s_min: false,
            r_min: false,
        });
    }

    flag_minima(&mut method_rows);
    Ok(SelectionReport {
        rows,
        method_rows,
        chosen_lambda,
        chosen_by: ChosenBy::SurrogateMin,
    })
}

/// One point of a deviation-rate check: how far the surrogate score sits
/// from its population target, on average, at scoring-set size `n_prime`.
#[derive(Debug, Clone, Copy)]
pub struct DeviationPoint {
    pub n_prime: usize,
    pub mean_sup_deviation: f64,
}

/// Monte-Carlo check of the score's convergence: over a fixed family of
/// 50 one-feature threshold classifiers, estimates
/// `sup_t |S_hat(t) - ((1 - 2 eps) R(t) + eps)|` on fresh size-`n_prime`
/// scoring sets, averaged over `replications`, for each requested size.
/// `eps` is the generator's mean expert error and `R(t)` each classifier's
/// true risk, estimated once on a large independent sample.
pub fn theory_check_deviation(
    generator: &SimulationConfig,
    n_prime_list: &[usize],
    replications: usize,
) -> Result<Vec<DeviationPoint>> {
    generator.validate()?;
    if n_prime_list.is_empty() || n_prime_list.iter().any(|&n| n == 0) {
        return Err(Error::Invalid("scoring-set sizes must be >= 1".into()));
    }
    if replications == 0 {
        return Err(Error::Invalid("replications must be >= 1".into()));
    }

    let thresholds = threshold_family(generator, 50)?;
    let eps = generator.mean_expert_error(50_000)?;

    // True risk per threshold from 200k independent draws, in chunks to keep
    // memory flat.
    let chunk = 20_000;
    let chunks = 10;
    let mut wrong = vec![0u64; thresholds.len()];
    for c in 0..chunks {
        let mut cfg = generator.clone();
        cfg.n = chunk;
        cfg.seed = derive_seed(generator.seed, u64::MAX, c as u64);
        cfg.vote_seed = None;
        let scenario = generate(&cfg)?;
        let labels = scenario.dataset.true_labels().expect("generated labels");
        for i in 0..chunk {
            let x0 = scenario.dataset.features()[(i, 0)];
            for (t, &thr) in thresholds.iter().enumerate() {
                let z = u8::from(x0 >= thr);
                wrong[t] += u64::from(z != labels[i]);
            }
        }
    }
    let risk: Vec<f64> = wrong
        .iter()
        .map(|&w| w as f64 / (chunk * chunks) as f64)
        .collect();
    let target: Vec<f64> = risk.iter().map(|r| (1.0 - 2.0 * eps) * r + eps).collect();

    let mut points = Vec::with_capacity(n_prime_list.len());
    for &n_prime in n_prime_list {
        let sups: Result<Vec<f64>> = (0..replications)
            .into_par_iter()
            .map(|rep| {
                let mut cfg = generator.clone();
                cfg.n = n_prime;
                cfg.seed = derive_seed(generator.seed, n_prime as u64, rep as u64);
                cfg.vote_seed = None;
                let scenario = generate(&cfg)?;
                Ok(sup_deviation(&scenario.dataset, &thresholds, &target))
            })
            .collect();
        let sups = sups?;
        points.push(DeviationPoint {
            n_prime,
            mean_sup_deviation: sups.iter().sum::<f64>() / replications as f64,
        });
    }
    Ok(points)
}

/// Evenly spaced thresholds spanning feature 0's mean plus/minus three
/// standard deviations under the generator.
fn threshold_family(generator: &SimulationConfig, count: usize) -> Result<Vec<f64>> {
    let mean = generator.features.mean[0];
    let var = generator.features.covariance[0][0];
    if var <= 0.0 {
        return Err(Error::Invalid("feature 0 needs positive variance".into()));
    }
    let sd = var.sqrt();
    let lo = mean - 3.0 * sd;
    let hi = mean + 3.0 * sd;
    Ok((0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect())
}

/// Largest |surrogate score - target| over the threshold family, computed
/// from per-unit vote tallies in one pass.
fn sup_deviation(ds: &Dataset, thresholds: &[f64], target: &[f64]) -> f64 {
    let n = ds.n();
    let mut x0 = Vec::with_capacity(n);
    let mut agree_frac = Vec::with_capacity(n);
    for i in 0..n {
        let mut ones = 0usize;
        let mut avail = 0usize;
        for (_, y) in ds.available_votes(i) {
            avail += 1;
            ones += usize::from(y == 1);
        }
        x0.push(ds.features()[(i, 0)]);
        agree_frac.push(ones as f64 / avail as f64);
    }
    let mut sup: f64 = 0.0;
    for (t, &thr) in thresholds.iter().enumerate() {
        let mut s = 0.0;
        for i in 0..n {
            // Disagreement fraction: predicting 1 misses the zero votes.
            s += if x0[i] >= thr {
                1.0 - agree_frac[i]
            } else {
                agree_frac[i]
            };
        }
        s /= n as f64;
        sup = sup.max((s - target[t]).abs());
    }
    sup
}

/// Classifies every row of `ds` by thresholding the crowd model's class
/// probability at 1/2.
pub fn classify_em(params: &CrowdParams, ds: &Dataset) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(ds.n());
    for i in 0..ds.n() {
        let row = ds.feature_row(i);
        let x = row.as_slice().expect("feature rows are contiguous");
        out.push(u8::from(em::predict_proba(params, x)? >= 0.5));
    }
    Ok(out)
}

/// Classifies by sign of the linear predictor of plain logistic coefficients
/// `[intercept, slopes...]`.
pub fn classify_linear(coef: &[f64], ds: &Dataset) -> Result<Vec<u8>> {
    if coef.len() != ds.k() + 1 {
        return Err(Error::Dim(format!(
            "{} coefficients for {} features plus intercept",
            coef.len(),
            ds.k()
        )));
    }
    let mut out = Vec::with_capacity(ds.n());
    for i in 0..ds.n() {
        let mut eta = coef[0];
        for (b, v) in coef[1..].iter().zip(ds.feature_row(i)) {
            eta += b * v;
        }
        out.push(u8::from(eta >= 0.0));
    }
    Ok(out)
}

/// Tunes a label-imputing linear method over the grid by surrogate score;
/// ties pick the larger (earlier) lambda.
fn tune_linear(
    grid: &[f64],
    test: &Dataset,
    mut fit: impl FnMut(f64) -> Result<Coefficients>,
) -> Result<(Option<f64>, Vec<u8>)> {
    let mut best: Option<(f64, f64, Vec<u8>)> = None;
    for &lambda in grid {
        if let Some((prev, _, _)) = best {
            if prev == lambda {
                continue; // duplicate lambda, identical fit
            }
        }
        let coef = fit(lambda).map_err(|e| e.prefixed(&format!("lambda {lambda}")))?;
        let preds = classify_linear(&coef.values, test)?;
        let s = surrogate_score(&preds, test)?;
        let better = match &best {
            None => true,
            Some((_, bs, _)) => s < *bs,
        };
        if better {
            best = Some((lambda, s, preds));
        }
    }
    let (lambda, _, preds) = best.expect("grid checked nonempty");
    Ok((Some(lambda), preds))
}

/// Index of the smallest present score; earliest index wins ties, which on a
/// descending grid means the larger lambda.
fn pick_min_index(scores: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(v) = *s {
            let better = match best {
                None => true,
                Some((_, bv)) => v < bv,
            };
            if better {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

fn flag_minima(rows: &mut [MethodRow]) {
    if rows.is_empty() {
        return;
    }
    let s_best = rows.iter().map(|r| r.s_hat).fold(f64::INFINITY, f64::min);
    for r in rows.iter_mut() {
        r.s_min = r.s_hat == s_best;
    }
    if rows.iter().all(|r| r.r_hat.is_some()) {
        let r_best = rows
            .iter()
            .map(|r| r.r_hat.unwrap())
            .fold(f64::INFINITY, f64::min);
        for r in rows.iter_mut() {
            r.r_min = r.r_hat.unwrap() == r_best;
        }
    }
}

fn count_nonzero(values: &[f64]) -> usize {
    values.iter().filter(|v| **v != 0.0).count()
}

fn check_predictions(predictions: &[u8], n: usize) -> Result<()> {
    if predictions.len() != n {
        return Err(Error::Dim(format!(
            "{} predictions for {} test units",
            predictions.len(),
            n
        )));
    }
    if predictions.iter().any(|z| *z > 1) {
        return Err(Error::Invalid("predictions must be 0 or 1".into()));
    }
    Ok(())
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Invalid("lambda grid is empty".into()));
    }
    if grid.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(Error::Invalid(
            "lambda grid entries must be finite and >= 0".into(),
        ));
    }
    if grid.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::Invalid(
            "lambda grid must be sorted in descending order".into(),
        ));
    }
    Ok(())
}

fn check_feature_width(train: &Dataset, test: &Dataset) -> Result<()> {
    if train.k() != test.k() {
        return Err(Error::Dim(format!(
            "train has {} features but test has {}",
            train.k(),
            test.k()
        )));
    }
    Ok(())
}

/// SplitMix64 step; used to derive independent per-replication seeds.
pub(crate) fn derive_seed(base: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base.wrapping_add(splitmix64(tag))).wrapping_add(index))
}

fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn masked_dataset() -> Dataset {
        // 3 units, 2 experts, one missing vote on unit 2.
        let features = array![[0.0, 1.0], [1.0, 0.0], [2.0, 2.0]];
        let votes = array![[1, 1], [0, 1], [0, 0]];
        let available = array![[true, true], [true, true], [true, false]];
        Dataset::new(features, votes, available, Some(vec![1, 0, 0])).unwrap()
    }

    #[test]
    fn surrogate_zero_when_matching_every_vote() {
        let features = array![[0.0], [0.0]];
        let votes = array![[1, 1], [0, 0]];
        let ds = Dataset::new_complete(features, votes, None).unwrap();
        assert_eq!(surrogate_score(&[1, 0], &ds).unwrap(), 0.0);
    }

    #[test]
    fn surrogate_counts_half_and_full_disagreement() {
        let features = array![[0.0], [0.0]];
        let votes = array![[1, 0], [0, 0]];
        let ds = Dataset::new_complete(features, votes, None).unwrap();
        // Unit 0 disagrees with 1 of 2 votes, unit 1 with 2 of 2.
        assert_eq!(surrogate_score(&[1, 1], &ds).unwrap(), 0.75);
    }

    #[test]
    fn surrogate_averages_within_unit_first() {
        let ds = masked_dataset();
        // Unit 0: 0 of 2 disagree; unit 1: 1 of 2; unit 2: 1 of 1.
        let s = surrogate_score(&[1, 0, 1], &ds).unwrap();
        assert!((s - (0.0 + 0.5 + 1.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn surrogate_rejects_bad_inputs() {
        let ds = masked_dataset();
        assert!(surrogate_score(&[1, 0], &ds).is_err());
        assert!(surrogate_score(&[1, 0, 2], &ds).is_err());
    }

    #[test]
    fn complement_identity_with_complete_votes() {
        let features = array![[0.0], [0.0], [0.0]];
        let votes = array![[1, 0, 1], [0, 0, 1], [1, 1, 1]];
        let ds = Dataset::new_complete(features, votes, None).unwrap();
        let z = [1, 0, 0];
        let zc = [0, 1, 1];
        let s = surrogate_score(&z, &ds).unwrap();
        let sc = surrogate_score(&zc, &ds).unwrap();
        assert_eq!(s + sc, 1.0);
    }

    #[test]
    fn risk_trivial_cases() {
        assert_eq!(empirical_risk(&[1, 0, 1], &[1, 0, 1]).unwrap(), 0.0);
        assert_eq!(empirical_risk(&[1, 0], &[0, 1]).unwrap(), 1.0);
        let r = empirical_risk(&[1, 0, 1], &[1, 1, 1]).unwrap();
        assert!((r - 1.0 / 3.0).abs() < 1e-15);
        assert!(empirical_risk(&[1], &[1, 0]).is_err());
        assert!(empirical_risk(&[], &[]).is_err());
    }

    #[test]
    fn decomposition_matches_score_on_masked_votes() {
        let ds = masked_dataset();
        let preds = [0, 1, 0];
        let b = score_decomposition(&preds, &ds).unwrap();
        let s = surrogate_score(&preds, &ds).unwrap();
        assert!((b.s_hat - (b.weighted_term + b.expert_error_term)).abs() < 1e-15);
        assert!((b.s_hat - s).abs() < 1e-12);
    }

    #[test]
    fn decomposition_collapses_for_perfect_experts() {
        let features = array![[0.0], [0.0], [0.0]];
        let labels = vec![1, 0, 1];
        let votes = array![[1, 1], [0, 0], [1, 1]];
        let ds = Dataset::new_complete(features, votes, Some(labels.clone())).unwrap();
        let preds = [1, 1, 0];
        let b = score_decomposition(&preds, &ds).unwrap();
        let r = empirical_risk(&preds, &labels).unwrap();
        assert_eq!(b.expert_error_term, 0.0);
        assert!((b.weighted_term - r).abs() < 1e-15);
        assert!((b.s_hat - r).abs() < 1e-15);
    }

    #[test]
    fn decomposition_isolates_expert_error_for_perfect_classifier() {
        let features = array![[0.0], [0.0]];
        let labels = vec![1, 0];
        let votes = array![[1, 0], [0, 0]];
        let ds = Dataset::new_complete(features, votes, Some(labels.clone())).unwrap();
        let b = score_decomposition(&[1, 0], &ds).unwrap();
        assert_eq!(b.weighted_term, 0.0);
        // Expert error: unit 0 has 1 of 2 wrong, unit 1 none.
        assert!((b.expert_error_term - 0.25).abs() < 1e-15);
        assert!((b.s_hat - 0.25).abs() < 1e-15);
    }

    #[test]
    fn decomposition_requires_labels() {
        let features = array![[0.0]];
        let votes = array![[1]];
        let ds = Dataset::new_complete(features, votes, None).unwrap();
        assert!(score_decomposition(&[1], &ds).is_err());
    }

    #[test]
    fn min_picker_prefers_earliest_on_ties() {
        let scores = vec![Some(0.3), Some(0.2), Some(0.2), None, Some(0.5)];
        assert_eq!(pick_min_index(&scores), Some(1));
        assert_eq!(pick_min_index(&[None, None]), None);
    }

    #[test]
    fn min_picker_ignores_constant_shifts() {
        let base = [0.4, 0.1, 0.3, 0.1];
        let scores: Vec<Option<f64>> = base.iter().map(|v| Some(*v)).collect();
        let shifted: Vec<Option<f64>> = base.iter().map(|v| Some(v + 0.17)).collect();
        assert_eq!(pick_min_index(&scores), pick_min_index(&shifted));
    }

    #[test]
    fn affine_target_preserves_risk_minimizer() {
        // With mean expert error below 1/2, (1-2e)R + e is increasing in R,
        // so both grids share an argmin.
        let risks = [0.31, 0.12, 0.44, 0.12, 0.29];
        for eps in [0.0, 0.1, 0.3, 0.49] {
            let raw: Vec<Option<f64>> = risks.iter().map(|r| Some(*r)).collect();
            let mapped: Vec<Option<f64>> = risks
                .iter()
                .map(|r| Some((1.0 - 2.0 * eps) * r + eps))
                .collect();
            assert_eq!(pick_min_index(&raw), pick_min_index(&mapped));
        }
    }

    #[test]
    fn grid_spans_three_decades_descending() {
        let features = array![[1.0, 0.5], [2.0, -0.5], [3.0, 0.25], [4.0, -0.25]];
        let votes = array![[1, 1], [0, 1], [1, 1], [0, 0]];
        let ds = Dataset::new_complete(features, votes, None).unwrap();
        let grid = default_grid(&ds, 30).unwrap();
        assert_eq!(grid.len(), 30);
        assert!(grid.windows(2).all(|w| w[0] > w[1]));
        assert!((grid[0] / grid[29] - 1000.0).abs() < 1e-9);
        let single = default_grid(&ds, 1).unwrap();
        assert_eq!(single, vec![grid[0]]);
    }

    #[test]
    fn grid_rejects_bad_shapes() {
        assert!(check_grid(&[]).is_err());
        assert!(check_grid(&[1.0, 2.0]).is_err());
        assert!(check_grid(&[1.0, -0.5]).is_err());
        assert!(check_grid(&[f64::NAN]).is_err());
        assert!(check_grid(&[2.0, 1.0, 1.0, 0.5]).is_ok());
    }

    #[test]
    fn cv_rejects_degenerate_folds() {
        let ds = masked_dataset();
        let config = EmConfig::default();
        assert!(cross_validated_score(&ds, 1, 0.1, &config).is_err());
        assert!(cross_validated_score(&ds, 4, 0.1, &config).is_err());
    }

    #[test]
    fn splitmix_reference_value() {
        // First output of the SplitMix64 reference sequence from seed 0.
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_ne!(derive_seed(1, 2, 3), derive_seed(1, 3, 2));
    }

    #[test]
    fn linear_classifier_thresholds_at_zero() {
        let ds = masked_dataset();
        // eta = -1 + x0: rows have x0 = 0, 1, 2 -> eta -1, 0, 1.
        let preds = classify_linear(&[-1.0, 1.0, 0.0], &ds).unwrap();
        assert_eq!(preds, vec![0, 1, 1]);
        assert!(classify_linear(&[0.0, 1.0], &ds).is_err());
    }
}
