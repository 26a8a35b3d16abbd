//! Weighted L1-penalized logistic regression.
//!
//! Maximizes `sum_i w_i [y_i log mu_i + (1-y_i) log(1-mu_i)] - lambda *
//! sum_j pf_j |coef_j|` with `mu_i = sigmoid(rows_i . coef)`. The solver is
//! iteratively reweighted least squares in the outer loop with cyclic
//! coordinate descent and soft-thresholding on the penalized quadratic in
//! the inner loop, plus step halving so the penalized objective never
//! decreases across outer iterations.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Floor applied to fitted probabilities inside objective evaluation only;
/// gradients always use the raw sigmoid.
const PROB_FLOOR: f64 = 1e-12;

/// Columns with (weighted) sum of squares at or below this are left alone by
/// coordinate descent: they carry no usable signal under the current weights.
const DEAD_COLUMN: f64 = 1e-300;

#[derive(Debug, Clone)]
pub struct WeightedProblem {
    /// m×p design matrix; callers include their own intercept column.
    pub rows: Array2<f64>,
    /// Per-row nonnegative weights; zero-weight rows are dropped by the solver.
    pub weights: Vec<f64>,
    /// Per-row binary responses.
    pub responses: Vec<u8>,
    /// Per-column penalty multiplier; 0 leaves a column unpenalized.
    pub penalty_factor: Vec<f64>,
    pub lambda: f64,
}

impl WeightedProblem {
    pub fn m(&self) -> usize {
        self.rows.nrows()
    }

    pub fn p(&self) -> usize {
        self.rows.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (m, p) = (self.m(), self.p());
        if m == 0 || p == 0 {
            return Err(Error::Invalid("problem has no rows or no columns".into()));
        }
        if self.weights.len() != m {
            return Err(Error::Dim(format!(
                "{} weights for {m} rows",
                self.weights.len()
            )));
        }
        if self.responses.len() != m {
            return Err(Error::Dim(format!(
                "{} responses for {m} rows",
                self.responses.len()
            )));
        }
        if self.penalty_factor.len() != p {
            return Err(Error::Dim(format!(
                "{} penalty factors for {p} columns",
                self.penalty_factor.len()
            )));
        }
        if self.rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite design entry".into()));
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Invalid("weights must be finite and >= 0".into()));
        }
        if !self.weights.iter().any(|&w| w > 0.0) {
            return Err(Error::Invalid("all row weights are zero".into()));
        }
        if self.responses.iter().any(|&y| y > 1) {
            return Err(Error::Invalid("responses must be 0 or 1".into()));
        }
        if self
            .penalty_factor
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::Invalid(
                "penalty factors must be finite and >= 0".into(),
            ));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::Invalid(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Outer-loop stop: max absolute coefficient change per iteration.
    pub tol: f64,
    pub max_outer: usize,
    /// Cap on coordinate-descent sweeps per outer iteration.
    pub max_inner: usize,
    /// Lower bound on the IRLS variance term `mu(1-mu)` to keep the working
    /// response finite near saturated probabilities.
    pub min_working_weight: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-7,
            max_outer: 100,
            max_inner: 1000,
            min_working_weight: 1e-5,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !(self.min_working_weight > 0.0) {
            return Err(Error::Invalid(
                "solver tolerances must be strictly positive".into(),
            ));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::Invalid("iteration limits must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Coefficients {
    pub values: Vec<f64>,
    pub converged: bool,
    pub outer_iterations: usize,
}

/// `sign(z) * max(|z| - t, 0)`, with an exact zero inside `[-t, t]`.
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(sigmoid(t))` without overflow for large |t|.
pub fn log_sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        -(-t).exp().ln_1p()
    } else {
        t - t.exp().ln_1p()
    }
}

/// Rows with strictly positive weight, stored column-major for the sweeps.
struct ActiveData {
    m: usize,
    p: usize,
    cols: Vec<f64>,
    weights: Vec<f64>,
    responses: Vec<f64>,
}

impl ActiveData {
    fn build(problem: &WeightedProblem) -> ActiveData {
        if let Some(folded) = ActiveData::fold_paired(problem) {
            return folded;
        }
        let keep: Vec<usize> = (0..problem.m())
            .filter(|&i| problem.weights[i] > 0.0)
            .collect();
        let (m, p) = (keep.len(), problem.p());
        let mut cols = vec![0.0; m * p];
        for j in 0..p {
            let col = &mut cols[j * m..(j + 1) * m];
            for (r, &i) in keep.iter().enumerate() {
                col[r] = problem.rows[(i, j)];
            }
        }
        ActiveData {
            m,
            p,
            cols,
            weights: keep.iter().map(|&i| problem.weights[i]).collect(),
            responses: keep.iter().map(|&i| problem.responses[i] as f64).collect(),
        }
    }

    /// Detects the soft-label layout — row `i` and row `m/2 + i` share
    /// covariates and carry complementary responses — and folds each pair
    /// into one fractional-response row. With `w = w1 + w0` and
    /// `y = w1 / w`, `w1 log mu + w0 log(1 - mu)` equals
    /// `w * (y log mu + (1 - y) log(1 - mu))` identically, and both halves
    /// of a pair always see the same linear predictor, so the objective,
    /// gradients, and curvature are unchanged while the row count halves.
    fn fold_paired(problem: &WeightedProblem) -> Option<ActiveData> {
        let m2 = problem.m();
        let p = problem.p();
        if m2 == 0 || m2 % 2 != 0 {
            return None;
        }
        let h = m2 / 2;
        for i in 0..h {
            if problem.responses[i] != 1 || problem.responses[h + i] != 0 {
                return None;
            }
            for j in 0..p {
                if problem.rows[(i, j)] != problem.rows[(h + i, j)] {
                    return None;
                }
            }
        }
        let mut keep = Vec::with_capacity(h);
        let mut weights = Vec::with_capacity(h);
        let mut responses = Vec::with_capacity(h);
        for i in 0..h {
            let w = problem.weights[i] + problem.weights[h + i];
            if w > 0.0 {
                keep.push(i);
                weights.push(w);
                responses.push(problem.weights[i] / w);
            }
        }
        let m = keep.len();
        let mut cols = vec![0.0; m * p];
        for j in 0..p {
            let col = &mut cols[j * m..(j + 1) * m];
            for (r, &i) in keep.iter().enumerate() {
                col[r] = problem.rows[(i, j)];
            }
        }
        Some(ActiveData {
            m,
            p,
            cols,
            weights,
            responses,
        })
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.cols[j * self.m..(j + 1) * self.m]
    }

    fn linear_predictor(&self, coef: &[f64], eta: &mut [f64]) {
        eta.fill(0.0);
        for j in 0..self.p {
            let c = coef[j];
            if c != 0.0 {
                for (e, &x) in eta.iter_mut().zip(self.col(j)) {
                    *e += c * x;
                }
            }
        }
    }

    fn penalized_objective(&self, pf: &[f64], lambda: f64, coef: &[f64], eta: &[f64]) -> f64 {
        let mut ll = 0.0;
        for i in 0..self.m {
            let mu = sigmoid(eta[i]).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
            ll += self.weights[i]
                * (self.responses[i] * mu.ln() + (1.0 - self.responses[i]) * (1.0 - mu).ln());
        }
        ll - lambda * penalty(pf, coef)
    }
}

fn penalty(pf: &[f64], coef: &[f64]) -> f64 {
    pf.iter().zip(coef).map(|(f, c)| f * c.abs()).sum()
}

/// Dot product with four independent accumulators, so the additions do not
/// form one latency-bound dependency chain.
fn dot4(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0_f64; 4];
    let mut xc = x.chunks_exact(4);
    let mut yc = y.chunks_exact(4);
    for (a, b) in (&mut xc).zip(&mut yc) {
        acc[0] += a[0] * b[0];
        acc[1] += a[1] * b[1];
        acc[2] += a[2] * b[2];
        acc[3] += a[3] * b[3];
    }
    let mut tail = 0.0;
    for (a, b) in xc.remainder().iter().zip(yc.remainder()) {
        tail += a * b;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Triple product `sum w x y` with the same four-lane accumulation.
fn dot4w(w: &[f64], x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0_f64; 4];
    let mut wc = w.chunks_exact(4);
    let mut xc = x.chunks_exact(4);
    let mut yc = y.chunks_exact(4);
    loop {
        match ((&mut wc).next(), (&mut xc).next(), (&mut yc).next()) {
            (Some(a), Some(b), Some(c)) => {
                acc[0] += a[0] * b[0] * c[0];
                acc[1] += a[1] * b[1] * c[1];
                acc[2] += a[2] * b[2] * c[2];
                acc[3] += a[3] * b[3] * c[3];
            }
            _ => break,
        }
    }
    let mut tail = 0.0;
    for ((a, b), c) in wc
        .remainder()
        .iter()
        .zip(xc.remainder())
        .zip(yc.remainder())
    {
        tail += a * b * c;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Cholesky factor of a recent quadratic subproblem, kept so the next
/// subproblem with the same support can try one cheap Newton step with the
/// stale curvature before paying for a fresh factorization. Useful because
/// successive subproblems along an IRLS or EM run differ only in weights,
/// and slowly. The cache never decides what the solver accepts — stale steps
/// are kept only when they lower the current quadratic objective, and the
/// surrounding sweeps still certify every result — it only changes how much
/// work convergence takes.
#[derive(Debug, Clone, Default)]
pub struct NewtonCache {
    support: Vec<usize>,
    factor: Vec<f64>,
    stale_failures: u32,
    stale_cooldown: u32,
}

impl NewtonCache {
    pub fn new() -> NewtonCache {
        NewtonCache::default()
    }

    /// Whether a stale step is worth attempting. After two consecutive
    /// misses the curvature is evidently drifting too fast to reuse, so
    /// attempts pause and only a periodic probe checks whether the problem
    /// has settled down again.
    fn stale_allowed(&mut self) -> bool {
        if self.stale_failures < 2 {
            return true;
        }
        self.stale_cooldown += 1;
        if self.stale_cooldown >= 8 {
            self.stale_cooldown = 0;
            true
        } else {
            false
        }
    }

    fn note_stale(&mut self, landed: bool) {
        if landed {
            self.stale_failures = 0;
        } else {
            self.stale_failures += 1;
        }
    }
}

/// Fits from the all-zero start.
pub fn fit(problem: &WeightedProblem, config: &SolverConfig) -> Result<Coefficients> {
    let init = vec![0.0; problem.p()];
    fit_from(problem, &init, config)
}

/// Fits from a caller-supplied starting point (warm start).
pub fn fit_from(
    problem: &WeightedProblem,
    init: &[f64],
    config: &SolverConfig,
) -> Result<Coefficients> {
    Ok(fit_traced(problem, init, config)?.0)
}

/// Like [`fit_from`] but reuses (and refreshes) a caller-held curvature
/// cache, for callers that solve a drifting sequence of related problems.
pub fn fit_from_cached(
    problem: &WeightedProblem,
    init: &[f64],
    config: &SolverConfig,
    cache: &mut NewtonCache,
) -> Result<Coefficients> {
    Ok(fit_traced_cached(problem, init, config, cache)?.0)
}

/// Like [`fit_from`] but also returns the penalized objective after each
/// outer iteration. The trace is nondecreasing: a step that would lower the
/// objective is halved back toward the previous iterate.
pub fn fit_traced(
    problem: &WeightedProblem,
    init: &[f64],
    config: &SolverConfig,
) -> Result<(Coefficients, Vec<f64>)> {
    fit_traced_cached(problem, init, config, &mut NewtonCache::new())
}

fn fit_traced_cached(
    problem: &WeightedProblem,
    init: &[f64],
    config: &SolverConfig,
    cache: &mut NewtonCache,
) -> Result<(Coefficients, Vec<f64>)> {
    problem.validate()?;
    config.validate()?;
    if init.len() != problem.p() {
        return Err(Error::Dim(format!(
            "{} initial coefficients for {} columns",
            init.len(),
            problem.p()
        )));
    }
    if init.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite initial coefficient".into()));
    }

    let data = ActiveData::build(problem);
    let m = data.m;
    let pf = &problem.penalty_factor;
    let lambda = problem.lambda;

    let mut coef = init.to_vec();
    let mut eta = vec![0.0; m];
    data.linear_predictor(&coef, &mut eta);
    let mut objective = data.penalized_objective(pf, lambda, &coef, &eta);
    if !objective.is_finite() {
        return Err(Error::Numeric(
            "objective is not finite at the starting point".into(),
        ));
    }

    let mut trace = Vec::new();
    let mut converged = false;
    let mut outer_iterations = 0;

    let mut wq = vec![0.0; m];
    let mut z = vec![0.0; m];
    let mut candidate_eta = vec![0.0; m];

    for _ in 0..config.max_outer {
        // Quadratic approximation at the current iterate.
        for i in 0..m {
            let mu = sigmoid(eta[i]);
            let v = (mu * (1.0 - mu)).max(config.min_working_weight);
            wq[i] = data.weights[i] * v;
            z[i] = eta[i] + (data.responses[i] - mu) / v;
        }
        let mut candidate = coef.clone();
        let residual =
            descend_quadratic(&data, &wq, &z, pf, lambda, &eta, &mut candidate, config, cache);
        // The descent maintains the working residual z - X c, so the linear
        // predictor of the candidate falls out by subtraction.
        for ((ce, &zi), &r) in candidate_eta.iter_mut().zip(&z).zip(&residual) {
            *ce = zi - r;
        }

        // Step halving keeps the true penalized objective nondecreasing even
        // when the quadratic model oversteps. Halving the coefficients halves
        // the predictor as well, the map being linear.
        let mut candidate_obj = data.penalized_objective(pf, lambda, &candidate, &candidate_eta);
        let mut halvings = 0;
        while candidate_obj < objective && halvings < 30 {
            for (c, &prev) in candidate.iter_mut().zip(&coef) {
                *c = 0.5 * (*c + prev);
            }
            for (ce, &e) in candidate_eta.iter_mut().zip(&eta) {
                *ce = 0.5 * (*ce + e);
            }
            candidate_obj = data.penalized_objective(pf, lambda, &candidate, &candidate_eta);
            halvings += 1;
        }
        if candidate_obj < objective {
            // No admissible step remains; stop at the current iterate.
            trace.push(objective);
            outer_iterations += 1;
            converged = true;
            break;
        }
        if halvings == 0 {
            // Exponential likelihood tails (separable directions) let Newton
            // advance only about one logit unit per step; as long as the full
            // step was accepted unhalved, keep doubling it while the penalized
            // objective still improves. Near an interior optimum the first
            // doubling overshoots and is rejected, so regular fits are
            // unaffected.
            let direction: Vec<f64> = candidate.iter().zip(&coef).map(|(c, p)| c - p).collect();
            let direction_eta: Vec<f64> =
                candidate_eta.iter().zip(&eta).map(|(c, p)| c - p).collect();
            let mut scale = 1.0;
            let mut stretched = vec![0.0; candidate.len()];
            let mut stretched_eta = vec![0.0; m];
            for _ in 0..12 {
                let next = 2.0 * scale;
                for ((s, &p), &d) in stretched.iter_mut().zip(&coef).zip(&direction) {
                    *s = p + next * d;
                }
                for ((s, &p), &d) in stretched_eta.iter_mut().zip(&eta).zip(&direction_eta) {
                    *s = p + next * d;
                }
                let stretched_obj = data.penalized_objective(pf, lambda, &stretched, &stretched_eta);
                if !(stretched_obj > candidate_obj) {
                    break;
                }
                candidate.copy_from_slice(&stretched);
                candidate_eta.copy_from_slice(&stretched_eta);
                candidate_obj = stretched_obj;
                scale = next;
            }
        }

        let delta = coef
            .iter()
            .zip(&candidate)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        coef = candidate;
        eta.copy_from_slice(&candidate_eta);
        objective = candidate_obj;
        trace.push(objective);
        outer_iterations += 1;

        if !objective.is_finite() || coef.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numeric(
                "solver produced a non-finite iterate".into(),
            ));
        }
        if delta < config.tol {
            converged = true;
            break;
        }
    }
    Ok((
        Coefficients {
            values: coef,
            converged,
            outer_iterations,
        },
        trace,
    ))
}

/// Cyclic coordinate descent on `1/2 sum wq (z - X c)^2 + lambda sum pf |c|`.
/// One full sweep first, then sweeps over the active set (nonzero or
/// unpenalized columns) until stable, then a full sweep to admit violators;
/// repeats until a full sweep moves nothing. Between sweeps, Newton steps on
/// the current support shortcut the linear crawl that correlated columns
/// force on pure coordinate descent.
#[allow(clippy::too_many_arguments)]
fn descend_quadratic(
    data: &ActiveData,
    wq: &[f64],
    z: &[f64],
    pf: &[f64],
    lambda: f64,
    eta: &[f64],
    coef: &mut [f64],
    config: &SolverConfig,
    cache: &mut NewtonCache,
) -> Vec<f64> {
    let p = data.p;
    let inner_tol = config.tol * 0.1;

    let mut col_sq = vec![0.0; p];
    for j in 0..p {
        col_sq[j] = dot4w(wq, data.col(j), data.col(j));
    }

    // Residual of the working response under the warm start, z - X coef,
    // which is z - eta since the caller quadraticized at coef.
    let mut residual: Vec<f64> = z.iter().zip(eta).map(|(zi, e)| zi - e).collect();

    let sweep = |coef: &mut [f64], residual: &mut [f64], active_only: bool| -> f64 {
        let mut max_change = 0.0_f64;
        for j in 0..p {
            if active_only && coef[j] == 0.0 && lambda * pf[j] > 0.0 {
                continue;
            }
            let s = col_sq[j];
            if s <= DEAD_COLUMN {
                continue;
            }
            let col = data.col(j);
            let g = dot4w(wq, col, residual);
            let num = g + s * coef[j];
            let threshold = lambda * pf[j];
            let updated = if threshold > 0.0 {
                soft_threshold(num, threshold) / s
            } else {
                num / s
            };
            let change = updated - coef[j];
            if change != 0.0 {
                for (r, &x) in residual.iter_mut().zip(col) {
                    *r -= change * x;
                }
                coef[j] = updated;
                max_change = max_change.max(change.abs());
            }
        }
        max_change
    };

    let current_support = |coef: &[f64]| -> Vec<usize> {
        (0..p)
            .filter(|&j| col_sq[j] > DEAD_COLUMN && (lambda * pf[j] == 0.0 || coef[j] != 0.0))
            .collect()
    };

    // Sweeps converge only linearly on correlated columns, so Newton jumps
    // toward the minimizer of the quadratic restricted to the current
    // support do the bulk moves and the sweeps certify them (and, under a
    // penalty, admit violators). The first jump may reuse cached curvature
    // (one cheap back-substitution); any jump that leaves the sweeps still
    // moving after a few passes is followed by a fresh one, bounded so a
    // degenerate quadratic cannot thrash.
    const STALL_SWEEPS: usize = 4;
    const MAX_JUMPS: usize = 16;
    let mut sweeps = 0;
    let mut jumps = 0;
    loop {
        let mut stale_jumped = false;
        if jumps < MAX_JUMPS {
            let support = current_support(coef);
            if !support.is_empty() {
                stale_jumped = cache.support == support
                    && cache.stale_allowed()
                    && stale_newton_step(data, wq, pf, lambda, coef, &mut residual, cache);
                if !stale_jumped {
                    exact_step_on_support(
                        data, wq, z, pf, lambda, coef, &mut residual, &support, cache,
                    );
                }
                jumps += 1;
            }
        }
        let mut since_jump = 0;
        loop {
            let active_change = sweep(coef, &mut residual, true);
            sweeps += 1;
            since_jump += 1;
            if stale_jumped {
                // A stale step either lands within tolerance or proves the
                // cached curvature too old to reuse.
                cache.note_stale(active_change < inner_tol);
                stale_jumped = false;
            }
            if active_change < inner_tol || sweeps >= config.max_inner {
                break;
            }
            if since_jump >= STALL_SWEEPS && jumps < MAX_JUMPS {
                let support = current_support(coef);
                if !support.is_empty() {
                    exact_step_on_support(
                        data, wq, z, pf, lambda, coef, &mut residual, &support, cache,
                    );
                    jumps += 1;
                }
                since_jump = 0;
            }
        }
        if sweeps >= config.max_inner {
            return residual;
        }
        // When no live column sits outside the active set, active stability
        // is full stability and the confirming full sweep is redundant.
        if (0..p).all(|j| col_sq[j] <= DEAD_COLUMN || lambda * pf[j] == 0.0 || coef[j] != 0.0) {
            return residual;
        }
        let full_change = sweep(coef, &mut residual, false);
        sweeps += 1;
        if full_change < inner_tol || sweeps >= config.max_inner {
            return residual;
        }
    }
}

/// Penalized quadratic objective from a maintained residual:
/// `1/2 sum wq r^2 + lambda sum pf |c|`.
fn quadratic_objective(wq: &[f64], residual: &[f64], pf: &[f64], lambda: f64, coef: &[f64]) -> f64 {
    0.5 * dot4w(wq, residual, residual) + lambda * penalty(pf, coef)
}

/// One exact Newton step for the penalized quadratic, restricted to the
/// support: live columns that are unpenalized or currently nonzero. Signs of
/// penalized coefficients are held fixed, which turns the L1 term into a
/// linear one, so the restricted minimizer solves `(X'WX) c = X'Wz - l*pf*s`.
/// The step is rejected outright if the factorization fails or any penalized
/// coefficient crosses zero; the caller's sweeps then proceed unaided. An
/// accepted step cannot increase the objective, because the current point
/// lies on the same orthant face the solve minimizes over. On success the
/// factorization and support are parked in `cache` for stale reuse.
#[allow(clippy::too_many_arguments)]
fn exact_step_on_support(
    data: &ActiveData,
    wq: &[f64],
    z: &[f64],
    pf: &[f64],
    lambda: f64,
    coef: &mut [f64],
    residual: &mut [f64],
    support: &[usize],
    cache: &mut NewtonCache,
) {
    let m = data.m;
    let q = support.len();

    // Normal equations on the support via the square-root trick: with
    // S = sqrt(W) X the Gram matrix is S'S and the right side is S'(sqrt(W) z),
    // so packing S once turns the accumulation into plain dot products,
    // tiled so each column streams through cache once per tile instead of
    // once per pair.
    let mut s = vec![0.0; q * m];
    let mut sz = vec![0.0; m];
    for i in 0..m {
        sz[i] = wq[i].sqrt();
    }
    for (idx, &j) in support.iter().enumerate() {
        let col = data.col(j);
        let dst = &mut s[idx * m..(idx + 1) * m];
        for i in 0..m {
            dst[i] = sz[i] * col[i];
        }
    }
    for i in 0..m {
        sz[i] *= z[i];
    }
    let mut a = vec![0.0; q * q];
    let mut b = vec![0.0; q];
    const TILE: usize = 8;
    let mut t0 = 0;
    while t0 < q {
        let tb = (q - t0).min(TILE);
        for ldx in t0..q {
            let cl = &s[ldx * m..(ldx + 1) * m];
            for idx in t0..(t0 + tb).min(ldx + 1) {
                a[idx * q + ldx] = dot4(&s[idx * m..(idx + 1) * m], cl);
            }
        }
        t0 += tb;
    }
    for idx in 0..q {
        b[idx] = dot4(&s[idx * m..(idx + 1) * m], &sz);
        for ldx in idx + 1..q {
            a[ldx * q + idx] = a[idx * q + ldx];
        }
    }

    let mut rhs = b;
    for (idx, &j) in support.iter().enumerate() {
        let threshold = lambda * pf[j];
        if threshold > 0.0 {
            rhs[idx] -= threshold * coef[j].signum();
        }
    }
    let unridged = a.clone();
    if !cholesky_factor(&mut a, q) {
        // Saturated weights can leave the Gram matrix numerically rank
        // deficient. Rather than abandoning the jump to a coordinate-wise
        // crawl, retry with a ridge proportional to the dominant diagonal,
        // which merely damps the step along the collapsed directions; the
        // sweeps that follow certify the result either way.
        a = unridged;
        let mut max_diag = DEAD_COLUMN;
        for idx in 0..q {
            max_diag = max_diag.max(a[idx * q + idx]);
        }
        let ridge = 1e-8 * max_diag;
        for idx in 0..q {
            a[idx * q + idx] += ridge;
        }
        if !cholesky_factor(&mut a, q) {
            cache.support.clear();
            return;
        }
    }
    cache.support.clear();
    cache.support.extend_from_slice(support);
    cache.factor = a;
    cholesky_backsolve(&cache.factor, &mut rhs, q);
    for (idx, &j) in support.iter().enumerate() {
        let v = rhs[idx];
        if !v.is_finite() {
            return;
        }
        if lambda * pf[j] > 0.0 && v != 0.0 && (v > 0.0) != (coef[j] > 0.0) {
            return;
        }
    }

    for (idx, &j) in support.iter().enumerate() {
        let change = rhs[idx] - coef[j];
        if change != 0.0 {
            for (r, &x) in residual.iter_mut().zip(data.col(j)) {
                *r -= change * x;
            }
            coef[j] = rhs[idx];
        }
    }
}

/// A Newton step on the cached support using the cached (stale) curvature
/// with the current gradient. Accepted only if no penalized coefficient
/// crosses zero and the penalized quadratic objective does not increase
/// (within roundoff, so a near-zero step at an already-converged point still
/// counts); otherwise every change is rolled back and false is returned,
/// telling the caller to refresh the factorization.
fn stale_newton_step(
    data: &ActiveData,
    wq: &[f64],
    pf: &[f64],
    lambda: f64,
    coef: &mut [f64],
    residual: &mut [f64],
    cache: &NewtonCache,
) -> bool {
    let support = &cache.support;
    let q = support.len();

    // Gradient of the smooth part at the current point, from the residual,
    // shifted by the fixed-sign penalty term.
    let mut rhs = vec![0.0; q];
    for (idx, &j) in support.iter().enumerate() {
        let mut g = dot4w(wq, data.col(j), residual);
        let threshold = lambda * pf[j];
        if threshold > 0.0 {
            g -= threshold * coef[j].signum();
        }
        rhs[idx] = g;
    }
    cholesky_backsolve(&cache.factor, &mut rhs, q);

    for (idx, &j) in support.iter().enumerate() {
        let step = rhs[idx];
        if !step.is_finite() {
            return false;
        }
        let updated = coef[j] + step;
        if lambda * pf[j] > 0.0 && updated != 0.0 && (updated > 0.0) != (coef[j] > 0.0) {
            return false;
        }
        rhs[idx] = updated;
    }

    let before = quadratic_objective(wq, residual, pf, lambda, coef);
    let mut previous = vec![0.0; q];
    for (idx, &j) in support.iter().enumerate() {
        previous[idx] = coef[j];
        let change = rhs[idx] - coef[j];
        if change != 0.0 {
            for (r, &x) in residual.iter_mut().zip(data.col(j)) {
                *r -= change * x;
            }
            coef[j] = rhs[idx];
        }
    }
    let after = quadratic_objective(wq, residual, pf, lambda, coef);
    if after <= before + 1e-12 * (1.0 + before.abs()) {
        return true;
    }
    for (idx, &j) in support.iter().enumerate() {
        let change = previous[idx] - coef[j];
        if change != 0.0 {
            for (r, &x) in residual.iter_mut().zip(data.col(j)) {
                *r -= change * x;
            }
            coef[j] = previous[idx];
        }
    }
    false
}

/// In-place lower Cholesky factorization of the symmetric positive definite
/// `q x q` matrix `a` (lower triangle receives the factor). Returns false
/// when a pivot collapses (rank deficiency), leaving `a` unspecified.
fn cholesky_factor(a: &mut [f64], q: usize) -> bool {
    let mut scale = vec![0.0; q];
    for j in 0..q {
        scale[j] = a[j * q + j];
    }
    for j in 0..q {
        let mut d = a[j * q + j];
        for t in 0..j {
            d -= a[j * q + t] * a[j * q + t];
        }
        if !(d > 1e-12 * scale[j].max(DEAD_COLUMN)) {
            return false;
        }
        let root = d.sqrt();
        a[j * q + j] = root;
        for l in (j + 1)..q {
            let mut s = a[l * q + j];
            for t in 0..j {
                s -= a[l * q + t] * a[j * q + t];
            }
            a[l * q + j] = s / root;
        }
    }
    true
}

/// Solves `L L' x = rhs` in place given the lower Cholesky factor `L`.
fn cholesky_backsolve(l: &[f64], rhs: &mut [f64], q: usize) {
    for j in 0..q {
        let mut s = rhs[j];
        for t in 0..j {
            s -= l[j * q + t] * rhs[t];
        }
        rhs[j] = s / l[j * q + j];
    }
    for j in (0..q).rev() {
        let mut s = rhs[j];
        for t in (j + 1)..q {
            s -= l[t * q + j] * rhs[t];
        }
        rhs[j] = s / l[j * q + j];
    }
}

/// Maximum stationarity violation of `coef` for the penalized objective.
///
/// With `g_j` the gradient of the negative weighted log-likelihood:
/// unpenalized columns score `|g_j|`; zero coefficients score
/// `max(|g_j| - lambda*pf_j, 0)`; nonzero ones score
/// `|g_j + lambda*pf_j*sign(coef_j)|`.
pub fn kkt_violation(problem: &WeightedProblem, coef: &[f64]) -> Result<f64> {
    problem.validate()?;
    if coef.len() != problem.p() {
        return Err(Error::Dim(format!(
            "{} coefficients for {} columns",
            coef.len(),
            problem.p()
        )));
    }
    let m = problem.m();
    let mut eta = vec![0.0; m];
    for i in 0..m {
        let mut e = 0.0;
        for j in 0..problem.p() {
            e += problem.rows[(i, j)] * coef[j];
        }
        eta[i] = e;
    }
    let mut worst = 0.0_f64;
    for j in 0..problem.p() {
        let mut g = 0.0;
        for i in 0..m {
            let mu = sigmoid(eta[i]);
            g += problem.weights[i] * (mu - problem.responses[i] as f64) * problem.rows[(i, j)];
        }
        let t = problem.lambda * problem.penalty_factor[j];
        let violation = if problem.penalty_factor[j] == 0.0 {
            g.abs()
        } else if coef[j] == 0.0 {
            (g.abs() - t).max(0.0)
        } else {
            (g + t * coef[j].signum()).abs()
        };
        worst = worst.max(violation);
    }
    Ok(worst)
}
