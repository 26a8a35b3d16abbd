//! Synthetic data generation: correlated informative features, independent
//! noise covariates, latent labels from a logistic model, and expert votes
//! under several noise schemes.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::logreg::sigmoid;

// Independent RNG streams per purpose, so changing e.g. the vote seed never
// perturbs features or labels.
const STREAM_INFORMATIVE: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_LABELS: u64 = 2;
const STREAM_VOTES: u64 = 3;
const STREAM_BAYES: u64 = 4;

/// Informative block drawn from a multivariate normal, plus independent
/// standard-normal noise covariates appended after it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub mean: Vec<f64>,
    /// Row-major covariance of the informative block.
    pub covariance: Vec<Vec<f64>>,
    #[serde(default)]
    pub noise_covariates: usize,
}

impl FeatureSpec {
    pub fn informative(&self) -> usize {
        self.mean.len()
    }

    pub fn total_features(&self) -> usize {
        self.informative() + self.noise_covariates
    }

    pub fn covariance_matrix(&self) -> Result<Array2<f64>> {
        let m = self.informative();
        if m == 0 {
            return Err(Error::Invalid(
                "feature spec needs at least one informative feature".into(),
            ));
        }
        if self.covariance.len() != m || self.covariance.iter().any(|row| row.len() != m) {
            return Err(Error::Dim(format!(
                "covariance must be {m}x{m} to match the mean vector"
            )));
        }
        let mut cov = Array2::zeros((m, m));
        for (i, row) in self.covariance.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Invalid("non-finite covariance entry".into()));
                }
                cov[(i, j)] = v;
            }
        }
        Ok(cov)
    }
}

/// How expert votes are corrupted relative to the latent label.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case")]
pub enum VoteScheme {
    /// Expert k flips the true label with fixed probability `epsilon[k]`.
    ConstantError { epsilon: Vec<f64> },
    /// Expert k flips with probability `sigmoid(-(alpha[k] + gamma . x))`
    /// over the informative features: per-unit difficulty shared by experts.
    ModelBased { alpha: Vec<f64>, gamma: Vec<f64> },
    /// As `ModelBased` but with the informative features squared elementwise
    /// inside the flip probability; labels still use the raw features.
    ModelBasedSquared { alpha: Vec<f64>, gamma: Vec<f64> },
}

impl VoteScheme {
    pub fn experts(&self) -> usize {
        match self {
            VoteScheme::ConstantError { epsilon } => epsilon.len(),
            VoteScheme::ModelBased { alpha, .. }
            | VoteScheme::ModelBasedSquared { alpha, .. } => alpha.len(),
        }
    }

    fn validate(&self, informative: usize) -> Result<()> {
        match self {
            VoteScheme::ConstantError { epsilon } => {
                if epsilon.is_empty() {
                    return Err(Error::Invalid("no experts configured".into()));
                }
                if epsilon.iter().any(|e| !(0.0..=1.0).contains(e)) {
                    return Err(Error::Invalid(
                        "expert error rates must lie in [0, 1]".into(),
                    ));
                }
            }
            VoteScheme::ModelBased { alpha, gamma }
            | VoteScheme::ModelBasedSquared { alpha, gamma } => {
                if alpha.is_empty() {
                    return Err(Error::Invalid("no experts configured".into()));
                }
                if gamma.len() != informative {
                    return Err(Error::Dim(format!(
                        "vote scheme has {} reliability slopes for {informative} informative features",
                        gamma.len()
                    )));
                }
                if alpha.iter().chain(gamma).any(|v| !v.is_finite()) {
                    return Err(Error::Invalid(
                        "non-finite vote-scheme parameter".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Flip probability for expert `k` on a unit with informative features `x`.
    fn flip_probability(&self, k: usize, x: &[f64]) -> f64 {
        match self {
            VoteScheme::ConstantError { epsilon } => epsilon[k],
            VoteScheme::ModelBased { alpha, gamma } => {
                let t: f64 = gamma.iter().zip(x).map(|(g, v)| g * v).sum();
                sigmoid(-(alpha[k] + t))
            }
            VoteScheme::ModelBasedSquared { alpha, gamma } => {
                let t: f64 = gamma.iter().zip(x).map(|(g, v)| g * v * v).sum();
                sigmoid(-(alpha[k] + t))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n: usize,
    pub seed: u64,
    /// Overrides the vote stream's seed; features and labels are untouched.
    #[serde(default)]
    pub vote_seed: Option<u64>,
    pub features: FeatureSpec,
    /// `[intercept, slopes...]` over the informative features only; noise
    /// covariates never influence the label.
    pub beta_true: Vec<f64>,
    pub votes: VoteScheme,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Invalid("n must be >= 1".into()));
        }
        let m = self.features.informative();
        self.features.covariance_matrix()?;
        if self.beta_true.len() != m + 1 {
            return Err(Error::Dim(format!(
                "beta_true has {} entries; expected {} (intercept plus one per informative feature)",
                self.beta_true.len(),
                m + 1
            )));
        }
        if self.beta_true.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite beta_true entry".into()));
        }
        self.votes.validate(m)?;
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.votes.experts()
    }

    /// Mean individual-expert error rate; exact for constant-error schemes,
    /// Monte-Carlo over `mc_n` feature draws otherwise.
    pub fn mean_expert_error(&self, mc_n: usize) -> Result<f64> {
        self.validate()?;
        match &self.votes {
            VoteScheme::ConstantError { epsilon } => {
                Ok(epsilon.iter().sum::<f64>() / epsilon.len() as f64)
            }
            _ => {
                if mc_n == 0 {
                    return Err(Error::Invalid("mc_n must be >= 1".into()));
                }
                let d = self.d();
                let cov = self.features.covariance_matrix()?;
                let chol = cholesky_lower(&cov)?;
                let mut rng = stream_rng(self.seed, STREAM_BAYES);
                let m = self.features.informative();
                let mut z = vec![0.0; m];
                let mut x = vec![0.0; m];
                let mut total = 0.0;
                for _ in 0..mc_n {
                    draw_mvn_row(&mut rng, &self.features.mean, &chol, &mut z, &mut x);
                    for k in 0..d {
                        total += self.votes.flip_probability(k, &x);
                    }
                }
                Ok(total / (mc_n * d) as f64)
            }
        }
    }
}

/// A generated dataset together with the configuration that produced it.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub dataset: Dataset,
    pub generator: SimulationConfig,
    pub bayes_risk: Option<f64>,
}

/// Draws `n` i.i.d. rows from N(mean, cov) using the lower-triangular
/// factor of the covariance. Deterministic for a given seed.
pub fn sample_mvnormal(
    mean: &[f64],
    cov: &Array2<f64>,
    n: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    let m = mean.len();
    if cov.dim() != (m, m) {
        return Err(Error::Dim(format!(
            "covariance is {:?} but the mean has {m} entries",
            cov.dim()
        )));
    }
    let chol = cholesky_lower(cov)?;
    let mut rng = stream_rng(seed, STREAM_INFORMATIVE);
    let mut out = Array2::zeros((n, m));
    let mut z = vec![0.0; m];
    let mut x = vec![0.0; m];
    for i in 0..n {
        draw_mvn_row(&mut rng, mean, &chol, &mut z, &mut x);
        for j in 0..m {
            out[(i, j)] = x[j];
        }
    }
    Ok(out)
}

/// Generates features, latent labels, and votes. The dataset's true labels
/// are populated; `bayes_risk` is left unset (see [`estimate_bayes_risk`]).
pub fn generate(config: &SimulationConfig) -> Result<Scenario> {
    config.validate()?;
    let n = config.n;
    let m = config.features.informative();
    let k = config.features.total_features();
    let d = config.d();
    let cov = config.features.covariance_matrix()?;

    let informative = sample_mvnormal(&config.features.mean, &cov, n, config.seed)?;

    let mut features = Array2::zeros((n, k));
    features
        .slice_mut(ndarray::s![.., ..m])
        .assign(&informative);
    let mut noise_rng = stream_rng(config.seed, STREAM_NOISE);
    for i in 0..n {
        for j in m..k {
            features[(i, j)] = noise_rng.sample(StandardNormal);
        }
    }

    let mut label_rng = stream_rng(config.seed, STREAM_LABELS);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut eta = config.beta_true[0];
        for j in 0..m {
            eta += config.beta_true[1 + j] * informative[(i, j)];
        }
        let p = sigmoid(eta);
        labels.push(u8::from(label_rng.gen::<f64>() < p));
    }

    let mut vote_rng = stream_rng(config.vote_seed.unwrap_or(config.seed), STREAM_VOTES);
    let mut votes = Array2::zeros((n, d));
    let mut x_row = vec![0.0; m];
    for i in 0..n {
        for (j, v) in x_row.iter_mut().enumerate() {
            *v = informative[(i, j)];
        }
        for expert in 0..d {
            let flip = config.votes.flip_probability(expert, &x_row);
            let flipped = vote_rng.gen::<f64>() < flip;
            votes[(i, expert)] = if flipped { 1 - labels[i] } else { labels[i] };
        }
    }

    let dataset = Dataset::new_complete(features, votes, Some(labels))?;
    Ok(Scenario {
        dataset,
        generator: config.clone(),
        bayes_risk: None,
    })
}

/// Monte-Carlo estimate of the Bayes risk `E[min(p(x), 1 - p(x))]` of the
/// generating model over `mc_n` fresh feature draws.
pub fn estimate_bayes_risk(config: &SimulationConfig, mc_n: usize) -> Result<f64> {
    config.validate()?;
    if mc_n == 0 {
        return Err(Error::Invalid("mc_n must be >= 1".into()));
    }
    let m = config.features.informative();
    let cov = config.features.covariance_matrix()?;
    let chol = cholesky_lower(&cov)?;
    let mut rng = stream_rng(config.seed, STREAM_BAYES);
    let mut z = vec![0.0; m];
    let mut x = vec![0.0; m];
    let mut total = 0.0;
    for _ in 0..mc_n {
        draw_mvn_row(&mut rng, &config.features.mean, &chol, &mut z, &mut x);
        let mut eta = config.beta_true[0];
        for j in 0..m {
            eta += config.beta_true[1 + j] * x[j];
        }
        let p = sigmoid(eta);
        total += p.min(1.0 - p);
    }
    Ok(total / mc_n as f64)
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
fn cholesky_lower(a: &Array2<f64>) -> Result<Array2<f64>> {
    let m = a.nrows();
    if a.ncols() != m {
        return Err(Error::Dim("covariance must be square".into()));
    }
    for i in 0..m {
        for j in 0..i {
            let gap = (a[(i, j)] - a[(j, i)]).abs();
            if gap > 1e-12 * (1.0 + a[(i, j)].abs()) {
                return Err(Error::Invalid(format!(
                    "covariance is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let mut l = Array2::zeros((m, m));
    for i in 0..m {
        for j in 0..=i {
            let mut s = a[(i, j)];
            for t in 0..j {
                s -= l[(i, t)] * l[(j, t)];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::Numeric(
                        "covariance is not positive definite".into(),
                    ));
                }
                l[(i, j)] = s.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    Ok(l)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn draw_mvn_row(
    rng: &mut ChaCha12Rng,
    mean: &[f64],
    chol: &Array2<f64>,
    z: &mut [f64],
    x: &mut [f64],
) {
    for v in z.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    for i in 0..mean.len() {
        let mut s = mean[i];
        for j in 0..=i {
            s += chol[(i, j)] * z[j];
        }
        x[i] = s;
    }
}
