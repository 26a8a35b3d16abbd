//! Reference classifiers: majority vote and plain penalized logistic fits
//! against either majority labels or ground truth.

use ndarray::Array2;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::logreg::{self, Coefficients, SolverConfig, WeightedProblem};

#[derive(Debug, Clone)]
pub struct MajorityLabels {
    pub labels: Vec<u8>,
    /// Units whose available votes were exactly half ones (resolved to 1).
    pub tie_count: usize,
}

/// Per-unit majority over the available votes; exact ties resolve to 1.
pub fn majority_vote(ds: &Dataset) -> MajorityLabels {
    let mut labels = Vec::with_capacity(ds.n());
    let mut tie_count = 0;
    for i in 0..ds.n() {
        let mut ones = 0usize;
        let mut total = 0usize;
        for (_, y) in ds.available_votes(i) {
            ones += y as usize;
            total += 1;
        }
        // Integer comparison keeps tie detection exact.
        if 2 * ones == total {
            tie_count += 1;
        }
        labels.push(u8::from(2 * ones >= total));
    }
    MajorityLabels { labels, tie_count }
}

/// L1-penalized logistic regression of the majority-vote labels on the
/// features (unpenalized intercept).
pub fn majority_logistic(
    ds: &Dataset,
    lambda: f64,
    solver: &SolverConfig,
) -> Result<Coefficients> {
    let labels = majority_vote(ds).labels;
    logistic_on_labels(ds, &labels, lambda, solver)
}

/// L1-penalized logistic regression on the true labels; errors when the
/// dataset carries none.
pub fn oracle_logistic(
    ds: &Dataset,
    lambda: f64,
    solver: &SolverConfig,
) -> Result<Coefficients> {
    let labels = ds
        .true_labels()
        .ok_or_else(|| Error::Invalid("oracle fit requires true labels".into()))?;
    logistic_on_labels(ds, labels, lambda, solver)
}

fn logistic_on_labels(
    ds: &Dataset,
    labels: &[u8],
    lambda: f64,
    solver: &SolverConfig,
) -> Result<Coefficients> {
    let (n, k) = (ds.n(), ds.k());
    let mut rows = Array2::zeros((n, 1 + k));
    for i in 0..n {
        rows[(i, 0)] = 1.0;
        for (j, v) in ds.feature_row(i).iter().enumerate() {
            rows[(i, 1 + j)] = *v;
        }
    }
    let mut penalty_factor = vec![0.0];
    penalty_factor.extend(std::iter::repeat(1.0).take(k));
    let problem = WeightedProblem {
        rows,
        weights: vec![1.0; n],
        responses: labels.to_vec(),
        penalty_factor,
        lambda,
    };
    logreg::fit(&problem, solver)
}
