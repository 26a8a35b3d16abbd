//! Sparse logistic classification from noisy multi-annotator labels.
//!
//! Several experts each give a fallible binary vote per unit; the true label
//! is never observed. This crate jointly estimates a sparse logistic
//! classifier over the features and a per-expert reliability model via
//! MAP-EM with an L1 penalty, and — because true labels are unavailable for
//! validation too — selects the penalty strength by minimizing the model's
//! disagreement with held-out expert votes, a surrogate whose minimizer
//! tracks the true-risk minimizer whenever the experts are right more often
//! than not.
//!
//! Module map:
//! - [`data`]: datasets (features, vote matrix with missingness, optional
//!   true labels), CSV I/O, splits, standardization.
//! - [`logreg`]: weighted L1-penalized logistic regression via IRLS plus
//!   cyclic coordinate descent, with per-coefficient penalty factors.
//! - [`em`]: the crowd model and its MAP-EM fit with random restarts.
//! - [`baselines`]: majority-vote imputation and logistic fits on imputed or
//!   true labels.
//! - [`selection`]: the vote-disagreement score, lambda-grid search,
//!   cross-validated scoring, method comparison, and convergence checks.
//! - [`simulate`]: seeded synthetic-data generation and Bayes-risk
//!   estimation.
//! - [`model_file`]: plain-text model serialization with exact float
//!   round-trips.

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod baselines;
pub mod data;
pub mod em;
pub mod error;
pub mod logreg;
pub mod model_file;
pub mod selection;
pub mod simulate;

pub use data::{Dataset, SplitSpec, StandardizeRecord};
pub use em::{fit_map_em, CrowdParams, EmConfig, FitResult};
pub use error::{Error, Result};
pub use logreg::{Coefficients, SolverConfig};
pub use model_file::ModelFile;
pub use selection::{select_lambda, SelectionReport};
pub use simulate::{generate, Scenario, SimulationConfig};
