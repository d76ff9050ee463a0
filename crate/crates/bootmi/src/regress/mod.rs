//! Regression kernels: OLS with classical inference and LASSO via cyclic
//! coordinate descent with cross-validated penalty selection.
//!
//! All operations are pure functions of their inputs plus an explicit seeded
//! stream, so they can run concurrently on disjoint inputs.

mod cv;
mod lasso;
mod ols;

pub use cv::{select_lambda, select_lambda_cv, LambdaRule};
pub use lasso::{
    kkt_max_violation, lambda_max, lasso_fit, lasso_fit_with_free, lasso_sweep_objectives,
    LassoFit,
};
pub use ols::{independent_columns, ols_fit, OlsFit};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegressError {
    #[error("design column {column} is linearly dependent on earlier columns")]
    Singular { column: usize },
    #[error("need more observations than regressors plus intercept (n={n}, k+1={k_plus_one})")]
    InsufficientObservations { n: usize, k_plus_one: usize },
    #[error("penalty must be positive (got {0})")]
    NonPositiveLambda(f64),
    #[error("cross-validation needs folds >= 2 and n >= 2*folds (n={n}, folds={folds})")]
    BadFolds { n: usize, folds: usize },
    #[error("design and response dimensions disagree")]
    ShapeMismatch,
}
