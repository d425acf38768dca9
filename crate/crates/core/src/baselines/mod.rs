//! Classical system identification: per-window gray-box least squares and
//! sparse regression over a polynomial basis.

mod gbo;
mod sparse;

pub use gbo::{gbo_fit, gbo_multistart, gbo_predict, GboConfig, GboFit, GboProblem, LmStage};
pub use sparse::{finite_differences, monomials, sparse_fit, SparseConfig, SparseModel};

use crate::linalg::LinalgError;
use crate::odeint::OdeError;
use crate::systems::SystemError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BaselineError {
    #[error("{what}: expected length {expected}, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("initial guess component {index} = {value} lies outside its bounds")]
    OutOfBounds { index: usize, value: f64 },
    #[error("observed window needs at least 2 samples")]
    TooShort,
    #[error("{samples} samples cannot determine {basis} basis coefficients; add data or lower the degree")]
    TooFewSamples { samples: usize, basis: usize },
    #[error("design matrix is rank deficient at basis term {term}; add more varied data or lower the degree")]
    RankDeficient { term: usize },
    #[error("invalid configuration: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Solver(#[from] OdeError),
    #[error(transparent)]
    System(#[from] SystemError),
}

impl From<LinalgError> for BaselineError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::RankDeficient { column } => BaselineError::RankDeficient { term: column },
            LinalgError::Shape => BaselineError::Config("least-squares dimension mismatch"),
        }
    }
}
