//! Sparse covariance and precision matrix estimation by linearized and
//! learned ADMM schemes.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod checks;
pub mod error;
pub mod generators;
pub mod lbo;
pub mod metrics;
pub mod problem;
pub mod prox;
pub mod solvers;
pub mod symcore;
#[doc(hidden)]
pub mod testutil;

pub use error::{Error, Result};
pub use problem::{IterateState, KktResidual, ProblemKind, SplitProblem};
pub use symcore::SymMat;
