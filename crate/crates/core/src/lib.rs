//! Spectral estimation for Grade-of-Membership models.
//!
//! A binary response matrix `R` (subjects by items) is modelled as a Bernoulli
//! draw from `Pi * Theta^T`, where each row of `Pi` is a membership vector on
//! the simplex and `Theta` holds item response probabilities for each extreme
//! profile. [`estimator::fit`] recovers both factors from a truncated SVD,
//! a pruning pass and successive projection vertex hunting.

pub mod estimator;
pub mod evaluation;
pub mod identifiability;
pub mod io;
pub mod linalg;
pub mod simulation;
pub mod vertex_hunting;

pub use estimator::{fit, FitConfig, FitError, FitResult, ItemParamMatrix, MembershipMatrix, ResponseMatrix};
pub use linalg::{DenseMatrix, LinalgError, SvdBackend, SvdOptions};
