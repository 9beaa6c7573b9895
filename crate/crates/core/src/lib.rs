//! Separable transferable-utility matching markets with logit heterogeneity.
//!
//! The crate covers four workflows that share one set of types:
//!
//! - computing the stable matching for a joint-surplus matrix and type margins
//!   ([`equilibrium`]), either at the type level (IPFP, gradient descent on the
//!   dual) or at the level of individuals for small markets;
//! - recovering the surplus and its split from observed matching patterns
//!   ([`identification`]);
//! - fitting a linear-in-parameters surplus to sampled household counts
//!   ([`estimation`]), with sandwich standard errors;
//! - generating synthetic data with a known truth ([`simulation`]).
//!
//! Types are indexed `x` (men, rows) and `y` (women, columns). Singlehood is an
//! implicit extra option and never a label.

pub mod equilibrium;
pub mod error;
pub mod estimation;
pub mod identification;
pub mod io;
pub mod model;
pub mod simulation;

pub use error::{Error, Result};
pub use model::{
    BasisSystem, Distribution, EquilibriumSolution, Margins, MatchingPatterns, ParameterVector,
    SampleCounts, SurplusMatrix, TypeSpace,
};
