//! Covariate selection for treatment-effect estimation.
//!
//! The crate is organised bottom-up:
//!
//! * [`numkit`]: standardization, OLS, logistic regression, linear SVM, the
//!   weighted elastic-net coordinate-descent engine, cross-validation and
//!   correlated Gaussian sampling.
//! * [`smoothing`]: maps first-stage coefficients to L1 penalty weights.
//! * [`frameworks`]: complete selectors (three-stage, preliminary two-stage,
//!   outcome-adaptive lasso and elastic net).
//! * [`synthgen`]: the four synthetic scenarios with known variable classes.
//! * [`causal`]: nearest-neighbour matching, regression ATT and selection bias.

pub mod causal;
pub mod error;
pub mod frameworks;
pub mod numkit;
pub mod smoothing;
pub mod synthgen;

pub use error::{Error, Result};
