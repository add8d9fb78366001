//! Deterministic numerical kernels shared by every selector.

mod cv;
mod design;
mod enet;
mod logistic;
mod ols;
mod penalized_logistic;
mod sampling;
mod svm;

pub use cv::{cv_path, fit_path, log_spaced_grid, CvOutcome, CvPlan, CvPoint};
pub use design::{standardize, DesignMatrix};
pub use enet::{
    enet_objective, fit_weighted_elastic_net, fit_weighted_elastic_net_with, lambda1_max,
    CdOptions, GramProblem,
};
pub use logistic::{expit, fit_logistic, logistic_gradient, logistic_objective, LOGISTIC_COEF_CAP};
pub use ols::{fit_ols, fit_ols_with, OlsOptions};
pub use penalized_logistic::{
    fit_penalized_logistic, penalized_logistic_lambda_max, penalized_logistic_objective,
};
pub use sampling::{
    equicorrelation_matrix, sample_equicorrelated_gaussian, sample_equicorrelated_gaussian_with,
};
pub use svm::{fit_linear_svm, solve_linear_svm, svm_primal_objective, SvmSolution};

use crate::error::{Error, Result};

/// Non-fatal conditions attached to a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitWarning {
    /// Normal equations were near-singular; a small ridge was added.
    RidgeFallback,
    /// Logistic likelihood has no finite maximizer; coefficients were capped.
    Separation,
    /// The iteration cap was reached before the convergence test passed.
    IterationCap,
}

/// Coefficients on the (standardized) covariate scale plus an unpenalized intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub converged: bool,
    pub iterations: usize,
    pub warning: Option<FitWarning>,
}

impl FitResult {
    /// Linear predictor for row `i` of `x`.
    pub fn linear_predictor(&self, x: &nalgebra::DMatrix<f64>, i: usize) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .enumerate()
                .map(|(j, b)| b * x[(i, j)])
                .sum::<f64>()
    }
}

/// Per-covariate L1 penalty weights.
///
/// Entries are non-negative. `+inf` is legal and forces the matching
/// coefficient to exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyWeights(Vec<f64>);

impl PenaltyWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if let Some(bad) = w.iter().find(|v| v.is_nan() || **v < 0.0) {
            return Err(Error::invalid(format!("penalty weight {bad} is negative or NaN")));
        }
        Ok(PenaltyWeights(w))
    }

    pub fn uniform(p: usize) -> Self {
        PenaltyWeights(vec![1.0; p])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_excluded(&self, j: usize) -> bool {
        self.0[j].is_infinite()
    }
}

impl std::ops::Index<usize> for PenaltyWeights {
    type Output = f64;
    fn index(&self, j: usize) -> &f64 {
        &self.0[j]
    }
}

pub(crate) fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::dims(format!("{what}: expected {want} entries, got {got}")));
    }
    Ok(())
}

pub(crate) fn check_both_classes(labels: &[bool]) -> Result<()> {
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::DegenerateLabels);
    }
    Ok(())
}
