//! Complete selectors built from the numerical kernels and smoothing maps.
//!
//! * Three-stage: exposure model, smoothed-weight elastic net, adaptive elastic net.
//! * Two-stage preliminary: exposure model, then one adaptive elastic net.
//! * Outcome-adaptive lasso / elastic net: OLS outcome model, then a weighted
//!   penalized logistic exposure model tuned by wAMD.

mod oal;
mod three_stage;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::smoothing::{SmoothingKind, SmoothingSpec};
use crate::synthgen::Dataset;

pub use oal::{compute_wamd, oal_fit_at, run_oaenet, run_oal, wamd_from_propensities, OalFit, Wamd};
pub use three_stage::{run_three_stage, run_two_stage_prelim};

/// Coefficients with absolute value above this count as selected.
pub const SELECTION_THRESHOLD: f64 = 1e-8;
/// Propensities are clipped to `[PROPENSITY_CLIP, 1 - PROPENSITY_CLIP]` for wAMD.
pub const PROPENSITY_CLIP: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Framework {
    ThreeStage,
    TwoStagePrelim,
    Oal,
    Oaenet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExposureEstimator {
    Svm,
    Logistic,
}

/// Everything a selector needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectorConfig {
    /// Label used in reports.
    pub name: String,
    pub framework: Framework,
    /// Ignored by the OAL family, which always uses penalized logistic regression.
    pub exposure: ExposureEstimator,
    pub smoothing: SmoothingKind,
    /// Power applied to the smoothing function.
    pub gamma1: f64,
    /// Power of the adaptive weights `|theta|^-gamma2`.
    pub gamma2: f64,
    pub lambda2_grid: Vec<f64>,
    pub lambda1_count: usize,
    /// Smallest lambda1 as a fraction of lambda1max.
    pub lambda1_min_ratio: f64,
    pub folds: usize,
    /// Seed of the cross-validation fold assignment.
    pub cv_seed: u64,
    pub svm_c: f64,
    pub logistic_ridge: f64,
    /// Exponents `gamma` tried by OAL/OAENet; `gamma = 2 Gamma + 1 + 0.05` for
    /// convergence factors `Gamma` in {0, 0.25, 0.5} by default.
    pub oal_gamma_grid: Vec<f64>,
    pub oal_lambda_count: usize,
    pub oal_lambda_min_ratio: f64,
    /// Ridge penalties tried by OAENet, on the sum-of-losses scale.
    pub oaenet_lambda2_grid: Vec<f64>,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        SelectorConfig {
            name: "enh-esvms".into(),
            framework: Framework::ThreeStage,
            exposure: ExposureEstimator::Svm,
            smoothing: SmoothingKind::Sigmoid,
            gamma1: crate::smoothing::DEFAULT_SIGMOID_GAMMA,
            gamma2: crate::smoothing::DEFAULT_ADAPTIVE_GAMMA,
            lambda2_grid: vec![0.0, 0.01, 0.1, 1.0],
            lambda1_count: 50,
            lambda1_min_ratio: 1e-3,
            folds: 10,
            cv_seed: 0,
            svm_c: 1.0,
            logistic_ridge: 1e-8,
            oal_gamma_grid: [0.0, 0.25, 0.5].iter().map(|g| 2.0 * g + 1.0 + 0.05).collect(),
            oal_lambda_count: 25,
            oal_lambda_min_ratio: 1e-3,
            oaenet_lambda2_grid: vec![0.0, 1.0, 10.0, 100.0],
        }
    }
}

/// Names accepted by [`SelectorConfig::preset`].
pub const PRESETS: &[&str] = &[
    "enh-elrt", "enh-elrs", "enh-esvmt", "enh-esvms", "elrs", "elrt", "esvms", "esvmt", "oal", "oaenet",
];

impl SelectorConfig {
    /// A named model: `enh-` prefix for three-stage, `lr`/`svm` for the exposure
    /// estimator, trailing `s`/`t` for sigmoid or tanh smoothing.
    pub fn preset(name: &str) -> Result<Self> {
        let base = SelectorConfig {
            name: name.to_string(),
            ..SelectorConfig::default()
        };
        let (framework, rest) = match name.strip_prefix("enh-") {
            Some(rest) => (Framework::ThreeStage, rest),
            None => (Framework::TwoStagePrelim, name),
        };
        let cfg = match rest {
            "oal" if framework == Framework::TwoStagePrelim => SelectorConfig {
                framework: Framework::Oal,
                exposure: ExposureEstimator::Logistic,
                ..base
            },
            "oaenet" if framework == Framework::TwoStagePrelim => SelectorConfig {
                framework: Framework::Oaenet,
                exposure: ExposureEstimator::Logistic,
                ..base
            },
            "elrs" | "elrt" | "esvms" | "esvmt" => {
                let exposure = if rest.starts_with("elr") {
                    ExposureEstimator::Logistic
                } else {
                    ExposureEstimator::Svm
                };
                let spec = if rest.ends_with('t') {
                    SmoothingSpec::tanh()
                } else {
                    SmoothingSpec::sigmoid()
                };
                SelectorConfig {
                    framework,
                    exposure,
                    smoothing: spec.kind(),
                    gamma1: spec.gamma(),
                    ..base
                }
            }
            _ => {
                return Err(Error::Config(format!(
                    "unknown model '{name}'; known: {}",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if matches!(self.framework, Framework::ThreeStage | Framework::TwoStagePrelim)
            && !matches!(self.smoothing, SmoothingKind::Sigmoid | SmoothingKind::Tanh)
        {
            return bad(format!("{:?} needs sigmoid or tanh smoothing", self.framework));
        }
        for (what, v) in [("gamma1", self.gamma1), ("gamma2", self.gamma2), ("svm_c", self.svm_c)] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{what} must be finite and > 0, got {v}"));
            }
        }
        if !(self.logistic_ridge >= 0.0) {
            return bad(format!("logistic_ridge must be >= 0, got {}", self.logistic_ridge));
        }
        if self.folds < 2 {
            return bad(format!("folds must be >= 2, got {}", self.folds));
        }
        for (what, grid) in [
            ("lambda2_grid", &self.lambda2_grid),
            ("oaenet_lambda2_grid", &self.oaenet_lambda2_grid),
        ] {
            if grid.is_empty() || grid.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return bad(format!("{what} must be a non-empty list of finite values >= 0"));
            }
        }
        if self.oal_gamma_grid.is_empty() || self.oal_gamma_grid.iter().any(|g| !(*g > 1.0) || !g.is_finite()) {
            return bad("oal_gamma_grid entries must exceed 1 (gamma > 2 Gamma + 1 with Gamma >= 0)".into());
        }
        for (what, count, ratio) in [
            ("lambda1", self.lambda1_count, self.lambda1_min_ratio),
            ("oal_lambda", self.oal_lambda_count, self.oal_lambda_min_ratio),
        ] {
            if count == 0 || !(ratio > 0.0 && ratio < 1.0) {
                return bad(format!("{what} grid needs count >= 1 and 0 < min ratio < 1"));
            }
        }
        Ok(())
    }

    pub fn smoothing_spec(&self) -> Result<SmoothingSpec> {
        SmoothingSpec::new(self.smoothing, self.gamma1)
    }
}

/// Output of one selector run. Indices are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub model: String,
    /// Exposure-model coefficients (for OAL/OAENet, the final penalized fit).
    pub exposure: Vec<f64>,
    /// Outcome-model coefficients (for OAL/OAENet, the OLS fit).
    pub outcome: Vec<f64>,
    /// Adaptive-stage coefficients; three-stage only.
    pub adaptive: Option<Vec<f64>>,
    pub selected: Vec<usize>,
    pub hyperparams: BTreeMap<String, f64>,
    pub wall_clock_seconds: f64,
    /// Non-fatal conditions met along the way.
    pub notes: Vec<String>,
}

/// Indices of coefficients above [`SELECTION_THRESHOLD`] in absolute value.
pub fn nonzero_indices(coefs: &[f64]) -> Vec<usize> {
    (0..coefs.len()).filter(|&j| coefs[j].abs() > SELECTION_THRESHOLD).collect()
}

pub(crate) fn check_data(data: &Dataset) -> Result<()> {
    if data.n() < 20 {
        return Err(Error::invalid(format!("selectors need N >= 20, got {}", data.n())));
    }
    let treated = data.t.iter().filter(|&&t| t).count();
    if treated == 0 || treated == data.n() {
        return Err(Error::DegenerateLabels);
    }
    if data.x.iter().chain(&data.y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("covariates and outcome must be finite"));
    }
    Ok(())
}

/// Run the selector described by `cfg`.
pub fn run_selector(data: &Dataset, cfg: &SelectorConfig) -> Result<SelectionResult> {
    cfg.validate()?;
    check_data(data)?;
    let start = Instant::now();
    let mut result = match cfg.framework {
        Framework::ThreeStage => run_three_stage(data, cfg)?,
        Framework::TwoStagePrelim => run_two_stage_prelim(data, cfg)?,
        Framework::Oal => run_oal(data, cfg)?,
        Framework::Oaenet => run_oaenet(data, cfg)?,
    };
    result.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve() {
        for name in PRESETS {
            let cfg = SelectorConfig::preset(name).unwrap();
            cfg.validate().unwrap();
            assert_eq!(cfg.name, *name);
        }
        let t = SelectorConfig::preset("enh-elrt").unwrap();
        assert_eq!(
            (t.framework, t.exposure, t.smoothing, t.gamma1),
            (Framework::ThreeStage, ExposureEstimator::Logistic, SmoothingKind::Tanh, 0.5)
        );
        let s = SelectorConfig::preset("esvms").unwrap();
        assert_eq!((s.framework, s.exposure, s.gamma1), (Framework::TwoStagePrelim, ExposureEstimator::Svm, 1.0));
        assert!(SelectorConfig::preset("enh-oal").is_err());
        assert!(SelectorConfig::preset("lasso").is_err());
    }

    #[test]
    fn default_gamma_grid_respects_bound() {
        let g = SelectorConfig::default().oal_gamma_grid;
        assert_eq!(g.len(), 3);
        assert!((g[0] - 1.05).abs() < 1e-15 && (g[2] - 2.05).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = SelectorConfig::default();
        c.smoothing = SmoothingKind::InversePower;
        assert!(c.validate().is_err());
        let mut c = SelectorConfig::default();
        c.oal_gamma_grid = vec![0.9];
        assert!(c.validate().is_err());
        let mut c = SelectorConfig::default();
        c.folds = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn nonzero_uses_threshold() {
        assert_eq!(nonzero_indices(&[0.0, 1e-9, -2e-8, 0.5]), vec![2, 3]);
    }
}
