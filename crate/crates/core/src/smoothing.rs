//! Penalty weights derived from first-stage coefficients.
//!
//! Exposure-first selectors penalize a covariate *more* the stronger its
//! exposure coefficient, through a bounded smoothing function. Outcome-first
//! selectors and the adaptive stage use inverse powers instead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::PenaltyWeights;

pub const DEFAULT_SIGMOID_GAMMA: f64 = 1.0;
pub const DEFAULT_TANH_GAMMA: f64 = 0.5;
pub const DEFAULT_ADAPTIVE_GAMMA: f64 = 1.0;

/// Value used by [`ZeroPolicy::Clamp`] by default.
pub const DEFAULT_ZERO_CLAMP: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmoothingKind {
    Sigmoid,
    Tanh,
    InversePower,
    OalInverse,
}

/// What an inverse-power weight does with an exactly-zero coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ZeroPolicy {
    /// Weight `+inf`: the coefficient is excluded downstream.
    #[default]
    Exclude,
    /// Weight capped at the given finite value.
    Clamp(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingSpec {
    kind: SmoothingKind,
    gamma: f64,
}

impl SmoothingSpec {
    pub fn new(kind: SmoothingKind, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::invalid(format!("smoothing power must be finite and > 0, got {gamma}")));
        }
        Ok(SmoothingSpec { kind, gamma })
    }

    pub fn sigmoid() -> Self {
        SmoothingSpec {
            kind: SmoothingKind::Sigmoid,
            gamma: DEFAULT_SIGMOID_GAMMA,
        }
    }

    pub fn tanh() -> Self {
        SmoothingSpec {
            kind: SmoothingKind::Tanh,
            gamma: DEFAULT_TANH_GAMMA,
        }
    }

    pub fn kind(&self) -> SmoothingKind {
        self.kind
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// True for the bounded exposure-first smoothers.
    pub fn is_bounded(&self) -> bool {
        matches!(self.kind, SmoothingKind::Sigmoid | SmoothingKind::Tanh)
    }

    pub fn weights(&self, coefs: &[f64]) -> PenaltyWeights {
        match self.kind {
            SmoothingKind::Sigmoid => sigmoid_weights(coefs, self.gamma),
            SmoothingKind::Tanh => tanh_weights(coefs, self.gamma),
            SmoothingKind::InversePower | SmoothingKind::OalInverse => {
                inverse_power_weights(coefs, self.gamma, ZeroPolicy::Exclude)
            }
        }
    }
}

/// `w_j = (1 / (1 + exp(-|beta_j|)))^gamma`, in `[0.5^gamma, 1)`.
pub fn sigmoid_weights(beta: &[f64], gamma: f64) -> PenaltyWeights {
    map_weights(beta, |a| (1.0 / (1.0 + (-a).exp())).powf(gamma))
}

/// `w_j = tanh(|beta_j|)^gamma`, in `[0, 1)`.
pub fn tanh_weights(beta: &[f64], gamma: f64) -> PenaltyWeights {
    map_weights(beta, |a| a.tanh().powf(gamma))
}

/// `w_j = |theta_j|^(-gamma)`.
pub fn inverse_power_weights(theta: &[f64], gamma: f64, zero: ZeroPolicy) -> PenaltyWeights {
    map_weights(theta, |a| {
        if a == 0.0 {
            match zero {
                ZeroPolicy::Exclude => f64::INFINITY,
                ZeroPolicy::Clamp(cap) => cap,
            }
        } else {
            let w = a.powf(-gamma);
            match zero {
                ZeroPolicy::Clamp(cap) => w.min(cap),
                ZeroPolicy::Exclude => w,
            }
        }
    })
}

fn map_weights(coefs: &[f64], f: impl Fn(f64) -> f64) -> PenaltyWeights {
    // all maps above are non-negative on |c|, NaN-free for finite input
    PenaltyWeights::new(coefs.iter().map(|c| f(c.abs())).collect())
        .expect("smoothing maps finite input to non-negative weights")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_reference_values() {
        assert_eq!(sigmoid_weights(&[0.0], 1.0)[0], 0.5);
        assert!((1.0 - sigmoid_weights(&[100.0], 1.0)[0]).abs() < 1e-10);
        // 1 / (1 + e^-1) to 20 digits: 0.73105857863000487925
        assert!((sigmoid_weights(&[1.0], 1.0)[0] - 0.731_058_578_630_004_9).abs() < 1e-9);
        assert_eq!(sigmoid_weights(&[-1.0], 1.0), sigmoid_weights(&[1.0], 1.0));
    }

    #[test]
    fn tanh_reference_values() {
        assert_eq!(tanh_weights(&[0.0], 0.5)[0], 0.0);
        assert!((1.0 - tanh_weights(&[40.0], 0.5)[0]).abs() < 1e-12);
        // sqrt(tanh(0.5)) = 0.67979199558395048706
        assert!((tanh_weights(&[0.5], 0.5)[0] - 0.679_791_995_583_950_5).abs() < 1e-9);
    }

    #[test]
    fn inverse_power_values() {
        let w = inverse_power_weights(&[1.0, 0.5, 0.0, -0.5], 1.0, ZeroPolicy::Exclude);
        assert_eq!(w.as_slice(), &[1.0, 2.0, f64::INFINITY, 2.0]);
        let c = inverse_power_weights(&[0.0, 1e-12], 1.0, ZeroPolicy::Clamp(DEFAULT_ZERO_CLAMP));
        assert_eq!(c.as_slice(), &[1e8, 1e8]);
    }

    #[test]
    fn rejects_bad_gamma() {
        assert!(SmoothingSpec::new(SmoothingKind::Tanh, 0.0).is_err());
        assert!(SmoothingSpec::new(SmoothingKind::Tanh, f64::NAN).is_err());
        assert!(SmoothingSpec::new(SmoothingKind::Sigmoid, 2.0).is_ok());
    }

    #[test]
    fn defaults() {
        assert_eq!(SmoothingSpec::sigmoid().gamma(), 1.0);
        assert_eq!(SmoothingSpec::tanh().gamma(), 0.5);
    }
}
