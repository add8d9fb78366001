use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::{check_data, nonzero_indices, SelectionResult, SelectorConfig, PROPENSITY_CLIP};
use crate::error::{Error, Result};
use crate::numkit::{
    expit, fit_ols, fit_penalized_logistic, log_spaced_grid, penalized_logistic_lambda_max, standardize,
    DesignMatrix, FitResult, PenaltyWeights,
};
use crate::smoothing::{inverse_power_weights, ZeroPolicy};
use crate::synthgen::Dataset;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wamd {
    pub value: f64,
    /// Some propensity fell outside the clipping band.
    pub clipped: bool,
}

/// Weighted absolute mean difference:
/// `sum_j |outcome_j| * |treated IPTW mean of x_j - control IPTW mean of x_j|`
/// with weights `1/pi` for treated and `1/(1 - pi)` for controls (normalized
/// within each arm).
pub fn wamd_from_propensities(
    x: &DMatrix<f64>,
    t: &[bool],
    propensity: &[f64],
    outcome_coefs: &[f64],
) -> Result<Wamd> {
    let (n, p) = x.shape();
    if t.len() != n || propensity.len() != n || outcome_coefs.len() != p {
        return Err(Error::dims(format!(
            "wAMD inputs: {n}x{p} covariates, {} labels, {} propensities, {} coefficients",
            t.len(),
            propensity.len(),
            outcome_coefs.len()
        )));
    }
    let mut clipped = false;
    let weights: Vec<f64> = (0..n)
        .map(|i| {
            let raw = propensity[i];
            let pi = raw.clamp(PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP);
            clipped |= pi != raw;
            if t[i] {
                1.0 / pi
            } else {
                1.0 / (1.0 - pi)
            }
        })
        .collect();
    let (mut sum_t, mut sum_c) = (0.0, 0.0);
    for i in 0..n {
        if t[i] {
            sum_t += weights[i];
        } else {
            sum_c += weights[i];
        }
    }
    if sum_t == 0.0 || sum_c == 0.0 {
        return Err(Error::DegenerateLabels);
    }
    let mut value = 0.0;
    for j in 0..p {
        if outcome_coefs[j] == 0.0 {
            continue;
        }
        let (mut mt, mut mc) = (0.0, 0.0);
        for i in 0..n {
            if t[i] {
                mt += weights[i] * x[(i, j)];
            } else {
                mc += weights[i] * x[(i, j)];
            }
        }
        value += outcome_coefs[j].abs() * (mt / sum_t - mc / sum_c).abs();
    }
    Ok(Wamd { value, clipped })
}

/// [`wamd_from_propensities`] with propensities `expit(b + x'beta)` from `exposure`.
pub fn compute_wamd(x: &DMatrix<f64>, t: &[bool], exposure: &FitResult, outcome_coefs: &[f64]) -> Result<Wamd> {
    let prop: Vec<f64> = (0..x.nrows()).map(|i| expit(exposure.linear_predictor(x, i))).collect();
    wamd_from_propensities(x, t, &prop, outcome_coefs)
}

/// One OAL/OAENet exposure fit at fixed tuning values.
#[derive(Debug, Clone, PartialEq)]
pub struct OalFit {
    /// Reported coefficients: the minimizer scaled by `(1 + lambda2/n)`.
    pub exposure: FitResult,
    /// The penalized minimizer itself; propensities come from it.
    pub raw: FitResult,
    /// OLS outcome coefficients on standardized covariates.
    pub outcome: Vec<f64>,
    pub wamd: Wamd,
}

fn rescaled(raw: &FitResult, lambda2: f64, n: usize) -> FitResult {
    let factor = 1.0 + lambda2 / n as f64;
    FitResult {
        coefficients: raw.coefficients.iter().map(|b| b * factor).collect(),
        ..raw.clone()
    }
}

fn oal_weights(outcome: &[f64], gamma: f64) -> PenaltyWeights {
    inverse_power_weights(outcome, gamma, ZeroPolicy::Exclude)
}

/// Fit the outcome-adaptive exposure model at `(lambda1, lambda2, gamma)`.
pub fn oal_fit_at(data: &Dataset, lambda1: f64, lambda2: f64, gamma: f64) -> Result<OalFit> {
    check_data(data)?;
    let x = standardize(&data.x)?;
    let outcome = fit_ols(&x, &data.y)?.coefficients;
    let w = oal_weights(&outcome, gamma);
    let raw = fit_penalized_logistic(&x, &data.t, lambda1, lambda2, &w, None)?;
    let wamd = compute_wamd(x.values(), &data.t, &raw, &outcome)?;
    Ok(OalFit {
        exposure: rescaled(&raw, lambda2, data.n()),
        raw,
        outcome,
        wamd,
    })
}

struct Best {
    wamd: Wamd,
    lambda1: f64,
    lambda2: f64,
    gamma: f64,
    fit: FitResult,
}

fn search(data: &Dataset, cfg: &SelectorConfig, lambda2_grid: &[f64]) -> Result<SelectionResult> {
    let x: DesignMatrix = standardize(&data.x)?;
    let ols = fit_ols(&x, &data.y)?;
    let outcome = ols.coefficients;
    let mut notes = Vec::new();
    if let Some(w) = ols.warning {
        notes.push(format!("outcome OLS: {w:?}"));
    }

    let mut best: Option<Best> = None;
    let mut any_clipped = false;
    for &gamma in &cfg.oal_gamma_grid {
        let w = oal_weights(&outcome, gamma);
        let lmax = penalized_logistic_lambda_max(&x, &data.t, &w)?;
        let grid = log_spaced_grid(lmax, cfg.oal_lambda_count, cfg.oal_lambda_min_ratio);
        for &l2 in lambda2_grid {
            let mut warm: Option<FitResult> = None;
            for &l1 in &grid {
                let fit = fit_penalized_logistic(&x, &data.t, l1, l2, &w, warm.as_ref())?;
                let wamd = compute_wamd(x.values(), &data.t, &fit, &outcome)?;
                any_clipped |= wamd.clipped;
                if best.as_ref().is_none_or(|b| wamd.value < b.wamd.value) {
                    best = Some(Best {
                        wamd,
                        lambda1: l1,
                        lambda2: l2,
                        gamma,
                        fit: fit.clone(),
                    });
                }
                warm = Some(fit);
            }
        }
    }
    let best = best.expect("grids are validated non-empty");
    if any_clipped {
        notes.push("propensities clipped for wAMD".into());
    }
    if !best.fit.converged {
        notes.push("exposure fit hit its iteration cap".into());
    }
    let exposure = rescaled(&best.fit, best.lambda2, data.n()).coefficients;
    Ok(SelectionResult {
        model: cfg.name.clone(),
        selected: nonzero_indices(&exposure),
        exposure,
        outcome,
        adaptive: None,
        hyperparams: BTreeMap::from([
            ("oal_lambda1".to_string(), best.lambda1),
            ("oal_lambda2".to_string(), best.lambda2),
            ("oal_gamma".to_string(), best.gamma),
            ("wamd".to_string(), best.wamd.value),
        ]),
        wall_clock_seconds: 0.0,
        notes,
    })
}

/// Outcome-adaptive lasso: `(lambda1, gamma)` chosen to minimize wAMD.
pub fn run_oal(data: &Dataset, cfg: &SelectorConfig) -> Result<SelectionResult> {
    search(data, cfg, &[0.0])
}

/// Outcome-adaptive elastic net: `(lambda1, lambda2, gamma)` chosen to minimize wAMD.
pub fn run_oaenet(data: &Dataset, cfg: &SelectorConfig) -> Result<SelectionResult> {
    search(data, cfg, &cfg.oaenet_lambda2_grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_arms_have_zero_wamd() {
        let x = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 1.0, 2.0]);
        let t = [true, true, false, false];
        let w = wamd_from_propensities(&x, &t, &[0.5; 4], &[3.0]).unwrap();
        assert_eq!(w.value, 0.0);
        assert!(!w.clipped);
    }

    #[test]
    fn zero_outcome_coefficients_give_zero() {
        let x = DMatrix::from_column_slice(4, 1, &[1.0, 5.0, -1.0, 2.0]);
        let t = [true, true, false, false];
        assert_eq!(wamd_from_propensities(&x, &t, &[0.3; 4], &[0.0]).unwrap().value, 0.0);
    }

    #[test]
    fn extreme_propensities_are_clipped() {
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let w = wamd_from_propensities(&x, &[true, false], &[1.0, 0.0], &[1.0]).unwrap();
        assert!(w.clipped);
        assert_eq!(w.value, 1.0);
    }
}
