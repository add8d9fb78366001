use std::collections::BTreeMap;

use super::{nonzero_indices, ExposureEstimator, SelectionResult, SelectorConfig};
use crate::error::Result;
use crate::numkit::{
    cv_path, fit_linear_svm, fit_logistic, fit_weighted_elastic_net, lambda1_max, log_spaced_grid,
    standardize, CvPlan, DesignMatrix, FitResult, GramProblem, PenaltyWeights,
};
use crate::smoothing::{inverse_power_weights, ZeroPolicy};
use crate::synthgen::Dataset;

fn exposure_fit(x: &DesignMatrix, t: &[bool], cfg: &SelectorConfig, notes: &mut Vec<String>) -> Result<FitResult> {
    let fit = match cfg.exposure {
        ExposureEstimator::Svm => fit_linear_svm(x, t, cfg.svm_c)?,
        ExposureEstimator::Logistic => fit_logistic(x, t, cfg.logistic_ridge)?,
    };
    if let Some(w) = fit.warning {
        notes.push(format!("exposure model: {w:?}"));
    }
    Ok(fit)
}

struct Tuned {
    fit: FitResult,
    lambda1: f64,
    lambda2: f64,
}

/// Cross-validate `(lambda2, lambda1)` for a weighted elastic net, then refit on all rows.
fn tuned_enet(
    x: &DesignMatrix,
    y: &[f64],
    w: &PenaltyWeights,
    cfg: &SelectorConfig,
    rescale: bool,
) -> Result<Tuned> {
    let problem = GramProblem::new(x.values(), y)?;
    let top = cfg
        .lambda2_grid
        .iter()
        .map(|&l2| lambda1_max(&problem, l2, w.as_slice()))
        .fold(0.0, f64::max);
    let grid = log_spaced_grid(top, cfg.lambda1_count, cfg.lambda1_min_ratio);
    let plan = CvPlan::new(x.nrows(), cfg.folds, cfg.cv_seed)?;
    let cv = cv_path(x, y, &cfg.lambda2_grid, &grid, w, &plan, rescale)?;
    let fit = fit_weighted_elastic_net(x, y, cv.best_lambda1, cv.best_lambda2, w, rescale)?;
    Ok(Tuned {
        fit,
        lambda1: cv.best_lambda1,
        lambda2: cv.best_lambda2,
    })
}

/// Exposure model, smoothed-weight elastic net, then adaptive elastic net.
pub fn run_three_stage(data: &Dataset, cfg: &SelectorConfig) -> Result<SelectionResult> {
    let x = standardize(&data.x)?;
    let mut notes = Vec::new();
    let beta = exposure_fit(&x, &data.t, cfg, &mut notes)?;
    let w = cfg.smoothing_spec()?.weights(&beta.coefficients);

    let stage2 = tuned_enet(&x, &data.y, &w, cfg, false)?;
    let theta = stage2.fit.coefficients.clone();
    let psi = inverse_power_weights(&theta, cfg.gamma2, ZeroPolicy::Exclude);

    let mut hyperparams = BTreeMap::from([
        ("stage2_lambda1".to_string(), stage2.lambda1),
        ("stage2_lambda2".to_string(), stage2.lambda2),
    ]);
    let adaptive = if theta.iter().all(|&v| v == 0.0) {
        notes.push("stage 2 selected nothing; adaptive stage skipped".into());
        vec![0.0; theta.len()]
    } else {
        let stage3 = tuned_enet(&x, &data.y, &psi, cfg, true)?;
        hyperparams.insert("stage3_lambda1".into(), stage3.lambda1);
        hyperparams.insert("stage3_lambda2".into(), stage3.lambda2);
        stage3.fit.coefficients
    };

    Ok(SelectionResult {
        model: cfg.name.clone(),
        exposure: beta.coefficients,
        outcome: theta,
        selected: nonzero_indices(&adaptive),
        adaptive: Some(adaptive),
        hyperparams,
        wall_clock_seconds: 0.0,
        notes,
    })
}

/// Exposure model, then a single smoothed-weight adaptive elastic net with the
/// `(1 + lambda2/n)` rescale.
pub fn run_two_stage_prelim(data: &Dataset, cfg: &SelectorConfig) -> Result<SelectionResult> {
    let x = standardize(&data.x)?;
    let mut notes = Vec::new();
    let beta = exposure_fit(&x, &data.t, cfg, &mut notes)?;
    let w = cfg.smoothing_spec()?.weights(&beta.coefficients);
    let stage2 = tuned_enet(&x, &data.y, &w, cfg, true)?;
    let theta = stage2.fit.coefficients;
    Ok(SelectionResult {
        model: cfg.name.clone(),
        exposure: beta.coefficients,
        selected: nonzero_indices(&theta),
        outcome: theta,
        adaptive: None,
        hyperparams: BTreeMap::from([
            ("stage2_lambda1".to_string(), stage2.lambda1),
            ("stage2_lambda2".to_string(), stage2.lambda2),
        ]),
        wall_clock_seconds: 0.0,
        notes,
    })
}
