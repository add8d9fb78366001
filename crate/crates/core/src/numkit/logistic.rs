use nalgebra::{DMatrix, DVector};

use super::{check_both_classes, check_len, DesignMatrix, FitResult, FitWarning};
use crate::error::{Error, Result};

/// Largest absolute slope allowed before the fit is declared separated.
pub const LOGISTIC_COEF_CAP: f64 = 50.0;
const MAX_NEWTON: usize = 200;
const GRAD_TOL: f64 = 1e-9;

pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^eta) without overflow.
pub(crate) fn log1pexp(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

fn linear_predictor(x: &DMatrix<f64>, intercept: f64, coefs: &[f64]) -> Vec<f64> {
    let mut eta = vec![intercept; x.nrows()];
    for (j, &b) in coefs.iter().enumerate() {
        if b != 0.0 {
            for (e, v) in eta.iter_mut().zip(x.column(j).iter()) {
                *e += b * v;
            }
        }
    }
    eta
}

/// Negative log-likelihood plus `ridge/2 * ||coefs||^2` (intercept unpenalized).
pub fn logistic_objective(
    x: &DMatrix<f64>,
    labels: &[bool],
    intercept: f64,
    coefs: &[f64],
    ridge: f64,
) -> f64 {
    let eta = linear_predictor(x, intercept, coefs);
    let nll: f64 = eta
        .iter()
        .zip(labels)
        .map(|(&e, &t)| log1pexp(e) - if t { e } else { 0.0 })
        .sum();
    nll + 0.5 * ridge * coefs.iter().map(|b| b * b).sum::<f64>()
}

/// Gradient of [`logistic_objective`]; entry 0 is the intercept.
pub fn logistic_gradient(
    x: &DMatrix<f64>,
    labels: &[bool],
    intercept: f64,
    coefs: &[f64],
    ridge: f64,
) -> Vec<f64> {
    let eta = linear_predictor(x, intercept, coefs);
    let resid: Vec<f64> = eta
        .iter()
        .zip(labels)
        .map(|(&e, &t)| expit(e) - if t { 1.0 } else { 0.0 })
        .collect();
    let mut g = Vec::with_capacity(coefs.len() + 1);
    g.push(resid.iter().sum());
    for (j, &b) in coefs.iter().enumerate() {
        let dot: f64 = x.column(j).iter().zip(&resid).map(|(v, r)| v * r).sum();
        g.push(dot + ridge * b);
    }
    g
}

/// Ridge-stabilized logistic regression by damped Newton iterations.
///
/// If any slope would exceed [`LOGISTIC_COEF_CAP`] the slopes are clipped,
/// `converged` is false and the warning is [`FitWarning::Separation`].
pub fn fit_logistic(x: &DesignMatrix, labels: &[bool], ridge: f64) -> Result<FitResult> {
    let xv = x.values();
    let (n, p) = xv.shape();
    check_len("labels", labels.len(), n)?;
    check_both_classes(labels)?;
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::invalid(format!("ridge must be finite and >= 0, got {ridge}")));
    }

    let pos = labels.iter().filter(|&&t| t).count() as f64;
    let mut intercept = (pos / (n as f64 - pos)).ln();
    let mut coefs = vec![0.0; p];
    let mut obj = logistic_objective(xv, labels, intercept, &coefs, ridge);
    // design with a leading column of ones
    let xa = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { xv[(i, j - 1)] });

    for iter in 1..=MAX_NEWTON {
        let g = DVector::from_vec(logistic_gradient(xv, labels, intercept, &coefs, ridge));
        if g.norm() <= GRAD_TOL {
            return Ok(settle(xv, labels, ridge, intercept, coefs, iter - 1));
        }
        let eta = linear_predictor(xv, intercept, &coefs);
        let mut h = DMatrix::zeros(p + 1, p + 1);
        for i in 0..n {
            let pr = expit(eta[i]);
            let wi = (pr * (1.0 - pr)).max(1e-300);
            let row = xa.row(i);
            for a in 0..=p {
                let ra = wi * row[a];
                for b in a..=p {
                    h[(a, b)] += ra * row[b];
                }
            }
        }
        for a in 0..=p {
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
            if a > 0 {
                h[(a, a)] += ridge;
            }
        }
        // tiny jitter keeps the factorization alive when weights underflow
        let step = match h.clone().cholesky() {
            Some(c) => c.solve(&g),
            None => {
                for a in 0..=p {
                    h[(a, a)] += 1e-10 * (1.0 + h[(a, a)]);
                }
                match h.cholesky() {
                    Some(c) => c.solve(&g),
                    None => g.clone(),
                }
            }
        };

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand_b0 = intercept - t * step[0];
            let cand: Vec<f64> = (0..p).map(|j| coefs[j] - t * step[j + 1]).collect();
            let cand_obj = logistic_objective(xv, labels, cand_b0, &cand, ridge);
            if cand_obj <= obj + 1e-4 * t * -(g.dot(&step)) || cand_obj < obj {
                intercept = cand_b0;
                coefs = cand;
                let change = obj - cand_obj;
                obj = cand_obj;
                accepted = true;
                if coefs.iter().any(|b| b.abs() > LOGISTIC_COEF_CAP) {
                    for b in coefs.iter_mut() {
                        *b = b.clamp(-LOGISTIC_COEF_CAP, LOGISTIC_COEF_CAP);
                    }
                    return Ok(done(intercept, coefs, false, iter, Some(FitWarning::Separation)));
                }
                if change.abs() <= 1e-15 * obj.abs().max(1.0) && t < 1e-6 {
                    return Ok(settle(xv, labels, ridge, intercept, coefs, iter));
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // no descent possible: at machine-precision optimum
            return Ok(settle(xv, labels, ridge, intercept, coefs, iter));
        }
    }
    Ok(done(intercept, coefs, false, MAX_NEWTON, Some(FitWarning::IterationCap)))
}

/// Without a ridge a completely separating fit has no finite optimum: push it out
/// to the cap along its own direction and flag it.
fn settle(x: &DMatrix<f64>, labels: &[bool], ridge: f64, intercept: f64, coefs: Vec<f64>, iter: usize) -> FitResult {
    let eta = linear_predictor(x, intercept, &coefs);
    let separated = eta.iter().zip(labels).all(|(&e, &t)| if t { e > 0.0 } else { e < 0.0 });
    let largest = coefs.iter().fold(0.0f64, |m, b| m.max(b.abs()));
    if ridge > 0.0 || !separated || largest == 0.0 {
        return done(intercept, coefs, true, iter, None);
    }
    let scale = LOGISTIC_COEF_CAP / largest;
    let capped = coefs.iter().map(|b| b * scale).collect();
    done(intercept * scale, capped, false, iter, Some(FitWarning::Separation))
}

fn done(
    intercept: f64,
    coefs: Vec<f64>,
    converged: bool,
    iterations: usize,
    warning: Option<FitWarning>,
) -> FitResult {
    FitResult {
        coefficients: coefs,
        intercept,
        converged,
        iterations,
        warning,
    }
}
