//! Weighted elastic-net logistic regression on the sum-of-losses scale:
//!
//! ```text
//! sum_i [log(1 + e^eta_i) - t_i eta_i] + l2 |beta|^2 + l1 sum_j w_j |beta_j|
//! ```
//!
//! Solved by proximal Newton: each outer step minimizes the penalized quadratic
//! model of the likelihood by coordinate descent on its Hessian, then
//! backtracks on the true objective.

use nalgebra::DMatrix;

use super::enet::soft_threshold;
use super::logistic::{expit, log1pexp};
use super::{check_both_classes, check_len, DesignMatrix, FitResult, FitWarning, PenaltyWeights};
use crate::error::{Error, Result};

const MAX_OUTER: usize = 200;
const MAX_INNER_SWEEPS: usize = 1_000;
const INNER_TOL: f64 = 1e-12;
const OBJ_TOL: f64 = 1e-13;

fn penalty(coefs: &[f64], l1: f64, l2: f64, w: &[f64]) -> f64 {
    coefs
        .iter()
        .zip(w)
        .map(|(&b, &wj)| l2 * b * b + if b == 0.0 { 0.0 } else { l1 * wj * b.abs() })
        .sum()
}

fn eta(x: &DMatrix<f64>, intercept: f64, coefs: &[f64]) -> Vec<f64> {
    let mut e = vec![intercept; x.nrows()];
    for (j, &b) in coefs.iter().enumerate() {
        if b != 0.0 {
            for (ei, v) in e.iter_mut().zip(x.column(j).iter()) {
                *ei += b * v;
            }
        }
    }
    e
}

fn nll(eta: &[f64], labels: &[bool]) -> f64 {
    eta.iter()
        .zip(labels)
        .map(|(&e, &t)| log1pexp(e) - if t { e } else { 0.0 })
        .sum()
}

/// Value of the penalized objective at `(intercept, coefs)`.
pub fn penalized_logistic_objective(
    x: &DMatrix<f64>,
    labels: &[bool],
    intercept: f64,
    coefs: &[f64],
    l1: f64,
    l2: f64,
    w: &PenaltyWeights,
) -> f64 {
    nll(&eta(x, intercept, coefs), labels) + penalty(coefs, l1, l2, w.as_slice())
}

/// Minimizer of [`penalized_logistic_objective`], optionally warm-started.
///
/// Coefficients with infinite weight are exactly zero.
pub fn fit_penalized_logistic(
    x: &DesignMatrix,
    labels: &[bool],
    l1: f64,
    l2: f64,
    w: &PenaltyWeights,
    warm: Option<&FitResult>,
) -> Result<FitResult> {
    let xv = x.values();
    let (n, p) = xv.shape();
    check_len("labels", labels.len(), n)?;
    check_len("penalty weights", w.len(), p)?;
    check_both_classes(labels)?;
    if !(l1 >= 0.0 && l2 >= 0.0) || !l1.is_finite() || !l2.is_finite() {
        return Err(Error::invalid(format!("penalties must be finite and >= 0, got l1={l1}, l2={l2}")));
    }
    let wv = w.as_slice();
    let pos = labels.iter().filter(|&&t| t).count() as f64;

    // v = (intercept, beta); coordinate 0 is unpenalized
    let mut v = vec![0.0; p + 1];
    match warm {
        Some(f) => {
            check_len("warm start", f.coefficients.len(), p)?;
            v[0] = f.intercept;
            for j in 0..p {
                v[j + 1] = if wv[j].is_infinite() { 0.0 } else { f.coefficients[j] };
            }
        }
        None => v[0] = (pos / (n as f64 - pos)).ln(),
    }
    let xa = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { xv[(i, j - 1)] });
    let l1w: Vec<f64> = std::iter::once(0.0).chain(wv.iter().map(|&wj| l1 * wj)).collect();
    let ridge: Vec<f64> = std::iter::once(0.0).chain(std::iter::repeat_n(2.0 * l2, p)).collect();

    let objective = |v: &[f64]| -> f64 {
        nll(&eta(xv, v[0], &v[1..]), labels) + penalty(&v[1..], l1, l2, wv)
    };
    let mut obj = objective(&v);
    let mut converged = false;
    let mut iterations = 0;

    for outer in 1..=MAX_OUTER {
        iterations = outer;
        let e = eta(xv, v[0], &v[1..]);
        let mut grad = vec![0.0; p + 1];
        let mut hess = DMatrix::<f64>::zeros(p + 1, p + 1);
        for i in 0..n {
            let pr = expit(e[i]);
            let r = pr - if labels[i] { 1.0 } else { 0.0 };
            let wi = (pr * (1.0 - pr)).max(1e-12);
            let row = xa.row(i);
            for a in 0..=p {
                grad[a] += r * row[a];
                let ra = wi * row[a];
                for b in a..=p {
                    hess[(a, b)] += ra * row[b];
                }
            }
        }
        for a in 0..=p {
            for b in 0..a {
                hess[(a, b)] = hess[(b, a)];
            }
        }

        // minimize grad'd + 1/2 d'Hd + penalty(v + d) over z = v + d
        let mut z = v.clone();
        let mut hd = vec![0.0; p + 1];
        for _ in 0..MAX_INNER_SWEEPS {
            let mut max_change: f64 = 0.0;
            for j in 0..=p {
                if l1w[j].is_infinite() {
                    z[j] = 0.0;
                    continue;
                }
                let a = hess[(j, j)] + ridge[j];
                if a <= 0.0 {
                    continue;
                }
                let old = z[j];
                let smooth_grad = grad[j] + hd[j] + ridge[j] * old;
                let new = if j == 0 {
                    old - smooth_grad / a
                } else {
                    soft_threshold(a * old - smooth_grad, l1w[j]) / a
                };
                let delta = new - old;
                if delta != 0.0 {
                    z[j] = new;
                    for k in 0..=p {
                        hd[k] += hess[(k, j)] * delta;
                    }
                    max_change = max_change.max(delta.abs() * a.sqrt());
                }
            }
            if max_change < INNER_TOL {
                break;
            }
        }

        polish_active_set(&hess, &grad, &ridge, &l1w, &v, &mut z);

        let d: Vec<f64> = z.iter().zip(&v).map(|(a, b)| a - b).collect();
        let pen_v = penalty(&v[1..], l1, l2, wv);
        let decrease = grad.iter().zip(&d).map(|(g, di)| g * di).sum::<f64>()
            + penalty(&z[1..], l1, l2, wv)
            - pen_v;
        if decrease > -OBJ_TOL * obj.abs().max(1.0) {
            converged = true;
            break;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let cand: Vec<f64> = v.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let cand_obj = objective(&cand);
            if cand_obj <= obj + 1e-4 * t * decrease {
                let change = obj - cand_obj;
                v = cand;
                obj = cand_obj;
                accepted = true;
                if change <= OBJ_TOL * obj.abs().max(1.0) {
                    converged = true;
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted || converged {
            converged = true;
            break;
        }
    }

    let mut coefs = v[1..].to_vec();
    for (j, c) in coefs.iter_mut().enumerate() {
        if wv[j].is_infinite() {
            *c = 0.0;
        }
    }
    Ok(FitResult {
        coefficients: coefs,
        intercept: v[0],
        converged,
        iterations,
        warning: if converged { None } else { Some(FitWarning::IterationCap) },
    })
}

/// Coordinate descent crawls along ill-conditioned directions of the Hessian.
/// With the support and signs fixed the quadratic model is smooth, so solve it
/// directly and keep the result if the signs survive.
fn polish_active_set(
    hess: &DMatrix<f64>,
    grad: &[f64],
    ridge: &[f64],
    l1w: &[f64],
    v: &[f64],
    z: &mut [f64],
) {
    let active: Vec<usize> = (0..z.len()).filter(|&j| j == 0 || (z[j] != 0.0 && l1w[j].is_finite())).collect();
    let k = active.len();
    let mut lhs = DMatrix::from_fn(k, k, |a, b| hess[(active[a], active[b])]);
    let mut rhs = nalgebra::DVector::zeros(k);
    for (a, &j) in active.iter().enumerate() {
        lhs[(a, a)] += ridge[j];
        let hv: f64 = (0..v.len()).map(|m| hess[(j, m)] * v[m]).sum();
        let sign = if j == 0 { 0.0 } else { z[j].signum() };
        rhs[a] = hv - grad[j] - l1w[j] * sign;
    }
    let Some(ch) = lhs.cholesky() else { return };
    let sol = ch.solve(&rhs);
    let keeps_signs = active
        .iter()
        .enumerate()
        .all(|(a, &j)| j == 0 || sol[a].signum() == z[j].signum());
    if keeps_signs && sol.iter().all(|s| s.is_finite()) {
        for (a, &j) in active.iter().enumerate() {
            z[j] = sol[a];
        }
    }
}

/// Smallest `l1` at which every coefficient with positive weight is zero, on the
/// sum-of-losses scale, for an intercept-only fit.
pub fn penalized_logistic_lambda_max(x: &DesignMatrix, labels: &[bool], w: &PenaltyWeights) -> Result<f64> {
    let xv = x.values();
    check_len("labels", labels.len(), xv.nrows())?;
    check_len("penalty weights", w.len(), xv.ncols())?;
    let mean = labels.iter().filter(|&&t| t).count() as f64 / labels.len() as f64;
    let mut best: f64 = 0.0;
    for j in 0..xv.ncols() {
        let wj = w[j];
        if wj.is_infinite() || wj == 0.0 {
            continue;
        }
        let g: f64 = (0..xv.nrows())
            .map(|i| xv[(i, j)] * (if labels[i] { 1.0 } else { 0.0 } - mean))
            .sum();
        best = best.max(g.abs() / wj);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{fit_logistic, standardize};

    fn toy() -> (DesignMatrix, Vec<bool>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let raw = DMatrix::from_fn(80, 3, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let x = standardize(&raw).unwrap();
        let t = (0..80)
            .map(|i| rng.random::<f64>() < expit(x.values()[(i, 0)] - 0.5 * x.values()[(i, 1)]))
            .collect();
        (x, t)
    }

    #[test]
    fn zero_penalty_matches_unpenalized_newton() {
        let (x, t) = toy();
        let a = fit_penalized_logistic(&x, &t, 0.0, 0.0, &PenaltyWeights::uniform(3), None).unwrap();
        let b = fit_logistic(&x, &t, 0.0).unwrap();
        assert!(a.converged, "{a:?} vs {b:?}");
        for j in 0..3 {
            assert!((a.coefficients[j] - b.coefficients[j]).abs() < 1e-6, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn lambda_max_zeroes_everything() {
        let (x, t) = toy();
        let w = PenaltyWeights::new(vec![1.0, 2.0, 0.5]).unwrap();
        let lmax = penalized_logistic_lambda_max(&x, &t, &w).unwrap();
        let at = fit_penalized_logistic(&x, &t, lmax * 1.0001, 0.0, &w, None).unwrap();
        assert!(at.coefficients.iter().all(|&b| b == 0.0));
        let below = fit_penalized_logistic(&x, &t, lmax * 0.9, 0.0, &w, None).unwrap();
        assert!(below.coefficients.iter().any(|&b| b != 0.0));
    }

    #[test]
    fn infinite_weight_is_exact_zero() {
        let (x, t) = toy();
        let w = PenaltyWeights::new(vec![f64::INFINITY, 1.0, 1.0]).unwrap();
        let fit = fit_penalized_logistic(&x, &t, 0.1, 0.5, &w, None).unwrap();
        assert_eq!(fit.coefficients[0], 0.0);
    }
}
