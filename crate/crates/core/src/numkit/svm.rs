//! Linear soft-margin SVM with an unregularized bias.
//!
//! The primal has only `p + 1` unknowns, so it is solved directly: Newton's
//! method on a Huber-smoothed hinge, with the smoothing width shrunk
//! geometrically down to `1e-9` and each stage warm-started from the last. On the
//! true hinge objective the result is within `C n h / 2` of the optimum. The dual
//! variables implied by the smoothed solution give the reported duality gap.

use nalgebra::{DMatrix, DVector};

use super::{check_both_classes, check_len, DesignMatrix, FitResult, FitWarning};
use crate::error::{Error, Result};

const SMOOTHING_STAGES: [f64; 10] = [1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9];
const MAX_NEWTON_PER_STAGE: usize = 100;
const GAP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SvmSolution {
    pub fit: FitResult,
    /// Primal objective `1/2 |w|^2 + C sum hinge` at the returned solution.
    pub objective: f64,
    /// Primal minus dual objective at the returned solution.
    pub duality_gap: f64,
    /// Best primal objective found after each Newton iteration.
    pub objective_trace: Vec<f64>,
    /// Newton iterations over all smoothing stages.
    pub epochs: usize,
}

/// Fit `min 1/2 |beta|^2 + C sum max(0, 1 - l_i (beta.x_i + b))` with `l_i = +1` for
/// `labels[i] == true`.
pub fn fit_linear_svm(x: &DesignMatrix, labels: &[bool], c: f64) -> Result<FitResult> {
    Ok(solve_linear_svm(x, labels, c)?.fit)
}

/// Primal objective for arbitrary `(beta, b)`.
pub fn svm_primal_objective(
    x: &nalgebra::DMatrix<f64>,
    labels: &[bool],
    c: f64,
    intercept: f64,
    coefs: &[f64],
) -> f64 {
    let reg = 0.5 * coefs.iter().map(|b| b * b).sum::<f64>();
    let hinge: f64 = (0..x.nrows())
        .map(|i| {
            let l = if labels[i] { 1.0 } else { -1.0 };
            let f = intercept + coefs.iter().enumerate().map(|(j, b)| b * x[(i, j)]).sum::<f64>();
            (1.0 - l * f).max(0.0)
        })
        .sum();
    reg + c * hinge
}

/// Huber-smoothed hinge of the slack `z = 1 - l f`: value and first two derivatives.
fn smoothed(z: f64, h: f64) -> (f64, f64, f64) {
    if z <= 0.0 {
        (0.0, 0.0, 0.0)
    } else if z < h {
        (z * z / (2.0 * h), z / h, 1.0 / h)
    } else {
        (z - h / 2.0, 1.0, 0.0)
    }
}

struct Problem<'a> {
    /// Rows augmented with a trailing 1 for the bias.
    xa: DMatrix<f64>,
    lab: &'a [f64],
    c: f64,
    p: usize,
}

impl Problem<'_> {
    fn slacks(&self, v: &DVector<f64>) -> DVector<f64> {
        let f = &self.xa * v;
        DVector::from_iterator(f.len(), f.iter().zip(self.lab).map(|(fi, l)| 1.0 - l * fi))
    }

    fn reg(&self, v: &DVector<f64>) -> f64 {
        0.5 * v.rows(0, self.p).norm_squared()
    }

    fn smoothed_objective(&self, v: &DVector<f64>, h: f64) -> f64 {
        self.reg(v) + self.c * self.slacks(v).iter().map(|&z| smoothed(z, h).0).sum::<f64>()
    }

    fn hinge_objective(&self, v: &DVector<f64>) -> f64 {
        self.reg(v) + self.c * self.slacks(v).iter().map(|&z| z.max(0.0)).sum::<f64>()
    }

    /// Dual variables `alpha_i = C l'(z_i)` implied by the smoothed fit, and the
    /// dual objective `sum alpha - 1/2 |sum alpha_i l_i x_i|^2`.
    fn dual(&self, v: &DVector<f64>, h: f64) -> f64 {
        let z = self.slacks(v);
        let mut w = DVector::zeros(self.p);
        let mut sum = 0.0;
        let mut balance = 0.0;
        for (i, &zi) in z.iter().enumerate() {
            let a = self.c * smoothed(zi, h).1;
            if a > 0.0 {
                sum += a;
                balance += a * self.lab[i];
                w.axpy(a * self.lab[i], &self.xa.row(i).columns(0, self.p).transpose(), 1.0);
            }
        }
        // the implied alphas satisfy sum alpha_i l_i = 0 only at stationarity
        if balance.abs() > 1e-6 * sum.max(1.0) {
            return f64::NEG_INFINITY;
        }
        sum - 0.5 * w.norm_squared()
    }
}

pub fn solve_linear_svm(x: &DesignMatrix, labels: &[bool], c: f64) -> Result<SvmSolution> {
    let xv = x.values();
    let (n, p) = xv.shape();
    check_len("labels", labels.len(), n)?;
    check_both_classes(labels)?;
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::invalid(format!("SVM penalty C must be finite and > 0, got {c}")));
    }
    let lab: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
    let prob = Problem {
        xa: DMatrix::from_fn(n, p + 1, |i, j| if j < p { xv[(i, j)] } else { 1.0 }),
        lab: &lab,
        c,
        p,
    };

    let mut v = DVector::zeros(p + 1);
    let mut best = (prob.hinge_objective(&v), v.clone());
    let mut trace = Vec::new();
    let mut epochs = 0;
    let mut stage_ok = true;
    let mut h = SMOOTHING_STAGES[0];
    for &stage_h in &SMOOTHING_STAGES {
        h = stage_h;
        stage_ok = false;
        let mut obj = prob.smoothed_objective(&v, h);
        for _ in 0..MAX_NEWTON_PER_STAGE {
            let z = prob.slacks(&v);
            let mut grad = DVector::zeros(p + 1);
            let mut hess = DMatrix::zeros(p + 1, p + 1);
            for j in 0..p {
                grad[j] = v[j];
                hess[(j, j)] = 1.0;
            }
            for i in 0..n {
                let (_, d1, d2) = smoothed(z[i], h);
                if d1 == 0.0 && d2 == 0.0 {
                    continue;
                }
                let row = prob.xa.row(i);
                grad.axpy(-c * d1 * lab[i], &row.transpose(), 1.0);
                if d2 > 0.0 {
                    hess.ger(c * d2, &row.transpose(), &row.transpose(), 1.0);
                }
            }
            let scale = hess.diagonal().max().max(1.0);
            hess[(p, p)] += 1e-12 * scale;
            let gnorm = grad.norm();
            if gnorm <= 1e-12 * scale.sqrt() * (1.0 + v.norm()) {
                stage_ok = true;
                break;
            }
            let step = match hess.clone().cholesky() {
                Some(ch) => ch.solve(&grad),
                None => grad.clone(),
            };
            let slope = grad.dot(&step);
            let mut t = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let cand = &v - &step * t;
                let cand_obj = prob.smoothed_objective(&cand, h);
                if cand_obj <= obj - 1e-4 * t * slope {
                    moved = cand_obj < obj || t == 1.0;
                    v = cand;
                    obj = cand_obj;
                    break;
                }
                t *= 0.5;
            }
            epochs += 1;
            let exact = prob.hinge_objective(&v);
            if exact < best.0 {
                best = (exact, v.clone());
            }
            trace.push(best.0);
            if !moved {
                stage_ok = true;
                break;
            }
        }
    }

    // any dual-feasible point bounds the optimum from below
    let dual = prob.dual(&v, h);
    let (objective, v) = best;
    let gap = (objective - dual).max(0.0);
    let converged = stage_ok && gap <= GAP_TOL * objective.max(1.0);
    let coefs: Vec<f64> = v.rows(0, p).iter().copied().collect();
    Ok(SvmSolution {
        fit: FitResult {
            coefficients: coefs,
            intercept: v[p],
            converged,
            iterations: epochs,
            warning: if converged { None } else { Some(FitWarning::IterationCap) },
        },
        objective,
        duality_gap: gap,
        objective_trace: trace,
        epochs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn two_points_split_at_midpoint() {
        let x = DesignMatrix::unscaled(DMatrix::from_column_slice(2, 1, &[-1.0, 1.0])).unwrap();
        let fit = fit_linear_svm(&x, &[false, true], 1.0).unwrap();
        let boundary = -fit.intercept / fit.coefficients[0];
        assert!(boundary.abs() < 1e-6, "boundary {boundary}");
        assert!((fit.coefficients[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn asymmetric_pair_midpoint() {
        let x = DesignMatrix::unscaled(DMatrix::from_column_slice(2, 1, &[2.0, 6.0])).unwrap();
        let fit = fit_linear_svm(&x, &[true, false], 10.0).unwrap();
        let boundary = -fit.intercept / fit.coefficients[0];
        assert!((boundary - 4.0).abs() < 1e-6, "boundary {boundary}");
    }

    #[test]
    fn rejects_bad_input() {
        let x = DesignMatrix::unscaled(DMatrix::from_column_slice(2, 1, &[-1.0, 1.0])).unwrap();
        assert_eq!(fit_linear_svm(&x, &[true, true], 1.0), Err(Error::DegenerateLabels));
        assert!(matches!(fit_linear_svm(&x, &[true, false], 0.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn trace_is_non_increasing() {
        let raw = DMatrix::from_fn(40, 3, |i, j| ((i * 31 + j * 17) % 23) as f64 / 7.0 - 1.5);
        let x = crate::numkit::standardize(&raw).unwrap();
        let labels: Vec<bool> = (0..40).map(|i| x.values()[(i, 0)] + 0.3 * x.values()[(i, 2)] > 0.1).collect();
        let sol = solve_linear_svm(&x, &labels, 1.0).unwrap();
        assert!(sol.objective_trace.windows(2).all(|w| w[1] <= w[0]));
        let direct = svm_primal_objective(x.values(), &labels, 1.0, sol.fit.intercept, &sol.fit.coefficients);
        assert!((direct - sol.objective).abs() < 1e-9 * direct.max(1.0));
    }
}
