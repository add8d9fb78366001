//! Weighted elastic net by covariance-update coordinate descent.
//!
//! Objective, with `n` rows and an unpenalized intercept:
//!
//! ```text
//! 1/(2n) |y - b - X theta|^2 + l2 |theta|^2 + l1 sum_j w_j |theta_j|
//! ```
//!
//! With centered data this is `1/2 theta' G theta - c' theta + ...` where
//! `G = Xc'Xc / n` and `c = Xc'yc / n`, so each sweep costs O(p^2)
//! regardless of `n`.

use nalgebra::{DMatrix, DVector};

use super::{check_len, DesignMatrix, FitResult, FitWarning, PenaltyWeights};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdOptions {
    /// Stop when the largest absolute coefficient change in a sweep is below this.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for CdOptions {
    fn default() -> Self {
        CdOptions {
            tol: 1e-10,
            max_sweeps: 100_000,
        }
    }
}

/// Sufficient statistics of a least-squares problem on centered data.
#[derive(Debug, Clone)]
pub struct GramProblem {
    gram: DMatrix<f64>,
    cov: DVector<f64>,
    x_means: Vec<f64>,
    y_mean: f64,
    n: usize,
}

impl GramProblem {
    pub fn new(x: &DMatrix<f64>, y: &[f64]) -> Result<Self> {
        check_len("outcome", y.len(), x.nrows())?;
        let rows: Vec<usize> = (0..x.nrows()).collect();
        Ok(Self::from_rows(x, y, &rows))
    }

    /// Statistics for the subset `rows` (centered on that subset's means).
    pub fn from_rows(x: &DMatrix<f64>, y: &[f64], rows: &[usize]) -> Self {
        let n = rows.len();
        let p = x.ncols();
        let x_means: Vec<f64> = (0..p)
            .map(|j| rows.iter().map(|&i| x[(i, j)]).sum::<f64>() / n as f64)
            .collect();
        let y_mean = rows.iter().map(|&i| y[i]).sum::<f64>() / n as f64;
        let xc = DMatrix::from_fn(n, p, |r, j| x[(rows[r], j)] - x_means[j]);
        let yc = DVector::from_iterator(n, rows.iter().map(|&i| y[i] - y_mean));
        let gram = xc.tr_mul(&xc) / n as f64;
        let cov = xc.tr_mul(&yc) / n as f64;
        GramProblem {
            gram,
            cov,
            x_means,
            y_mean,
            n,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.cov.len()
    }

    pub fn intercept(&self, theta: &[f64]) -> f64 {
        self.y_mean - theta.iter().zip(&self.x_means).map(|(t, m)| t * m).sum::<f64>()
    }

    /// `c_j - (G theta)_j`: the (negative) smooth-loss gradient per coordinate.
    pub fn correlations(&self, theta: &[f64]) -> Vec<f64> {
        let th = DVector::from_column_slice(theta);
        let gt = &self.gram * th;
        (0..self.p()).map(|j| self.cov[j] - gt[j]).collect()
    }

    /// Coordinate descent from the warm start in `theta`.
    ///
    /// Returns `(sweeps, converged)`.
    pub fn solve(
        &self,
        l1: f64,
        l2: f64,
        w: &[f64],
        theta: &mut [f64],
        opts: &CdOptions,
    ) -> (usize, bool) {
        let p = self.p();
        for j in 0..p {
            if w[j].is_infinite() {
                theta[j] = 0.0;
            }
        }
        let mut gt: Vec<f64> = {
            let th = DVector::from_column_slice(theta);
            (&self.gram * th).iter().copied().collect()
        };
        for sweep in 1..=opts.max_sweeps {
            let mut max_delta: f64 = 0.0;
            for j in 0..p {
                if w[j].is_infinite() {
                    continue;
                }
                let gjj = self.gram[(j, j)];
                let denom = gjj + 2.0 * l2;
                let old = theta[j];
                let new = if denom <= 0.0 {
                    0.0
                } else {
                    let z = self.cov[j] - gt[j] + gjj * old;
                    soft_threshold(z, l1 * w[j]) / denom
                };
                let delta = new - old;
                if delta != 0.0 {
                    theta[j] = new;
                    for (k, g) in gt.iter_mut().enumerate() {
                        *g += self.gram[(k, j)] * delta;
                    }
                    max_delta = max_delta.max(delta.abs());
                }
            }
            if max_delta < opts.tol {
                return (sweep, true);
            }
        }
        (opts.max_sweeps, false)
    }

    /// Largest KKT violation of `theta` for the penalized objective.
    pub fn kkt_violation(&self, theta: &[f64], l1: f64, l2: f64, w: &[f64]) -> f64 {
        let corr = self.correlations(theta);
        let mut worst: f64 = 0.0;
        for j in 0..self.p() {
            if w[j].is_infinite() {
                continue;
            }
            let g = -corr[j] + 2.0 * l2 * theta[j];
            let v = if theta[j] != 0.0 {
                (g + l1 * w[j] * theta[j].signum()).abs()
            } else {
                (g.abs() - l1 * w[j]).max(0.0)
            };
            worst = worst.max(v);
        }
        worst
    }
}

pub(crate) fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Smallest `l1` at which every finitely, positively weighted coefficient is zero.
///
/// Coefficients with zero weight are fitted (ridge only) before the gradient
/// is taken.
pub fn lambda1_max(problem: &GramProblem, l2: f64, w: &[f64]) -> f64 {
    let p = problem.p();
    let mut theta = vec![0.0; p];
    if w.iter().any(|&v| v == 0.0) {
        // penalized coordinates pinned at zero by an infinite weight
        let pinned: Vec<f64> = w.iter().map(|&v| if v == 0.0 { 0.0 } else { f64::INFINITY }).collect();
        problem.solve(0.0, l2, &pinned, &mut theta, &CdOptions::default());
    }
    let corr = problem.correlations(&theta);
    (0..p)
        .filter(|&j| w[j] > 0.0 && w[j].is_finite())
        .map(|j| corr[j].abs() / w[j])
        .fold(0.0, f64::max)
}

/// Evaluate the elastic-net objective directly from the raw rows.
pub fn enet_objective(
    x: &DMatrix<f64>,
    y: &[f64],
    intercept: f64,
    coefs: &[f64],
    l1: f64,
    l2: f64,
    w: &[f64],
) -> f64 {
    let n = x.nrows();
    let rss: f64 = (0..n)
        .map(|i| {
            let f = intercept + coefs.iter().enumerate().map(|(j, b)| b * x[(i, j)]).sum::<f64>();
            (y[i] - f).powi(2)
        })
        .sum();
    let ridge: f64 = coefs.iter().map(|b| b * b).sum();
    let l1_term: f64 = coefs
        .iter()
        .zip(w)
        .filter(|(b, _)| **b != 0.0)
        .map(|(b, wj)| wj * b.abs())
        .sum();
    rss / (2.0 * n as f64) + l2 * ridge + l1 * l1_term
}

/// Weighted elastic-net fit on all rows of `x`.
///
/// With `rescale` the minimizer is multiplied by `(1 + l2 / n)` and the
/// intercept is recomputed for the rescaled coefficients.
pub fn fit_weighted_elastic_net(
    x: &DesignMatrix,
    y: &[f64],
    l1: f64,
    l2: f64,
    w: &PenaltyWeights,
    rescale: bool,
) -> Result<FitResult> {
    fit_weighted_elastic_net_with(x, y, l1, l2, w, rescale, &CdOptions::default(), None)
}

#[allow(clippy::too_many_arguments)]
pub fn fit_weighted_elastic_net_with(
    x: &DesignMatrix,
    y: &[f64],
    l1: f64,
    l2: f64,
    w: &PenaltyWeights,
    rescale: bool,
    opts: &CdOptions,
    warm: Option<&[f64]>,
) -> Result<FitResult> {
    validate_lambdas(l1, l2)?;
    check_len("penalty weights", w.len(), x.ncols())?;
    let problem = GramProblem::new(x.values(), y)?;
    let mut theta = warm.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.ncols()]);
    check_len("warm start", theta.len(), x.ncols())?;
    let (sweeps, converged) = problem.solve(l1, l2, w.as_slice(), &mut theta, opts);
    Ok(finish(&problem, theta, l2, rescale, sweeps, converged))
}

pub(crate) fn finish(
    problem: &GramProblem,
    mut theta: Vec<f64>,
    l2: f64,
    rescale: bool,
    sweeps: usize,
    converged: bool,
) -> FitResult {
    if rescale {
        let factor = 1.0 + l2 / problem.n() as f64;
        for t in theta.iter_mut() {
            *t *= factor;
        }
    }
    let intercept = problem.intercept(&theta);
    FitResult {
        coefficients: theta,
        intercept,
        converged,
        iterations: sweeps,
        warning: if converged { None } else { Some(FitWarning::IterationCap) },
    }
}

pub(crate) fn validate_lambdas(l1: f64, l2: f64) -> Result<()> {
    if !(l1 >= 0.0) || !(l2 >= 0.0) || !l1.is_finite() || !l2.is_finite() {
        return Err(Error::invalid(format!(
            "penalties must be finite and non-negative (l1 = {l1}, l2 = {l2})"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{fit_ols, standardize};

    fn data(n: usize, p: usize, seed: u64) -> (DesignMatrix, Vec<f64>) {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let raw = DMatrix::from_fn(n, p, |_, _| next());
        let x = standardize(&raw).unwrap();
        let y = (0..n)
            .map(|i| 1.5 * x.values()[(i, 0)] - 0.7 * x.values()[(i, p - 1)] + next())
            .collect();
        (x, y)
    }

    #[test]
    fn zero_penalty_matches_ols() {
        let (x, y) = data(80, 5, 3);
        let en = fit_weighted_elastic_net(&x, &y, 0.0, 0.0, &PenaltyWeights::uniform(5), false).unwrap();
        let ols = fit_ols(&x, &y).unwrap();
        for (a, b) in en.coefficients.iter().zip(&ols.coefficients) {
            assert!((a - b).abs() < 1e-8);
        }
        assert!((en.intercept - ols.intercept).abs() < 1e-8);
    }

    #[test]
    fn infinite_weight_excludes() {
        let (x, y) = data(60, 3, 5);
        let w = PenaltyWeights::new(vec![f64::INFINITY, 1.0, 1.0]).unwrap();
        let fit = fit_weighted_elastic_net(&x, &y, 0.0, 0.0, &w, false).unwrap();
        assert_eq!(fit.coefficients[0], 0.0);
    }

    #[test]
    fn lambda_max_zeroes_everything() {
        let (x, y) = data(60, 4, 9);
        let prob = GramProblem::new(x.values(), &y).unwrap();
        let w = [1.0, 2.0, 0.5, 1.0];
        let lmax = lambda1_max(&prob, 0.1, &w);
        let mut th = vec![0.0; 4];
        prob.solve(lmax * 1.0001, 0.1, &w, &mut th, &CdOptions::default());
        assert!(th.iter().all(|&t| t == 0.0));
        let mut th = vec![0.0; 4];
        prob.solve(lmax * 0.99, 0.1, &w, &mut th, &CdOptions::default());
        assert!(th.iter().any(|&t| t != 0.0));
    }

    #[test]
    fn unpenalized_coordinate_enters_lambda_max() {
        let (x, y) = data(60, 3, 13);
        let prob = GramProblem::new(x.values(), &y).unwrap();
        let w = [0.0, 1.0, 1.0];
        let lmax = lambda1_max(&prob, 0.0, &w);
        let mut th = vec![0.0; 3];
        prob.solve(lmax * 1.0001, 0.0, &w, &mut th, &CdOptions::default());
        assert!(th[0] != 0.0 && th[1] == 0.0 && th[2] == 0.0);
    }

    #[test]
    fn kkt_holds_at_solution() {
        let (x, y) = data(100, 6, 21);
        let prob = GramProblem::new(x.values(), &y).unwrap();
        let w = [1.0, 0.5, 2.0, 1.0, 0.7, 1.3];
        let mut th = vec![0.0; 6];
        prob.solve(0.05, 0.2, &w, &mut th, &CdOptions::default());
        assert!(prob.kkt_violation(&th, 0.05, 0.2, &w) <= 1e-6);
    }

    #[test]
    fn rescale_multiplies_coefficients() {
        let (x, y) = data(50, 3, 2);
        let w = PenaltyWeights::uniform(3);
        let raw = fit_weighted_elastic_net(&x, &y, 0.01, 5.0, &w, false).unwrap();
        let scaled = fit_weighted_elastic_net(&x, &y, 0.01, 5.0, &w, true).unwrap();
        for (a, b) in raw.coefficients.iter().zip(&scaled.coefficients) {
            assert!((a * (1.0 + 5.0 / 50.0) - b).abs() < 1e-14);
        }
    }

    #[test]
    fn negative_lambda_rejected() {
        let (x, y) = data(20, 2, 1);
        let w = PenaltyWeights::uniform(2);
        assert!(fit_weighted_elastic_net(&x, &y, -1.0, 0.0, &w, false).is_err());
        assert!(fit_weighted_elastic_net(&x, &y, 0.0, -0.1, &w, false).is_err());
    }
}
