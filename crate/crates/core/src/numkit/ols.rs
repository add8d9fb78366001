use nalgebra::{DMatrix, DVector};

use super::{check_len, DesignMatrix, FitResult, FitWarning};
use crate::error::{Error, Result};

const CONDITION_LIMIT: f64 = 1e10;
const FALLBACK_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OlsOptions {
    /// Add a 1e-6 ridge (on the per-observation Gram scale) when N <= p or the
    /// Gram matrix condition number exceeds 1e10, instead of failing.
    pub ridge_fallback: bool,
}

impl Default for OlsOptions {
    fn default() -> Self {
        OlsOptions { ridge_fallback: true }
    }
}

/// Least squares with an unpenalized intercept.
pub fn fit_ols(x: &DesignMatrix, y: &[f64]) -> Result<FitResult> {
    fit_ols_with(x, y, OlsOptions::default())
}

pub fn fit_ols_with(x: &DesignMatrix, y: &[f64], opts: OlsOptions) -> Result<FitResult> {
    let xv = x.values();
    let (n, p) = xv.shape();
    check_len("outcome", y.len(), n)?;

    let means: Vec<f64> = (0..p).map(|j| xv.column(j).mean()).collect();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let active: Vec<usize> = (0..p)
        .filter(|&j| xv.column(j).iter().any(|&v| v != xv[(0, j)]))
        .collect();
    let k = active.len();
    let mut coefs = vec![0.0; p];
    if k == 0 {
        return Ok(FitResult {
            coefficients: coefs,
            intercept: y_mean,
            converged: true,
            iterations: 1,
            warning: None,
        });
    }

    let xc = DMatrix::from_fn(n, k, |i, a| xv[(i, active[a])] - means[active[a]]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let mut gram = xc.tr_mul(&xc) / n as f64;
    let rhs = xc.tr_mul(&yc) / n as f64;

    let eig = gram.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.max();
    let min_ev = eig.eigenvalues.min();
    let ill = n <= k || min_ev <= 0.0 || max_ev / min_ev > CONDITION_LIMIT;
    let mut warning = None;
    if ill {
        if !opts.ridge_fallback {
            return Err(Error::SingularSystem);
        }
        for a in 0..k {
            gram[(a, a)] += FALLBACK_RIDGE;
        }
        warning = Some(FitWarning::RidgeFallback);
    }
    let chol = gram.cholesky().ok_or(Error::SingularSystem)?;
    let sol = chol.solve(&rhs);
    for (a, &j) in active.iter().enumerate() {
        coefs[j] = sol[a];
    }
    let intercept = y_mean - coefs.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
    Ok(FitResult {
        coefficients: coefs,
        intercept,
        converged: true,
        iterations: 1,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::standardize;

    fn design(n: usize, p: usize, seed: u64) -> DesignMatrix {
        let mut s = seed;
        let raw = DMatrix::from_fn(n, p, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        });
        standardize(&raw).unwrap()
    }

    #[test]
    fn exact_linear_response() {
        let x = design(30, 4, 1);
        let y: Vec<f64> = (0..30).map(|i| 2.0 * x.values()[(i, 0)]).collect();
        let fit = fit_ols(&x, &y).unwrap();
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-8);
        for b in &fit.coefficients[1..] {
            assert!(b.abs() < 1e-8);
        }
        assert!(fit.warning.is_none());
    }

    #[test]
    fn residuals_orthogonal_to_columns() {
        let x = design(50, 3, 7);
        let y: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).cos()).collect();
        let fit = fit_ols(&x, &y).unwrap();
        let resid: Vec<f64> = (0..50).map(|i| y[i] - fit.linear_predictor(x.values(), i)).collect();
        assert!(resid.iter().sum::<f64>().abs() < 1e-8);
        for j in 0..3 {
            let dot: f64 = (0..50).map(|i| resid[i] * x.values()[(i, j)]).sum();
            assert!(dot.abs() < 1e-8, "column {j}: {dot}");
        }
    }

    #[test]
    fn orthogonal_noise_gives_zero_coefficients() {
        // columns and response built from orthogonal contrasts
        let n = 8;
        let raw = DMatrix::from_fn(n, 2, |i, j| match j {
            0 => if i % 2 == 0 { 1.0 } else { -1.0 },
            _ => if (i / 2) % 2 == 0 { 1.0 } else { -1.0 },
        });
        let x = standardize(&raw).unwrap();
        let y: Vec<f64> = (0..n).map(|i| if (i / 4) % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let fit = fit_ols(&x, &y).unwrap();
        assert!(fit.coefficients.iter().all(|b| b.abs() < 1e-8));
    }

    #[test]
    fn wide_system_falls_back_or_errors() {
        let x = design(4, 6, 3);
        let y = vec![1.0, 2.0, 0.5, -1.0];
        let fit = fit_ols(&x, &y).unwrap();
        assert_eq!(fit.warning, Some(FitWarning::RidgeFallback));
        assert!(fit.coefficients.iter().all(|b| b.is_finite()));
        let err = fit_ols_with(&x, &y, OlsOptions { ridge_fallback: false });
        assert_eq!(err, Err(Error::SingularSystem));
    }

    #[test]
    fn duplicated_column_is_singular() {
        let base = design(20, 2, 11);
        let raw = DMatrix::from_fn(20, 3, |i, j| base.values()[(i, j.min(1))]);
        let x = DesignMatrix::unscaled(raw).unwrap();
        let y: Vec<f64> = (0..20).map(|i| i as f64).collect();
        assert_eq!(
            fit_ols_with(&x, &y, OlsOptions { ridge_fallback: false }),
            Err(Error::SingularSystem)
        );
        assert_eq!(fit_ols(&x, &y).unwrap().warning, Some(FitWarning::RidgeFallback));
    }
}
