use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Unit diagonal, `rho` everywhere else.
pub fn equicorrelation_matrix(p: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { rho })
}

/// `n` draws from a p-variate Gaussian with unit variances and common correlation `rho`.
pub fn sample_equicorrelated_gaussian(n: usize, p: usize, rho: f64, seed: u64) -> Result<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_equicorrelated_gaussian_with(&mut rng, n, p, rho)
}

/// As [`sample_equicorrelated_gaussian`], drawing from a caller-owned generator.
pub fn sample_equicorrelated_gaussian_with<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    p: usize,
    rho: f64,
) -> Result<DMatrix<f64>> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::invalid(format!("correlation must lie in [0, 1), got {rho}")));
    }
    if p == 0 {
        return Err(Error::invalid("need at least one covariate"));
    }
    let chol = equicorrelation_matrix(p, rho)
        .cholesky()
        .ok_or_else(|| Error::invalid("equicorrelation matrix is not positive definite"))?;
    let l = chol.l();
    let mut out = DMatrix::zeros(n, p);
    let mut z = vec![0.0; p];
    for i in 0..n {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for a in 0..p {
            let mut s = 0.0;
            for b in 0..=a {
                s += l[(a, b)] * z[b];
            }
            out[(i, a)] = s;
        }
    }
    Ok(out)
}
