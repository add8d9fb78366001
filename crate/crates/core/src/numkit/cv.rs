use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::enet::{finish, validate_lambdas};
use super::{check_len, CdOptions, DesignMatrix, FitResult, GramProblem, PenaltyWeights};
use crate::error::{Error, Result};

/// Seeded K-fold assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CvPlan {
    folds: usize,
    assignment: Vec<usize>,
    seed: u64,
}

impl CvPlan {
    /// Shuffle `0..n` with `seed` and deal the shuffled indices round-robin.
    pub fn new(n: usize, folds: usize, seed: u64) -> Result<Self> {
        if folds < 2 {
            return Err(Error::invalid(format!("need at least 2 folds, got {folds}")));
        }
        if n < folds {
            return Err(Error::invalid(format!("{n} rows cannot fill {folds} folds")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut assignment = vec![0; n];
        for (k, &i) in order.iter().enumerate() {
            assignment[i] = k % folds;
        }
        Ok(CvPlan {
            folds,
            assignment,
            seed,
        })
    }

    pub fn folds(&self) -> usize {
        self.folds
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    /// (training rows, held-out rows) for fold `k`.
    pub fn split(&self, k: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.assignment.len()).partition(|&i| self.assignment[i] != k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvPoint {
    pub lambda2: f64,
    pub lambda1: f64,
    pub mean_error: f64,
    pub standard_error: f64,
    pub fold_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub best_lambda2: f64,
    pub best_lambda1: f64,
    pub table: Vec<CvPoint>,
}

/// `count` log-spaced values from `max` down to `min_ratio * max`.
pub fn log_spaced_grid(max: f64, count: usize, min_ratio: f64) -> Vec<f64> {
    if !(max > 0.0) || count == 0 {
        return vec![0.0];
    }
    if count == 1 {
        return vec![max];
    }
    let (hi, lo) = (max.ln(), (max * min_ratio).ln());
    (0..count)
        .map(|k| {
            if k == 0 {
                max
            } else {
                (hi + (lo - hi) * k as f64 / (count - 1) as f64).exp()
            }
        })
        .collect()
}

/// Fits along a descending `lambda1` path at fixed `lambda2`, warm-starting each fit.
pub fn fit_path(
    x: &DesignMatrix,
    y: &[f64],
    lambda2: f64,
    lambda1_grid: &[f64],
    w: &PenaltyWeights,
    rescale: bool,
) -> Result<Vec<(f64, FitResult)>> {
    check_len("penalty weights", w.len(), x.ncols())?;
    let problem = GramProblem::new(x.values(), y)?;
    let opts = CdOptions::default();
    let mut theta = vec![0.0; x.ncols()];
    let mut out = Vec::with_capacity(lambda1_grid.len());
    for &l1 in &descending(lambda1_grid) {
        validate_lambdas(l1, lambda2)?;
        let (sweeps, ok) = problem.solve(l1, lambda2, w.as_slice(), &mut theta, &opts);
        out.push((l1, finish(&problem, theta.clone(), lambda2, rescale, sweeps, ok)));
    }
    Ok(out)
}

fn descending(grid: &[f64]) -> Vec<f64> {
    let mut g = grid.to_vec();
    g.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    g.dedup();
    g
}

/// K-fold cross-validation over a `(lambda2, lambda1)` grid with the one-standard-error rule.
///
/// For each `lambda2` the `lambda1` values are swept from largest to smallest with
/// warm starts. The chosen pair is the one with the largest `lambda1` whose mean
/// held-out MSE is within one standard error of the overall minimum (ties go to
/// the lower mean error).
pub fn cv_path(
    x: &DesignMatrix,
    y: &[f64],
    lambda2_grid: &[f64],
    lambda1_grid: &[f64],
    w: &PenaltyWeights,
    plan: &CvPlan,
    rescale: bool,
) -> Result<CvOutcome> {
    let xv = x.values();
    let n = xv.nrows();
    check_len("outcome", y.len(), n)?;
    check_len("penalty weights", w.len(), xv.ncols())?;
    check_len("fold assignment", plan.len(), n)?;
    if lambda2_grid.is_empty() || lambda1_grid.is_empty() {
        return Err(Error::invalid("lambda grids must be non-empty"));
    }
    let l1s = descending(lambda1_grid);
    for &l2 in lambda2_grid {
        for &l1 in &l1s {
            validate_lambdas(l1, l2)?;
        }
    }

    let opts = CdOptions::default();
    let k = plan.folds();
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let (train, test) = plan.split(f);
        let first = y[test[0]];
        if test.len() > 1 && test.iter().all(|&i| y[i] == first) {
            return Err(Error::ZeroVarianceFold { fold: f });
        }
        folds.push((GramProblem::from_rows(xv, y, &train), test));
    }

    let mut table = Vec::with_capacity(lambda2_grid.len() * l1s.len());
    for &l2 in lambda2_grid {
        let mut errs = vec![vec![0.0; k]; l1s.len()];
        for (f, (prob, test)) in folds.iter().enumerate() {
            let mut theta = vec![0.0; xv.ncols()];
            for (a, &l1) in l1s.iter().enumerate() {
                let (sweeps, ok) = prob.solve(l1, l2, w.as_slice(), &mut theta, &opts);
                let fit = finish(prob, theta.clone(), l2, rescale, sweeps, ok);
                let mse = test
                    .iter()
                    .map(|&i| (y[i] - fit.linear_predictor(xv, i)).powi(2))
                    .sum::<f64>()
                    / test.len() as f64;
                errs[a][f] = mse;
            }
        }
        for (a, &l1) in l1s.iter().enumerate() {
            let e = &errs[a];
            let mean = e.iter().sum::<f64>() / k as f64;
            let var = e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
            table.push(CvPoint {
                lambda2: l2,
                lambda1: l1,
                mean_error: mean,
                standard_error: (var / k as f64).sqrt(),
                fold_errors: e.clone(),
            });
        }
    }

    let best = select_one_se(&table);
    Ok(CvOutcome {
        best_lambda2: table[best].lambda2,
        best_lambda1: table[best].lambda1,
        table,
    })
}

fn select_one_se(table: &[CvPoint]) -> usize {
    let min_idx = (0..table.len())
        .min_by(|&a, &b| table[a].mean_error.total_cmp(&table[b].mean_error))
        .expect("non-empty table");
    let threshold = table[min_idx].mean_error + table[min_idx].standard_error;
    (0..table.len())
        .filter(|&i| table[i].mean_error <= threshold)
        .max_by(|&a, &b| {
            table[a]
                .lambda1
                .total_cmp(&table[b].lambda1)
                .then(table[b].mean_error.total_cmp(&table[a].mean_error))
        })
        .unwrap_or(min_idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(l2: f64, l1: f64, mean: f64, se: f64) -> CvPoint {
        CvPoint {
            lambda2: l2,
            lambda1: l1,
            mean_error: mean,
            standard_error: se,
            fold_errors: vec![],
        }
    }

    #[test]
    fn plan_is_reproducible_and_balanced() {
        let a = CvPlan::new(103, 10, 7).unwrap();
        let b = CvPlan::new(103, 10, 7).unwrap();
        assert_eq!(a, b);
        for f in 0..10 {
            let c = a.assignment().iter().filter(|&&v| v == f).count();
            assert!(c == 10 || c == 11);
        }
        assert_ne!(a, CvPlan::new(103, 10, 8).unwrap());
    }

    #[test]
    fn plan_rejects_too_few_rows() {
        assert!(CvPlan::new(3, 10, 0).is_err());
        assert!(CvPlan::new(30, 1, 0).is_err());
    }

    #[test]
    fn one_se_picks_largest_lambda_in_band() {
        let t = vec![
            point(0.0, 1.0, 1.30, 0.1),
            point(0.0, 0.5, 1.12, 0.1),
            point(0.0, 0.1, 1.05, 0.1),
            point(0.1, 1.0, 1.20, 0.1),
            point(0.1, 0.5, 1.00, 0.1),
        ];
        // min 1.00 + 0.1 = 1.10: candidates 1.05 (l1 .1), 1.00 (l1 .5); largest l1 = 0.5
        let best = select_one_se(&t);
        assert_eq!((t[best].lambda2, t[best].lambda1), (0.1, 0.5));
    }

    #[test]
    fn grid_endpoints() {
        let g = log_spaced_grid(2.0, 50, 1e-3);
        assert_eq!(g.len(), 50);
        assert_eq!(g[0], 2.0);
        assert!((g[49] - 2e-3).abs() < 1e-15);
        assert!(g.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(log_spaced_grid(0.0, 50, 1e-3), vec![0.0]);
    }
}
