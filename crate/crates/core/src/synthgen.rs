//! Synthetic scenarios with known variable classes and a known treatment effect.
//!
//! Covariates are equicorrelated standard Gaussians, treatment is Bernoulli with
//! a logistic link on `x'beta`, and the outcome is `alpha * t + x'theta + noise`.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numkit::{expit, sample_equicorrelated_gaussian_with};

pub const DEFAULT_P: usize = 20;
const MAX_TREATMENT_REDRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VariableClass {
    /// Drives both treatment and outcome.
    Confounder,
    /// Drives the outcome only.
    PureOutcome,
    /// Drives treatment only.
    PureTreatment,
    /// Drives neither.
    Noise,
}

/// Ground-truth class of every covariate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableClasses(Vec<VariableClass>);

impl VariableClasses {
    pub fn from_coefficients(theta: &[f64], beta: &[f64]) -> Self {
        VariableClasses(
            theta
                .iter()
                .zip(beta)
                .map(|(&th, &be)| match (th != 0.0, be != 0.0) {
                    (true, true) => VariableClass::Confounder,
                    (true, false) => VariableClass::PureOutcome,
                    (false, true) => VariableClass::PureTreatment,
                    (false, false) => VariableClass::Noise,
                })
                .collect(),
        )
    }

    pub fn new(classes: Vec<VariableClass>) -> Self {
        VariableClasses(classes)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn class(&self, j: usize) -> VariableClass {
        self.0[j]
    }

    /// 0-based indices of covariates in `class`.
    pub fn indices(&self, class: VariableClass) -> Vec<usize> {
        (0..self.0.len()).filter(|&j| self.0[j] == class).collect()
    }

    /// Confounders and pure outcome predictors: the set a selector should return.
    pub fn target_set(&self) -> Vec<usize> {
        (0..self.0.len())
            .filter(|&j| matches!(self.0[j], VariableClass::Confounder | VariableClass::PureOutcome))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    /// 1..=4 for the built-in scenarios, 0 for custom coefficient vectors.
    pub id: u8,
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub true_effect: f64,
    pub outcome_noise_sd: f64,
    /// Constant added to the treatment log-odds (0 gives a symmetric design).
    pub exposure_intercept: f64,
}

impl ScenarioSpec {
    /// Built-in scenario `id` with `p` covariates (at least 6).
    ///
    /// Covariates 1-2 are confounders, 3-4 pure outcome predictors, 5-6 pure
    /// treatment predictors, the rest noise.
    pub fn scenario(id: u8, p: usize) -> Result<Self> {
        if p < 6 {
            return Err(Error::invalid(format!("scenarios need p >= 6, got {p}")));
        }
        let (theta_head, beta_head): ([f64; 4], [f64; 6]) = match id {
            1 => ([0.6, 0.6, 0.6, 0.6], [1.0, 1.0, 0.0, 0.0, 1.0, 1.0]),
            2 => ([0.6, 0.6, 0.6, 0.6], [0.4, 0.4, 0.0, 0.0, 1.0, 1.0]),
            3 => ([0.2, 0.2, 0.6, 0.6], [1.0, 1.0, 0.0, 0.0, 1.0, 1.0]),
            4 => ([0.6, 0.6, 0.6, 0.6], [1.0, 1.0, 0.0, 0.0, 1.8, 1.8]),
            _ => return Err(Error::invalid(format!("unknown scenario {id}; expected 1-4"))),
        };
        let mut theta = vec![0.0; p];
        let mut beta = vec![0.0; p];
        theta[..4].copy_from_slice(&theta_head);
        beta[..6].copy_from_slice(&beta_head);
        Ok(ScenarioSpec {
            id,
            theta,
            beta,
            true_effect: 0.0,
            outcome_noise_sd: 1.0,
            exposure_intercept: 0.0,
        })
    }

    pub fn custom(theta: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if theta.len() != beta.len() || theta.is_empty() {
            return Err(Error::dims(format!(
                "theta has {} entries, beta has {}",
                theta.len(),
                beta.len()
            )));
        }
        Ok(ScenarioSpec {
            id: 0,
            theta,
            beta,
            true_effect: 0.0,
            outcome_noise_sd: 1.0,
            exposure_intercept: 0.0,
        })
    }

    pub fn with_true_effect(mut self, alpha: f64) -> Self {
        self.true_effect = alpha;
        self
    }

    pub fn with_noise_sd(mut self, sd: f64) -> Self {
        self.outcome_noise_sd = sd;
        self
    }

    pub fn with_exposure_intercept(mut self, b0: f64) -> Self {
        self.exposure_intercept = b0;
        self
    }

    pub fn p(&self) -> usize {
        self.theta.len()
    }

    pub fn classes(&self) -> VariableClasses {
        VariableClasses::from_coefficients(&self.theta, &self.beta)
    }
}

/// Covariates, treatment and outcome for one study, with optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub t: Vec<bool>,
    pub y: Vec<f64>,
    pub truth: Option<VariableClasses>,
    pub true_effect: Option<f64>,
    pub names: Vec<String>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, t: Vec<bool>, y: Vec<f64>) -> Result<Self> {
        if t.len() != x.nrows() || y.len() != x.nrows() {
            return Err(Error::dims(format!(
                "{} rows of covariates, {} treatments, {} outcomes",
                x.nrows(),
                t.len(),
                y.len()
            )));
        }
        let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        Ok(Dataset {
            x,
            t,
            y,
            truth: None,
            true_effect: None,
            names,
        })
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p() {
            return Err(Error::dims(format!("{} names for {} covariates", names.len(), self.p())));
        }
        self.names = names;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn treated(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.t[i]).collect()
    }

    pub fn controls(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| !self.t[i]).collect()
    }

    pub fn treated_fraction(&self) -> f64 {
        self.t.iter().filter(|&&t| t).count() as f64 / self.n() as f64
    }

    /// The rows `rows`, in that order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: DMatrix::from_fn(rows.len(), self.p(), |i, j| self.x[(rows[i], j)]),
            t: rows.iter().map(|&i| self.t[i]).collect(),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            truth: self.truth.clone(),
            true_effect: self.true_effect,
            names: self.names.clone(),
        }
    }
}

/// Draw a dataset of `n` rows from `spec` with covariate correlation `rho`.
pub fn generate(spec: &ScenarioSpec, n: usize, rho: f64, seed: u64) -> Result<Dataset> {
    if n < 20 {
        return Err(Error::invalid(format!("need N >= 20, got {n}")));
    }
    if spec.theta.len() != spec.beta.len() {
        return Err(Error::dims("theta and beta differ in length"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = spec.p();
    let x = sample_equicorrelated_gaussian_with(&mut rng, n, p, rho)?;
    let prob: Vec<f64> = (0..n)
        .map(|i| {
            let eta: f64 = spec.exposure_intercept
                + (0..p).map(|j| spec.beta[j] * x[(i, j)]).sum::<f64>();
            expit(eta)
        })
        .collect();

    let mut t = Vec::new();
    for attempt in 0..=MAX_TREATMENT_REDRAWS {
        if attempt == MAX_TREATMENT_REDRAWS {
            return Err(Error::DegenerateScenario(MAX_TREATMENT_REDRAWS));
        }
        t = prob.iter().map(|&pr| rng.random::<f64>() < pr).collect();
        let treated = t.iter().filter(|&&v| v).count();
        if treated > 0 && treated < n {
            break;
        }
    }

    let y = (0..n)
        .map(|i| {
            let noise: f64 = rng.sample(StandardNormal);
            let lin: f64 = (0..p).map(|j| spec.theta[j] * x[(i, j)]).sum();
            spec.true_effect * if t[i] { 1.0 } else { 0.0 } + lin + spec.outcome_noise_sd * noise
        })
        .collect();

    let mut data = Dataset::new(x, t, y)?;
    data.truth = Some(spec.classes());
    data.true_effect = Some(spec.true_effect);
    Ok(data)
}

/// The ATT implied by `spec`; under the linear outcome model it is the constant effect.
pub fn true_att(spec: &ScenarioSpec) -> f64 {
    spec.true_effect
}
