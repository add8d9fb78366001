//! Invariant suite run by `tristage selftest`.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use tristage::causal::{
    att_for_selection, estimate_att, nearest_neighbor_match, standardized_difference, MatchOptions,
};
use tristage::frameworks::{run_selector, SelectionResult, SelectorConfig};
use tristage::numkit::{
    fit_ols, fit_path, fit_weighted_elastic_net, lambda1_max, log_spaced_grid, logistic_gradient,
    logistic_objective, sample_equicorrelated_gaussian, solve_linear_svm, standardize, CvPlan, GramProblem,
    PenaltyWeights,
};
use tristage::smoothing::{inverse_power_weights, sigmoid_weights, tanh_weights, ZeroPolicy};
use tristage::synthgen::{generate, Dataset, ScenarioSpec, VariableClass};

use crate::bootstrap::{run_study, LoadedData, RealDataJob};
use crate::grid::{read_records, run_grid, ExperimentGrid, Manifest, MANIFEST_FILE};

type Outcome = std::result::Result<String, String>;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub module: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
    pub seconds: f64,
}

impl SelftestReport {
    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count()
    }
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}::{} ({:.2}s): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.module,
            self.name,
            self.seconds,
            self.detail
        )
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_design(rng: &mut ChaCha8Rng, n: usize, p: usize) -> (DMatrix<f64>, Vec<f64>) {
    let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = (0..n)
        .map(|i| {
            let signal: f64 = (0..p).map(|j| x[(i, j)] * if j % 2 == 0 { 1.0 } else { -0.5 }).sum();
            signal + rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    (x, y)
}

fn enet_kkt() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let (raw, y) = random_design(&mut rng, 60, 5);
        let x = standardize(&raw).map_err(|e| e.to_string())?;
        let w: Vec<f64> = (0..5).map(|_| rng.random_range(0.5..2.0)).collect();
        let pw = PenaltyWeights::new(w.clone()).map_err(|e| e.to_string())?;
        let problem = GramProblem::new(x.values(), &y).map_err(|e| e.to_string())?;
        let l2 = if k % 2 == 0 { 0.0 } else { 0.1 };
        let l1 = 0.3 * lambda1_max(&problem, l2, &w);
        let fit = fit_weighted_elastic_net(&x, &y, l1, l2, &pw, false).map_err(|e| e.to_string())?;
        worst = worst.max(problem.kkt_violation(&fit.coefficients, l1, l2, &w));
    }
    ensure(worst <= 1e-6, || format!("largest KKT violation {worst:e} > 1e-6"))?;
    Ok(format!("20 instances, largest KKT violation {worst:.1e}"))
}

fn enet_path_monotone() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for _ in 0..10 {
        let (raw, y) = random_design(&mut rng, 100, 8);
        let x = standardize(&raw).map_err(|e| e.to_string())?;
        let w = PenaltyWeights::uniform(8);
        let problem = GramProblem::new(x.values(), &y).map_err(|e| e.to_string())?;
        for l2 in [0.0, 0.1] {
            let grid = log_spaced_grid(lambda1_max(&problem, l2, w.as_slice()), 50, 1e-3);
            let path = fit_path(&x, &y, l2, &grid, &w, false).map_err(|e| e.to_string())?;
            let counts: Vec<usize> = path
                .iter()
                .map(|(_, f)| f.coefficients.iter().filter(|c| **c != 0.0).count())
                .collect();
            // the path runs from the largest lambda1 down
            ensure(counts.windows(2).all(|c| c[0] <= c[1]), || format!("nonzero counts {counts:?}"))?;
        }
    }
    Ok("10 instances x 2 ridge values, 50-point paths".into())
}

fn ols_reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (raw, y) = random_design(&mut rng, 40, 6);
        let x = standardize(&raw).map_err(|e| e.to_string())?;
        let w = PenaltyWeights::new((0..6).map(|_| rng.random_range(0.1..5.0)).collect()).map_err(|e| e.to_string())?;
        let a = fit_weighted_elastic_net(&x, &y, 0.0, 0.0, &w, false).map_err(|e| e.to_string())?;
        let b = fit_ols(&x, &y).map_err(|e| e.to_string())?;
        for (u, v) in a.coefficients.iter().zip(&b.coefficients) {
            worst = worst.max((u - v).abs());
        }
        worst = worst.max((a.intercept - b.intercept).abs());
    }
    ensure(worst <= 1e-8, || format!("max difference {worst:e} > 1e-8"))?;
    Ok(format!("20 instances, max difference {worst:.1e}"))
}

fn logistic_gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let (raw, _) = random_design(&mut rng, 50, 4);
    let labels: Vec<bool> = (0..50).map(|_| rng.random::<bool>()).collect();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let b0: f64 = rng.random_range(-1.0..1.0);
        let b: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = logistic_gradient(&raw, &labels, b0, &b, 0.3);
        for k in 0..=4 {
            let shift = |d: f64| {
                let mut bb = b.clone();
                let mut c0 = b0;
                if k == 0 {
                    c0 += d;
                } else {
                    bb[k - 1] += d;
                }
                logistic_objective(&raw, &labels, c0, &bb, 0.3)
            };
            let fd = (shift(h) - shift(-h)) / (2.0 * h);
            worst = worst.max((fd - g[k]).abs() / g[k].abs().max(fd.abs()).max(1e-8));
        }
    }
    ensure(worst <= 1e-4, || format!("worst relative error {worst:e}"))?;
    Ok(format!("10 points, worst relative error {worst:.1e}"))
}

fn svm_trace() -> Outcome {
    let mut worst_rise: f64 = 0.0;
    for seed in 1..=5 {
        let data = generate(&ScenarioSpec::scenario(1, 20).map_err(|e| e.to_string())?, 300, 0.0, seed)
            .map_err(|e| e.to_string())?;
        let x = standardize(&data.x).map_err(|e| e.to_string())?;
        let sol = solve_linear_svm(&x, &data.t, 1.0).map_err(|e| e.to_string())?;
        for w in sol.objective_trace.windows(2) {
            worst_rise = worst_rise.max(w[1] - w[0]);
        }
    }
    ensure(worst_rise <= 0.0, || format!("objective rose by {worst_rise:e}"))?;
    Ok("5 fits, traces non-increasing".into())
}

fn reproducibility() -> Outcome {
    let a = sample_equicorrelated_gaussian(50, 5, 0.3, 9).map_err(|e| e.to_string())?;
    let b = sample_equicorrelated_gaussian(50, 5, 0.3, 9).map_err(|e| e.to_string())?;
    ensure(a == b, || "Gaussian sampler differs under one seed".into())?;
    let c1 = CvPlan::new(100, 10, 4).map_err(|e| e.to_string())?;
    let c2 = CvPlan::new(100, 10, 4).map_err(|e| e.to_string())?;
    ensure(c1.assignment() == c2.assignment(), || "fold assignment differs under one seed".into())?;
    let spec = ScenarioSpec::scenario(2, 20).map_err(|e| e.to_string())?;
    let d1 = generate(&spec, 200, 0.5, 3).map_err(|e| e.to_string())?;
    let d2 = generate(&spec, 200, 0.5, 3).map_err(|e| e.to_string())?;
    ensure(d1 == d2, || "generated datasets differ under one seed".into())?;
    let cfg = SelectorConfig::preset("enh-esvms").map_err(|e| e.to_string())?;
    let r1 = run_selector(&d1, &cfg).map_err(|e| e.to_string())?;
    let r2 = run_selector(&d1, &cfg).map_err(|e| e.to_string())?;
    ensure(r1.selected == r2.selected && r1.adaptive == r2.adaptive, || "selector output differs".into())?;
    Ok("sampler, folds, generator and selector repeat exactly".into())
}

fn smoothing_monotone() -> Outcome {
    let grid: Vec<f64> = (0..=400).map(|k| k as f64 * 0.025).collect();
    for (name, w) in [
        ("sigmoid", sigmoid_weights(&grid, 1.0)),
        ("tanh", tanh_weights(&grid, 0.5)),
        ("tanh g=1", tanh_weights(&grid, 1.0)),
    ] {
        ensure(w.as_slice().windows(2).all(|p| p[0] < p[1]), || format!("{name} weights not strictly increasing"))?;
    }
    let pos: Vec<f64> = grid[1..].to_vec();
    let inv = inverse_power_weights(&pos, 1.0, ZeroPolicy::Exclude);
    ensure(inv.as_slice().windows(2).all(|p| p[0] > p[1]), || "inverse-power weights not strictly decreasing".into())?;
    let neg: Vec<f64> = grid.iter().map(|v| -v).collect();
    ensure(sigmoid_weights(&neg, 1.0) == sigmoid_weights(&grid, 1.0), || "sigmoid not symmetric in sign".into())?;
    Ok("401-point grid on [0, 10]".into())
}

fn smoothing_range() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    for _ in 0..100 {
        let p = rng.random_range(1..40);
        let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-10.0..10.0)).collect();
        for gamma in [0.5, 1.0, 2.0] {
            let s = sigmoid_weights(&beta, gamma);
            let t = tanh_weights(&beta, gamma);
            ensure(s.as_slice().iter().all(|&w| w >= 0.5f64.powf(gamma) && w < 1.0), || "sigmoid out of range".into())?;
            ensure(t.as_slice().iter().all(|&w| (0.0..1.0).contains(&w)), || "tanh out of range".into())?;
            for w in [s, t] {
                let sq: f64 = w.as_slice().iter().map(|v| v * v).sum();
                ensure(sq < p as f64, || format!("sum of squared weights {sq} >= p = {p}"))?;
            }
        }
    }
    Ok("100 random coefficient vectors x 3 powers".into())
}

/// Beyond this point sigmoid gains outpace tanh gains, so the ordering is
/// checked on `[0, X_STAR]` and on increments that start at zero.
pub const CONVEXITY_LIMIT: f64 = 1.662_886_234_638_65;

fn smoothing_convexity() -> Outcome {
    let grid: Vec<f64> = (0..=120).map(|k| CONVEXITY_LIMIT * k as f64 / 120.0).collect();
    let s = sigmoid_weights(&grid, 1.0);
    let t = tanh_weights(&grid, 1.0);
    for a in 0..grid.len() {
        for b in a + 1..grid.len() {
            let dt = t[b] - t[a];
            let ds = s[b] - s[a];
            ensure(dt >= ds, || format!("tanh gain {dt} < sigmoid gain {ds} on [{}, {}]", grid[a], grid[b]))?;
        }
    }
    let wide: Vec<f64> = (0..=300).map(|k| k as f64 * 0.01).collect();
    let s = sigmoid_weights(&wide, 1.0);
    let t = tanh_weights(&wide, 1.0);
    for b in 1..wide.len() {
        ensure(t[b] - t[0] >= s[b] - s[0], || format!("gain from 0 to {} smaller for tanh", wide[b]))?;
    }
    Ok(format!("all pairs on [0, {CONVEXITY_LIMIT:.4}], increments from 0 on [0, 3]"))
}

fn penalty_direction(data: &Dataset) -> Outcome {
    let check = |label: &str, coefs: &[f64], w: &[f64], increasing: bool| -> std::result::Result<(), String> {
        let mut idx: Vec<usize> = (0..coefs.len()).collect();
        idx.sort_by(|&a, &b| coefs[a].abs().total_cmp(&coefs[b].abs()));
        for pair in idx.windows(2) {
            let (lo, hi) = (w[pair[0]], w[pair[1]]);
            let ok = if increasing { hi >= lo } else { hi <= lo };
            ensure(ok, || format!("{label}: weight order breaks between covariates {} and {}", pair[0] + 1, pair[1] + 1))?;
        }
        Ok(())
    };
    for name in ["enh-esvms", "enh-elrt", "esvms", "elrt"] {
        let cfg = SelectorConfig::preset(name).map_err(|e| e.to_string())?;
        let res = run_selector(data, &cfg).map_err(|e| e.to_string())?;
        let spec = cfg.smoothing_spec().map_err(|e| e.to_string())?;
        check(name, &res.exposure, spec.weights(&res.exposure).as_slice(), true)?;
    }
    let cfg = SelectorConfig::preset("oal").map_err(|e| e.to_string())?;
    let res = run_selector(data, &cfg).map_err(|e| e.to_string())?;
    for &g in &cfg.oal_gamma_grid {
        check("oal", &res.outcome, inverse_power_weights(&res.outcome, g, ZeroPolicy::Exclude).as_slice(), false)?;
    }
    Ok("three-stage and preliminary weights rise with |beta|; OAL weights fall with |theta|".into())
}

pub const TREND_NS: [usize; 3] = [200, 500, 1000];
pub const THREE_STAGE: [&str; 4] = ["enh-esvms", "enh-esvmt", "enh-elrs", "enh-elrt"];

/// Scenario 1, rho = 0, seeds 1-30: selector results per (model, N).
pub fn scenario_one_runs(models: &[&str], ns: &[usize], rho: f64) -> std::result::Result<BTreeMap<(String, usize), Vec<SelectionResult>>, String> {
    let spec = ScenarioSpec::scenario(1, 20).map_err(|e| e.to_string())?;
    let mut jobs = Vec::new();
    for m in models {
        for &n in ns {
            for seed in 1..=30u64 {
                jobs.push((m.to_string(), n, seed));
            }
        }
    }
    let results: Vec<_> = jobs
        .par_iter()
        .map(|(m, n, seed)| -> std::result::Result<_, String> {
            let data = generate(&spec, *n, rho, *seed).map_err(|e| e.to_string())?;
            let cfg = SelectorConfig {
                cv_seed: *seed,
                ..SelectorConfig::preset(m).map_err(|e| e.to_string())?
            };
            let res = run_selector(&data, &cfg).map_err(|e| format!("{m} N={n} seed {seed}: {e}"))?;
            Ok(((m.clone(), *n), res))
        })
        .collect();
    let mut out: BTreeMap<(String, usize), Vec<SelectionResult>> = BTreeMap::new();
    for r in results {
        let (k, v) = r?;
        out.entry(k).or_default().push(v);
    }
    Ok(out)
}

pub fn exact_recovery_rate(results: &[SelectionResult]) -> f64 {
    results.iter().filter(|r| r.selected == [0, 1, 2, 3]).count() as f64 / results.len() as f64
}

/// Fraction of runs selecting any of the given 0-based covariates, averaged over them.
pub fn mean_frequency(results: &[SelectionResult], covariates: &[usize]) -> f64 {
    let hits: usize = covariates
        .iter()
        .map(|j| results.iter().filter(|r| r.selected.contains(j)).count())
        .sum();
    hits as f64 / (results.len() * covariates.len()) as f64
}

fn oracle_trend(runs: &BTreeMap<(String, usize), Vec<SelectionResult>>) -> Outcome {
    let mut parts = Vec::new();
    for m in THREE_STAGE {
        let rates: Vec<f64> = TREND_NS.iter().map(|&n| exact_recovery_rate(&runs[&(m.to_string(), n)])).collect();
        let slack = 1.0 / 30.0 + 1e-12;
        ensure(rates.windows(2).all(|r| r[1] >= r[0] - slack), || format!("{m}: exact-recovery rates {rates:?}"))?;
        parts.push(format!("{m} {:.2}/{:.2}/{:.2}", rates[0], rates[1], rates[2]));
    }
    Ok(parts.join(", "))
}

fn asymmetry(runs: &BTreeMap<(String, usize), Vec<SelectionResult>>) -> Outcome {
    let elrt = &runs[&("enh-elrt".to_string(), 1000)];
    let esvms = &runs[&("enh-esvms".to_string(), 1000)];
    let (t_elrt, t_svm) = (mean_frequency(elrt, &[4, 5]), mean_frequency(esvms, &[4, 5]));
    let (c_elrt, c_svm) = (mean_frequency(elrt, &[0, 1]), mean_frequency(esvms, &[0, 1]));
    ensure(t_elrt <= t_svm + 0.1, || format!("enh-elrt picks {{5,6}} at {t_elrt:.3} vs enh-esvms {t_svm:.3}"))?;
    ensure(c_svm >= c_elrt - 0.1, || format!("enh-esvms picks {{1,2}} at {c_svm:.3} vs enh-elrt {c_elrt:.3}"))?;
    Ok(format!("{{5,6}}: elrt {t_elrt:.3} vs esvms {t_svm:.3}; {{1,2}}: esvms {c_svm:.3} vs elrt {c_elrt:.3}"))
}

fn final_stage_exclusion(runs: &BTreeMap<(String, usize), Vec<SelectionResult>>) -> Outcome {
    let mut count = 0;
    for ((m, n), results) in runs {
        for r in results {
            for &j in &r.selected {
                ensure(r.outcome[j] != 0.0, || format!("{m} N={n}: covariate {} selected with zero stage-2 coefficient", j + 1))?;
            }
            count += 1;
        }
    }
    Ok(format!("{count} runs"))
}

fn class_labels() -> Outcome {
    for id in 1..=4 {
        let spec = ScenarioSpec::scenario(id, 20).map_err(|e| e.to_string())?;
        let classes = spec.classes();
        for j in 0..20 {
            let (th, be) = (spec.theta[j] != 0.0, spec.beta[j] != 0.0);
            let expected = match (th, be) {
                (true, true) => VariableClass::Confounder,
                (true, false) => VariableClass::PureOutcome,
                (false, true) => VariableClass::PureTreatment,
                (false, false) => VariableClass::Noise,
            };
            ensure(classes.class(j) == expected, || format!("scenario {id} covariate {}", j + 1))?;
        }
        ensure(classes.indices(VariableClass::Confounder) == [0, 1], || format!("scenario {id} confounders"))?;
        ensure(classes.indices(VariableClass::PureOutcome) == [2, 3], || format!("scenario {id} outcome predictors"))?;
        ensure(classes.indices(VariableClass::PureTreatment) == [4, 5], || format!("scenario {id} treatment predictors"))?;
    }
    Ok("scenarios 1-4".into())
}

fn seed_determinism() -> Outcome {
    for id in 1..=4 {
        let spec = ScenarioSpec::scenario(id, 20).map_err(|e| e.to_string())?;
        let a = generate(&spec, 300, 0.25, 17).map_err(|e| e.to_string())?;
        let b = generate(&spec, 300, 0.25, 17).map_err(|e| e.to_string())?;
        let bits = |d: &Dataset| -> Vec<u64> { d.x.iter().chain(&d.y).map(|v| v.to_bits()).collect() };
        ensure(bits(&a) == bits(&b) && a.t == b.t, || format!("scenario {id} differs"))?;
        let c = generate(&spec, 300, 0.25, 18).map_err(|e| e.to_string())?;
        ensure(bits(&a) != bits(&c), || "different seeds gave identical data".into())?;
    }
    Ok("identical bytes under one seed".into())
}

fn prevalence() -> Outcome {
    let spec = ScenarioSpec::scenario(1, 20).map_err(|e| e.to_string())?;
    let (mut lo, mut hi) = (1.0f64, 0.0f64);
    for n in [500, 1000] {
        for seed in 1..=30 {
            let f = generate(&spec, n, 0.0, seed).map_err(|e| e.to_string())?.treated_fraction();
            lo = lo.min(f);
            hi = hi.max(f);
        }
    }
    ensure(lo >= 0.35 && hi <= 0.65, || format!("treated fraction ranged over [{lo:.3}, {hi:.3}]"))?;
    Ok(format!("treated fraction in [{lo:.3}, {hi:.3}]"))
}

fn matching_datasets(intercept: f64) -> std::result::Result<Vec<Dataset>, String> {
    let spec = ScenarioSpec::scenario(1, 20).map_err(|e| e.to_string())?.with_exposure_intercept(intercept);
    (1..=30).map(|s| generate(&spec, 500, 0.0, s).map_err(|e| e.to_string())).collect()
}

const TARGET: [usize; 4] = [0, 1, 2, 3];

fn without_replacement(sets: &[Dataset]) -> Outcome {
    for (k, d) in sets.iter().enumerate() {
        let m = nearest_neighbor_match(d, &TARGET).map_err(|e| e.to_string())?;
        let mut c: Vec<usize> = m.pairs.iter().map(|p| p.1).collect();
        let mut t: Vec<usize> = m.pairs.iter().map(|p| p.0).collect();
        c.sort_unstable();
        t.sort_unstable();
        let (nc, nt) = (c.len(), t.len());
        c.dedup();
        t.dedup();
        ensure(c.len() == nc && t.len() == nt, || format!("dataset {}: repeated index", k + 1))?;
        ensure(!m.is_empty(), || format!("dataset {}: no pairs", k + 1))?;
    }
    Ok(format!("{} datasets", sets.len()))
}

fn greedy_replay(sets: &[Dataset]) -> Outcome {
    for (k, d) in sets.iter().take(10).enumerate() {
        let m = nearest_neighbor_match(d, &TARGET).map_err(|e| e.to_string())?;
        let n = d.n();
        let z: Vec<Vec<f64>> = TARGET
            .iter()
            .map(|&j| {
                let col: Vec<f64> = (0..n).map(|i| d.x[(i, j)]).collect();
                let mean = col.iter().sum::<f64>() / n as f64;
                let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
                col.iter().map(|v| (v - mean) / sd).collect()
            })
            .collect();
        let dist = |a: usize, b: usize| z.iter().map(|c| (c[a] - c[b]).powi(2)).sum::<f64>().sqrt();
        let mut available: Vec<usize> = d.controls();
        for (&(t, c), &dd) in m.pairs.iter().zip(&m.distances) {
            let best = available.iter().map(|&o| dist(t, o)).fold(f64::INFINITY, f64::min);
            ensure(dd <= best + 1e-12, || format!("dataset {}: treated {t} took {dd} with {best} available", k + 1))?;
            ensure((dist(t, c) - dd).abs() < 1e-9, || format!("dataset {}: reported distance is off", k + 1))?;
            available.retain(|&o| o != c);
        }
    }
    Ok("10 datasets replayed".into())
}

fn balance_counts(sets: &[Dataset]) -> std::result::Result<(usize, usize), String> {
    let (mut each, mut mean) = (0, 0);
    for d in sets {
        let m = nearest_neighbor_match(d, &TARGET).map_err(|e| e.to_string())?;
        let (mt, mc): (Vec<usize>, Vec<usize>) = m.pairs.iter().copied().unzip();
        let pre: Vec<f64> = TARGET.iter().map(|&j| standardized_difference(d, j, &d.treated(), &d.controls())).collect();
        let post: Vec<f64> = TARGET.iter().map(|&j| standardized_difference(d, j, &mt, &mc)).collect();
        if pre.iter().zip(&post).all(|(a, b)| *b <= a + 1e-9) {
            each += 1;
        }
        if post.iter().sum::<f64>() <= pre.iter().sum::<f64>() + 1e-9 {
            mean += 1;
        }
    }
    Ok((each, mean))
}

fn balance_each_covariate(sets: &[Dataset]) -> Outcome {
    let (each, _) = balance_counts(sets)?;
    let frac = each as f64 / sets.len() as f64;
    ensure(frac >= 0.9, || {
        format!(
            "every selected covariate improved in {each}/{} datasets ({frac:.2} < 0.90); greedy matching can \
             worsen covariates that were already balanced",
            sets.len()
        )
    })?;
    Ok(format!("{each}/{} datasets", sets.len()))
}

fn balance_average(sets: &[Dataset]) -> Outcome {
    let (_, mean) = balance_counts(sets)?;
    let frac = mean as f64 / sets.len() as f64;
    ensure(frac >= 0.9, || format!("average improved in {mean}/{} datasets", sets.len()))?;
    Ok(format!("{mean}/{} datasets", sets.len()))
}

fn translation_equivariance(sets: &[Dataset]) -> Outcome {
    let mut worst: f64 = 0.0;
    for d in sets.iter().take(10) {
        let a = att_for_selection(d, &TARGET, &MatchOptions::default()).map_err(|e| e.to_string())?;
        let mut shifted = d.clone();
        shifted.y.iter_mut().for_each(|v| *v += 12.5);
        let m = nearest_neighbor_match(&shifted, &TARGET).map_err(|e| e.to_string())?;
        let b = estimate_att(&shifted, &m, &TARGET).map_err(|e| e.to_string())?;
        worst = worst.max((a.att - b.att).abs());
    }
    ensure(worst <= 1e-10, || format!("ATT moved by {worst:e}"))?;
    Ok(format!("largest shift {worst:.1e}"))
}

fn grid_invariants() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let grid = ExperimentGrid {
        scenarios: vec![1],
        ns: vec![300],
        rhos: vec![0.0, 0.5],
        seeds: (1..=5).collect(),
        models: vec![SelectorConfig::preset("enh-elrs").map_err(|e| e.to_string())?],
        ..ExperimentGrid::default()
    };
    let s = run_grid(&grid, dir.path(), 1).map_err(|e| e.to_string())?;
    let records = read_records(dir.path()).map_err(|e| e.to_string())?;
    let errors = records.iter().filter(|r| r.is_error()).count();
    ensure(s.records == 10 && records.len() == 10, || format!("{} records for 10 cells", records.len()))?;
    ensure(records.len() - errors == 10 - s.errors, || "error accounting is off".into())?;
    ensure(records.iter().all(|r| r.wall_clock_seconds > 0.0), || "non-positive wall clock".into())?;
    let text = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).map_err(|e| e.to_string())?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let gap = (manifest.total_seconds - manifest.cell_seconds).abs() / manifest.total_seconds;
    ensure(gap <= 0.1, || format!("cell times sum to {} of {} s total", manifest.cell_seconds, manifest.total_seconds))?;
    let again = run_grid(&grid, dir.path(), 1).map_err(|e| e.to_string())?;
    ensure(again.computed == 0 && again.skipped == 10, || format!("rerun computed {} cells", again.computed))?;
    Ok(format!("10 cells, {errors} errors, cell times cover {:.1}% of the total, rerun computed 0", 100.0 * (1.0 - gap)))
}

fn bootstrap_reproducible() -> Outcome {
    let spec = ScenarioSpec::scenario(1, 20).map_err(|e| e.to_string())?;
    let data = generate(&spec, 600, 0.0, 5).map_err(|e| e.to_string())?;
    let loaded = LoadedData {
        data,
        rows_read: 600,
        rows_dropped: 0,
        categorical: Vec::new(),
    };
    let job = RealDataJob {
        iterations: 4,
        control_sample: 150,
        seed: 21,
        models: vec![SelectorConfig::preset("enh-elrs").map_err(|e| e.to_string())?],
        expert_features: Some(vec!["1".into(), "2".into()]),
        ..RealDataJob::new("in-memory", "treatment", "outcome")
    };
    let a = run_study(&job, &loaded).map_err(|e| e.to_string())?;
    let b = run_study(&job, &loaded).map_err(|e| e.to_string())?;
    ensure(a.report == b.report && a.atts == b.atts, || "reports differ".into())?;
    let other = run_study(&RealDataJob { seed: 22, ..job }, &loaded).map_err(|e| e.to_string())?;
    ensure(other.atts != a.atts, || "a different seed gave identical ATTs".into())?;
    Ok("identical job, identical report".into())
}

struct Runner<F: FnMut(&CheckResult)> {
    checks: Vec<CheckResult>,
    on_result: F,
}

impl<F: FnMut(&CheckResult)> Runner<F> {
    fn run(&mut self, module: &'static str, name: &'static str, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let out = f();
        let res = CheckResult {
            module,
            name,
            passed: out.is_ok(),
            detail: out.unwrap_or_else(|e| e),
            seconds: start.elapsed().as_secs_f64(),
        };
        (self.on_result)(&res);
        self.checks.push(res);
    }
}

/// Run every invariant, reporting each result as it completes.
pub fn run_selftest(on_result: impl FnMut(&CheckResult)) -> SelftestReport {
    let start = Instant::now();
    let mut r = Runner {
        checks: Vec::new(),
        on_result,
    };
    r.run("numkit", "elastic-net KKT conditions", enet_kkt);
    r.run("numkit", "nonzero count monotone along lambda1 path", enet_path_monotone);
    r.run("numkit", "elastic net at zero penalty equals OLS", ols_reduction);
    r.run("numkit", "logistic gradient matches finite differences", logistic_gradient_check);
    r.run("numkit", "SVM objective non-increasing", svm_trace);
    r.run("numkit", "seeded operations reproducible", reproducibility);

    r.run("smoothing", "monotone weights", smoothing_monotone);
    r.run("smoothing", "weight ranges and squared-sum bound", smoothing_range);
    r.run("smoothing", "tanh gains exceed sigmoid gains", smoothing_convexity);

    let spec1 = ScenarioSpec::scenario(1, 20).expect("scenario 1");
    match generate(&spec1, 500, 0.0, 1) {
        Ok(d) => r.run("frameworks", "penalty direction", || penalty_direction(&d)),
        Err(e) => r.run("frameworks", "penalty direction", || Err(e.to_string())),
    }
    match scenario_one_runs(&THREE_STAGE, &TREND_NS, 0.0) {
        Ok(runs) => {
            r.run("frameworks", "exact recovery non-decreasing in N", || oracle_trend(&runs));
            r.run("frameworks", "tanh/logistic drops treatment predictors no less", || asymmetry(&runs));
            r.run("frameworks", "stage-2 zeros never selected", || final_stage_exclusion(&runs));
        }
        Err(e) => r.run("frameworks", "scenario 1 runs", || Err(e)),
    }

    r.run("synthgen", "variable classes match coefficient vectors", class_labels);
    r.run("synthgen", "seed determinism", seed_determinism);
    r.run("synthgen", "treated prevalence", prevalence);

    match matching_datasets(0.0) {
        Ok(sets) => {
            r.run("causal", "matching without replacement", || without_replacement(&sets));
            r.run("causal", "greedy step optimality", || greedy_replay(&sets));
            r.run("causal", "balance improves for every selected covariate", || balance_each_covariate(&sets));
            r.run("causal", "ATT invariant to outcome shifts", || translation_equivariance(&sets));
        }
        Err(e) => r.run("causal", "scenario 1 datasets", || Err(e)),
    }
    match matching_datasets(-1.0) {
        Ok(sets) => r.run("causal", "average balance improves with a control majority", || balance_average(&sets)),
        Err(e) => r.run("causal", "control-majority datasets", || Err(e)),
    }

    r.run("bench", "grid completeness, resume and timing totals", grid_invariants);
    r.run("bench", "bootstrap reproducibility", bootstrap_reproducible);

    SelftestReport {
        checks: r.checks,
        seconds: start.elapsed().as_secs_f64(),
    }
}
