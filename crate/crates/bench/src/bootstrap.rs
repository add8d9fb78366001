//! Bootstrap selection study on a user-supplied CSV.
//!
//! Each iteration keeps every treated row plus a sample of control rows drawn
//! without replacement, and runs each selector on it. Covariates selected in
//! at least `threshold` of the iterations form a model's consensus set. A
//! second pass over the same subsamples matches on the consensus set and
//! estimates the ATT; the per-model mean is compared with the mean ATT of an
//! expert-chosen covariate set when one is given.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tristage::causal::{att_for_selection, MatchOptions};
use tristage::frameworks::{run_selector, SelectorConfig};
use tristage::synthgen::Dataset;

use crate::error::{BenchError, Result};

pub const DEFAULT_MODELS: &[&str] = &["enh-esvms", "enh-elrt"];

#[derive(Debug, Clone, PartialEq)]
pub struct RealDataJob {
    pub csv_path: PathBuf,
    pub treatment: String,
    pub outcome: String,
    pub iterations: usize,
    pub control_sample: usize,
    pub threshold: f64,
    /// Encoded covariate names, or 1-based positions among the encoded covariates.
    pub expert_features: Option<Vec<String>>,
    pub seed: u64,
    pub models: Vec<SelectorConfig>,
    /// Also estimate the ATT with every covariate in the matching and regression.
    pub sample_att: bool,
}

impl RealDataJob {
    pub fn new(csv_path: impl Into<PathBuf>, treatment: &str, outcome: &str) -> Self {
        RealDataJob {
            csv_path: csv_path.into(),
            treatment: treatment.into(),
            outcome: outcome.into(),
            iterations: 500,
            control_sample: 5000,
            threshold: 0.7,
            expert_features: None,
            seed: 0,
            models: DEFAULT_MODELS
                .iter()
                .map(|m| SelectorConfig::preset(m).expect("built-in preset"))
                .collect(),
            sample_att: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(BenchError::Usage("iterations must be at least 1".into()));
        }
        if self.control_sample == 0 {
            return Err(BenchError::Usage("control sample size must be at least 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(BenchError::Usage(format!("threshold must lie in (0, 1], got {}", self.threshold)));
        }
        if self.models.is_empty() {
            return Err(BenchError::Usage("at least one model is required".into()));
        }
        for m in &self.models {
            m.validate()?;
        }
        Ok(())
    }
}

/// A CSV turned into a [`Dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedData {
    pub data: Dataset,
    pub rows_read: usize,
    pub rows_dropped: usize,
    /// Source columns that were one-hot encoded.
    pub categorical: Vec<String>,
}

fn is_missing(v: &str) -> bool {
    matches!(v.trim().to_ascii_lowercase().as_str(), "" | "na" | "nan" | "null" | "." | "?")
}

/// Load a CSV with a header row. Rows with a missing value in any column are
/// dropped. Columns whose values all parse as numbers are used as-is; any
/// other column is one-hot encoded with levels in sorted order and the first
/// level dropped. The treatment must be numeric 0/1; the outcome numeric.
pub fn load_csv(path: &Path, treatment: &str, outcome: &str) -> Result<LoadedData> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => BenchError::io(path, io),
            other => BenchError::Data(format!("{}: {other:?}", path.display())),
        })?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| BenchError::Data(format!("column '{name}' not found in {}", path.display())))
    };
    let (ti, yi) = (find(treatment)?, find(outcome)?);
    if ti == yi {
        return Err(BenchError::Data("treatment and outcome must be different columns".into()));
    }

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut rows_read = 0;
    for rec in reader.records() {
        let rec = rec?;
        rows_read += 1;
        if rec.iter().any(is_missing) {
            continue;
        }
        rows.push(rec.iter().map(str::to_string).collect());
    }
    let rows_dropped = rows_read - rows.len();
    if rows.is_empty() {
        return Err(BenchError::Data("no complete rows".into()));
    }

    let numeric = |c: usize| -> Option<Vec<f64>> { rows.iter().map(|r| r[c].parse::<f64>().ok()).collect() };
    let t_vals = numeric(ti).ok_or_else(|| BenchError::Data(format!("treatment '{treatment}' is not numeric")))?;
    if t_vals.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(BenchError::Data(format!("treatment '{treatment}' must be binary 0/1")));
    }
    let t: Vec<bool> = t_vals.iter().map(|&v| v == 1.0).collect();
    if t.iter().all(|&v| v) || t.iter().all(|&v| !v) {
        return Err(BenchError::Data("both treatment classes must be present".into()));
    }
    let y = numeric(yi).ok_or_else(|| BenchError::Data(format!("outcome '{outcome}' is not numeric")))?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(BenchError::Data("outcome values must be finite".into()));
    }

    let mut names = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut categorical = Vec::new();
    for (c, name) in headers.iter().enumerate() {
        if c == ti || c == yi {
            continue;
        }
        match numeric(c) {
            Some(vals) if vals.iter().all(|v| v.is_finite()) => {
                names.push(name.clone());
                columns.push(vals);
            }
            _ => {
                categorical.push(name.clone());
                let mut levels: Vec<&str> = rows.iter().map(|r| r[c].as_str()).collect();
                levels.sort_unstable();
                levels.dedup();
                for level in levels.iter().skip(1) {
                    names.push(format!("{name}={level}"));
                    columns.push(rows.iter().map(|r| if r[c] == *level { 1.0 } else { 0.0 }).collect());
                }
            }
        }
    }
    if columns.is_empty() {
        return Err(BenchError::Data("no covariate columns".into()));
    }
    let x = DMatrix::from_fn(rows.len(), columns.len(), |i, j| columns[j][i]);
    let data = Dataset::new(x, t, y)?.with_names(names)?;
    Ok(LoadedData {
        data,
        rows_read,
        rows_dropped,
        categorical,
    })
}

/// Resolve expert feature tokens (names or 1-based positions) to 0-based indices.
pub fn resolve_features(names: &[String], tokens: &[String]) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for tok in tokens.iter().map(|t| t.trim()).filter(|t| !t.is_empty()) {
        let j = match names.iter().position(|n| n == tok) {
            Some(j) => j,
            None => match tok.parse::<usize>() {
                Ok(k) if (1..=names.len()).contains(&k) => k - 1,
                _ => return Err(BenchError::Data(format!("expert feature '{tok}' is not a covariate"))),
            },
        };
        out.push(j);
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttSummary {
    pub mean_att: f64,
    pub sd_att: f64,
    pub iterations: usize,
    /// Iterations whose estimate failed.
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    /// Per covariate, in covariate order.
    pub frequencies: Vec<f64>,
    /// 1-based indices of covariates at or above the threshold.
    pub consensus: Vec<usize>,
    pub consensus_names: Vec<String>,
    pub att: Option<AttSummary>,
    /// `mean ATT - expert mean ATT`.
    pub bias_vs_expert: Option<f64>,
    pub selection_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceReport {
    pub features: Vec<usize>,
    pub names: Vec<String>,
    pub att: Option<AttSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub csv: String,
    pub treatment: String,
    pub outcome: String,
    pub iterations: usize,
    pub control_sample: usize,
    pub threshold: f64,
    pub seed: u64,
    pub rows_read: usize,
    pub rows_dropped: usize,
    pub treated: usize,
    pub controls: usize,
    pub covariates: Vec<String>,
    pub categorical_columns: Vec<String>,
    pub models: Vec<ModelReport>,
    pub expert: Option<ReferenceReport>,
    pub sample: Option<ReferenceReport>,
    pub notes: Vec<String>,
}

/// Everything a study produces. Timings are kept out of the report so that
/// identical jobs give identical reports.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyOutput {
    pub report: BootstrapReport,
    /// `(label, iteration, att)`; label is a model name, `expert` or `sample`.
    pub atts: Vec<(String, usize, f64)>,
    /// `(model, iteration, seconds)`.
    pub timings: Vec<(String, usize, f64)>,
}

/// Per-iteration seeds, drawn from one stream seeded by the job seed.
pub fn iteration_seeds(seed: u64, iterations: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..iterations).map(|_| rng.next_u64()).collect()
}

/// Rows of one bootstrap subsample: every treated row and up to `k` controls.
pub fn subsample_rows(data: &Dataset, k: usize, seed: u64) -> Vec<usize> {
    let controls = data.controls();
    let mut rows = data.treated();
    if k >= controls.len() {
        rows.extend(controls);
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rows.extend(sample(&mut rng, controls.len(), k).into_iter().map(|i| controls[i]));
    }
    rows.sort_unstable();
    rows
}

/// Fraction of `selections` containing each of `p` covariates.
pub fn selection_frequencies(selections: &[Vec<usize>], p: usize) -> Vec<f64> {
    let mut counts = vec![0usize; p];
    for sel in selections {
        for &j in sel {
            counts[j] += 1;
        }
    }
    counts
        .iter()
        .map(|&c| if selections.is_empty() { 0.0 } else { c as f64 / selections.len() as f64 })
        .collect()
}

/// Covariates whose frequency reaches `threshold`.
pub fn consensus_set(frequencies: &[f64], threshold: f64) -> Vec<usize> {
    (0..frequencies.len()).filter(|&j| frequencies[j] >= threshold).collect()
}

fn summarize(values: &[f64], failures: usize) -> Option<AttSummary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some(AttSummary {
        mean_att: mean,
        sd_att: sd,
        iterations: values.len(),
        failures,
    })
}

fn att_pass(data: &Dataset, seeds: &[u64], k: usize, selected: &[usize]) -> Vec<Option<f64>> {
    seeds
        .par_iter()
        .map(|&s| {
            let sub = data.subset(&subsample_rows(data, k, s));
            att_for_selection(&sub, selected, &MatchOptions::default()).ok().map(|e| e.att)
        })
        .collect()
}

fn collect_att(label: &str, values: &[Option<f64>], atts: &mut Vec<(String, usize, f64)>) -> Option<AttSummary> {
    let ok: Vec<f64> = values.iter().flatten().copied().collect();
    for (i, v) in values.iter().enumerate() {
        if let Some(v) = v {
            atts.push((label.to_string(), i + 1, *v));
        }
    }
    summarize(&ok, values.len() - ok.len())
}

/// Run the study on already loaded data.
pub fn run_study(job: &RealDataJob, loaded: &LoadedData) -> Result<StudyOutput> {
    job.validate()?;
    let data = &loaded.data;
    let p = data.p();
    let expert = job
        .expert_features
        .as_ref()
        .map(|f| resolve_features(&data.names, f))
        .transpose()?;
    let seeds = iteration_seeds(job.seed, job.iterations);
    let mut notes = Vec::new();
    let n_controls = data.controls().len();
    if job.control_sample >= n_controls {
        notes.push(format!(
            "control sample {} >= {n_controls} controls; every iteration uses all controls",
            job.control_sample
        ));
    }

    let mut atts = Vec::new();
    let mut timings = Vec::new();
    let mut expert_report = None;
    let mut expert_mean = None;
    if let Some(feats) = &expert {
        let vals = att_pass(data, &seeds, job.control_sample, feats);
        let att = collect_att("expert", &vals, &mut atts);
        expert_mean = att.as_ref().map(|a| a.mean_att);
        expert_report = Some(ReferenceReport {
            features: feats.iter().map(|j| j + 1).collect(),
            names: feats.iter().map(|&j| data.names[j].clone()).collect(),
            att,
        });
    }

    let mut models = Vec::new();
    for cfg in &job.models {
        let runs: Vec<(std::result::Result<Vec<usize>, String>, f64)> = seeds
            .par_iter()
            .map(|&s| {
                let start = Instant::now();
                let sub = data.subset(&subsample_rows(data, job.control_sample, s));
                let cfg = SelectorConfig {
                    cv_seed: s,
                    ..cfg.clone()
                };
                let sel = run_selector(&sub, &cfg).map(|r| r.selected).map_err(|e| e.to_string());
                (sel, start.elapsed().as_secs_f64())
            })
            .collect();
        let mut selections = Vec::new();
        let mut failures = 0;
        let mut first_error = None;
        for (i, (sel, secs)) in runs.into_iter().enumerate() {
            timings.push((cfg.name.clone(), i + 1, secs));
            match sel {
                Ok(sel) => selections.push(sel),
                Err(e) => {
                    failures += 1;
                    first_error.get_or_insert(e);
                }
            }
        }
        if let Some(e) = first_error {
            notes.push(format!("{}: {failures} selection failure(s), first: {e}", cfg.name));
        }
        let frequencies = selection_frequencies(&selections, p);
        let consensus = if selections.is_empty() { Vec::new() } else { consensus_set(&frequencies, job.threshold) };
        let vals = att_pass(data, &seeds, job.control_sample, &consensus);
        let att = collect_att(&cfg.name, &vals, &mut atts);
        let bias = match (&att, expert_mean) {
            (Some(a), Some(e)) => Some(a.mean_att - e),
            _ => None,
        };
        models.push(ModelReport {
            model: cfg.name.clone(),
            frequencies,
            consensus_names: consensus.iter().map(|&j| data.names[j].clone()).collect(),
            consensus: consensus.iter().map(|j| j + 1).collect(),
            att,
            bias_vs_expert: bias,
            selection_failures: failures,
        });
    }

    let sample = if job.sample_att {
        let all: Vec<usize> = (0..p).collect();
        let vals = att_pass(data, &seeds, job.control_sample, &all);
        Some(ReferenceReport {
            features: (1..=p).collect(),
            names: data.names.clone(),
            att: collect_att("sample", &vals, &mut atts),
        })
    } else {
        None
    };

    let report = BootstrapReport {
        csv: job.csv_path.display().to_string(),
        treatment: job.treatment.clone(),
        outcome: job.outcome.clone(),
        iterations: job.iterations,
        control_sample: job.control_sample,
        threshold: job.threshold,
        seed: job.seed,
        rows_read: loaded.rows_read,
        rows_dropped: loaded.rows_dropped,
        treated: data.treated().len(),
        controls: n_controls,
        covariates: data.names.clone(),
        categorical_columns: loaded.categorical.clone(),
        models,
        expert: expert_report,
        sample,
        notes,
    };
    Ok(StudyOutput {
        report,
        atts,
        timings,
    })
}

/// Load the job's CSV and run the study.
pub fn run_bootstrap_study(job: &RealDataJob) -> Result<StudyOutput> {
    job.validate()?;
    let loaded = load_csv(&job.csv_path, &job.treatment, &job.outcome)?;
    run_study(job, &loaded)
}

/// Write `report.json`, `frequencies.csv`, `atts.csv`, `summary.csv` and
/// `timings.csv` into `dir`.
pub fn write_outputs(out: &StudyOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    let report_path = dir.join("report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&out.report)? + "\n")
        .map_err(|e| BenchError::io(&report_path, e))?;

    let r = &out.report;
    let mut w = csv::Writer::from_path(dir.join("frequencies.csv"))?;
    w.write_record(["model", "covariate", "name", "frequency"])?;
    for m in &r.models {
        for (j, f) in m.frequencies.iter().enumerate() {
            w.write_record([m.model.clone(), (j + 1).to_string(), r.covariates[j].clone(), f.to_string()])?;
        }
    }
    w.flush().map_err(|e| BenchError::io(dir, e))?;

    let mut w = csv::Writer::from_path(dir.join("atts.csv"))?;
    w.write_record(["label", "iteration", "att"])?;
    for (label, i, att) in &out.atts {
        w.write_record([label.clone(), i.to_string(), att.to_string()])?;
    }
    w.flush().map_err(|e| BenchError::io(dir, e))?;

    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record(["label", "mean_att", "sd_att", "bias_vs_expert", "features"])?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    let mut summary_row = |label: &str, att: &Option<AttSummary>, bias: Option<f64>, feats: &[usize]| {
        w.write_record([
            label.to_string(),
            opt(att.as_ref().map(|a| a.mean_att)),
            opt(att.as_ref().map(|a| a.sd_att)),
            opt(bias),
            feats.iter().map(|j| j.to_string()).collect::<Vec<_>>().join(";"),
        ])
    };
    if let Some(e) = &r.expert {
        summary_row("expert", &e.att, None, &e.features)?;
    }
    if let Some(s) = &r.sample {
        let bias = match (&s.att, r.expert.as_ref().and_then(|e| e.att.as_ref())) {
            (Some(a), Some(e)) => Some(a.mean_att - e.mean_att),
            _ => None,
        };
        summary_row("sample", &s.att, bias, &s.features)?;
    }
    for m in &r.models {
        summary_row(&m.model, &m.att, m.bias_vs_expert, &m.consensus)?;
    }
    w.flush().map_err(|e| BenchError::io(dir, e))?;

    let mut w = csv::Writer::from_path(dir.join("timings.csv"))?;
    w.write_record(["model", "iteration", "seconds"])?;
    let mut by_model: BTreeMap<&str, Vec<(usize, f64)>> = BTreeMap::new();
    for (m, i, s) in &out.timings {
        by_model.entry(m).or_default().push((*i, *s));
    }
    for (m, rows) in by_model {
        for (i, s) in rows {
            w.write_record([m.to_string(), i.to_string(), s.to_string()])?;
        }
    }
    w.flush().map_err(|e| BenchError::io(dir, e))?;
    Ok(())
}

/// Write `data` in the layout [`load_csv`] reads: covariate columns under
/// their names, then `treatment` (0/1) and `outcome`.
pub fn write_dataset_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = data.names.clone();
    header.extend(["treatment".to_string(), "outcome".to_string()]);
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut row: Vec<String> = (0..data.p()).map(|j| data.x[(i, j)].to_string()).collect();
        row.push(if data.t[i] { "1" } else { "0" }.to_string());
        row.push(data.y[i].to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| BenchError::io(path, e))
}
