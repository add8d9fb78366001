//! The simulation grid: scenario × N × ρ × seed × model, one record per cell.
//!
//! Records stream to `records.csv` in the output directory as cells finish.
//! Cells already in the store are skipped, so an interrupted run can be
//! resumed. When the grid completes the file is rewritten sorted by cell key
//! and `manifest.json` records hashes of the grid, the selector configuration
//! and the records.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tristage::causal::{att_for_selection, MatchOptions};
use tristage::frameworks::{run_selector, SelectorConfig};
use tristage::synthgen::{generate, true_att, ScenarioSpec, DEFAULT_P};

use crate::error::{BenchError, Result};

pub const RECORDS_FILE: &str = "records.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentGrid {
    pub scenarios: Vec<u8>,
    pub ns: Vec<usize>,
    pub rhos: Vec<f64>,
    pub seeds: Vec<u64>,
    pub models: Vec<SelectorConfig>,
    pub true_effect: f64,
    pub p: usize,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        ExperimentGrid {
            scenarios: vec![1, 2, 3, 4],
            ns: vec![200, 500, 1000],
            rhos: vec![0.0, 0.25, 0.5, 0.75],
            seeds: (1..=30).collect(),
            models: ["enh-esvms", "enh-esvmt", "enh-elrs", "enh-elrt"]
                .iter()
                .map(|m| SelectorConfig::preset(m).expect("built-in preset"))
                .collect(),
            true_effect: 0.0,
            p: DEFAULT_P,
        }
    }
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<()> {
        let usage = |m: &str| Err(BenchError::Usage(m.into()));
        if self.scenarios.is_empty() || self.ns.is_empty() || self.rhos.is_empty() || self.seeds.is_empty() {
            return usage("grid needs at least one scenario, N, rho and seed");
        }
        if self.models.is_empty() {
            return usage("grid needs at least one model");
        }
        if let Some(s) = self.scenarios.iter().find(|s| !(1..=4).contains(*s)) {
            return Err(BenchError::Usage(format!("scenario must be 1-4, got {s}")));
        }
        if let Some(n) = self.ns.iter().find(|&&n| n < 20) {
            return Err(BenchError::Usage(format!("N must be at least 20, got {n}")));
        }
        if let Some(r) = self.rhos.iter().find(|r| !(**r >= 0.0 && **r < 1.0)) {
            return Err(BenchError::Usage(format!("rho must lie in [0, 1), got {r}")));
        }
        if self.p < 6 {
            return usage("p must be at least 6");
        }
        if !self.true_effect.is_finite() {
            return usage("true effect must be finite");
        }
        let mut names = BTreeSet::new();
        for m in &self.models {
            m.validate()?;
            if !names.insert(&m.name) {
                return Err(BenchError::Usage(format!("model '{}' listed twice", m.name)));
            }
        }
        Ok(())
    }

    /// Every cell, in key order.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for m in &self.models {
            for &scenario in &self.scenarios {
                for &n in &self.ns {
                    for &rho in &self.rhos {
                        for &seed in &self.seeds {
                            out.push(CellKey {
                                model: m.name.clone(),
                                scenario,
                                n,
                                rho,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        out.sort_by(CellKey::cmp);
        out.dedup();
        out
    }

    fn model(&self, name: &str) -> &SelectorConfig {
        self.models.iter().find(|m| m.name == name).expect("cell model comes from the grid")
    }

    /// Hash of everything that changes a cell's result other than its key.
    pub fn config_hash(&self) -> String {
        let body = serde_json::json!({ "models": self.models, "true_effect": self.true_effect, "p": self.p });
        sha256_hex(body.to_string().as_bytes())
    }

    pub fn grid_hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("grid serializes").as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellKey {
    pub model: String,
    pub scenario: u8,
    pub n: usize,
    pub rho: f64,
    pub seed: u64,
}

impl CellKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.model
            .cmp(&other.model)
            .then(self.scenario.cmp(&other.scenario))
            .then(self.n.cmp(&other.n))
            .then(self.rho.total_cmp(&other.rho))
            .then(self.seed.cmp(&other.seed))
    }

    fn id(&self) -> (String, u8, usize, u64, u64) {
        (self.model.clone(), self.scenario, self.n, self.rho.to_bits(), self.seed)
    }
}

/// One row of `records.csv`. `selected` holds 1-based covariate indices
/// separated by `;`. `att` and `bias` are empty and `error` is set when the
/// cell failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub model: String,
    pub scenario: u8,
    pub n: usize,
    pub rho: f64,
    pub seed: u64,
    pub p: usize,
    pub selected: String,
    pub att: Option<f64>,
    pub bias: Option<f64>,
    pub wall_clock_seconds: f64,
    pub error: String,
}

impl ExperimentRecord {
    pub fn key(&self) -> CellKey {
        CellKey {
            model: self.model.clone(),
            scenario: self.scenario,
            n: self.n,
            rho: self.rho,
            seed: self.seed,
        }
    }

    pub fn is_error(&self) -> bool {
        !self.error.is_empty()
    }

    /// Selected covariates, 1-based.
    pub fn selected_covariates(&self) -> Vec<usize> {
        self.selected.split(';').filter_map(|s| s.trim().parse().ok()).collect()
    }
}

pub fn format_selection(selected0: &[usize]) -> String {
    selected0.iter().map(|j| (j + 1).to_string()).collect::<Vec<_>>().join(";")
}

/// Generate, select, match and estimate for one cell. Failures become an
/// error-tagged record.
pub fn run_cell(key: &CellKey, cfg: &SelectorConfig, p: usize, true_effect: f64) -> ExperimentRecord {
    let start = Instant::now();
    let outcome = (|| -> tristage::Result<(Vec<usize>, f64, f64)> {
        let spec = ScenarioSpec::scenario(key.scenario, p)?.with_true_effect(true_effect);
        let data = generate(&spec, key.n, key.rho, key.seed)?;
        let cfg = SelectorConfig {
            cv_seed: key.seed,
            ..cfg.clone()
        };
        let sel = run_selector(&data, &cfg)?;
        let est = att_for_selection(&data, &sel.selected, &MatchOptions::default())?;
        Ok((sel.selected, est.att, est.att - true_att(&spec)))
    })();
    let seconds = start.elapsed().as_secs_f64();
    let mut rec = ExperimentRecord {
        model: key.model.clone(),
        scenario: key.scenario,
        n: key.n,
        rho: key.rho,
        seed: key.seed,
        p,
        selected: String::new(),
        att: None,
        bias: None,
        wall_clock_seconds: seconds,
        error: String::new(),
    };
    match outcome {
        Ok((sel, att, bias)) => {
            rec.selected = format_selection(&sel);
            rec.att = Some(att);
            rec.bias = Some(bias);
        }
        Err(e) => rec.error = format!("{}: {e}", error_tag(&e)),
    }
    rec
}

/// Short machine-readable name of a failure.
pub fn error_tag(e: &tristage::Error) -> &'static str {
    use tristage::Error::*;
    match e {
        DegenerateDesign => "degenerate-design",
        SingularSystem => "singular-system",
        DegenerateLabels => "degenerate-labels",
        DegenerateScenario(_) => "degenerate-scenario",
        ZeroVarianceFold { .. } => "zero-variance-fold",
        DimensionMismatch(_) => "dimension-mismatch",
        InvalidArgument(_) => "invalid-argument",
        MissingTruth(_) => "missing-truth",
        Config(_) => "config",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub grid_hash: String,
    pub config_hash: String,
    pub records_sha256: String,
    pub records: usize,
    pub errors: usize,
    pub cells_computed: usize,
    pub cells_skipped: usize,
    /// Wall clock of this invocation.
    pub total_seconds: f64,
    /// Sum of the per-cell times computed in this invocation.
    pub cell_seconds: f64,
    pub workers: usize,
    pub grid: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSummary {
    pub computed: usize,
    pub skipped: usize,
    pub errors: usize,
    pub records: usize,
    pub total_seconds: f64,
    pub cell_seconds: f64,
}

/// Records in a store, skipping rows that cannot be parsed (for example a
/// line cut short by an interrupted run).
pub fn read_records(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let file = if path.is_dir() { path.join(RECORDS_FILE) } else { path.to_path_buf() };
    let mut reader = csv::Reader::from_path(&file).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => BenchError::io(&file, io),
        other => BenchError::Data(format!("{}: {other:?}", file.display())),
    })?;
    Ok(reader.deserialize().filter_map(|r| r.ok()).collect())
}

fn write_records(path: &Path, records: &[ExperimentRecord]) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let mut w = csv::Writer::from_path(&tmp)?;
        if records.is_empty() {
            w.write_record(RECORD_HEADER)?;
        }
        for r in records {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| BenchError::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| BenchError::io(path, e))
}

pub const RECORD_HEADER: [&str; 11] = [
    "model",
    "scenario",
    "n",
    "rho",
    "seed",
    "p",
    "selected",
    "att",
    "bias",
    "wall_clock_seconds",
    "error",
];

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn sort_records(records: &mut [ExperimentRecord]) {
    records.sort_by(|a, b| a.key().cmp(&b.key()));
}

/// Run every cell of `grid` not already present in `out_dir`, on `workers` threads.
pub fn run_grid(grid: &ExperimentGrid, out_dir: &Path, workers: usize) -> Result<GridSummary> {
    grid.validate()?;
    if workers == 0 {
        return Err(BenchError::Usage("workers must be at least 1".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| BenchError::io(out_dir, e))?;
    let records_path = out_dir.join(RECORDS_FILE);
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let config_hash = grid.config_hash();
    if manifest_path.exists() {
        let text = std::fs::read_to_string(&manifest_path).map_err(|e| BenchError::io(&manifest_path, e))?;
        let old: Manifest = serde_json::from_str(&text)?;
        if old.config_hash != config_hash {
            return Err(BenchError::Data(format!(
                "{} was produced with a different model configuration, true effect or p; use a fresh --out",
                out_dir.display()
            )));
        }
    }

    let start = Instant::now();
    let mut existing = if records_path.exists() { read_records(&records_path)? } else { Vec::new() };
    if let Some(r) = existing.iter().find(|r| r.p != grid.p) {
        return Err(BenchError::Data(format!("store holds p = {} records, grid has p = {}", r.p, grid.p)));
    }
    sort_records(&mut existing);
    existing.dedup_by(|a, b| a.key().id() == b.key().id());
    let present: BTreeSet<_> = existing.iter().map(|r| r.key().id()).collect();
    let todo: Vec<CellKey> = grid.cells().into_iter().filter(|c| !present.contains(&c.id())).collect();
    let skipped = grid.cells().len() - todo.len();
    write_records(&records_path, &existing)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| BenchError::Usage(format!("worker pool: {e}")))?;
    let (tx, rx) = mpsc::channel::<ExperimentRecord>();
    let writer_path = records_path.clone();
    let writer = std::thread::spawn(move || -> Result<Vec<ExperimentRecord>> {
        let file = std::fs::OpenOptions::new()
            .append(true)
            .open(&writer_path)
            .map_err(|e| BenchError::io(&writer_path, e))?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        let mut fresh = Vec::new();
        for rec in rx {
            w.serialize(&rec)?;
            w.flush().map_err(|e| BenchError::io(&writer_path, e))?;
            fresh.push(rec);
        }
        Ok(fresh)
    });
    pool.install(|| {
        todo.par_iter().for_each_with(tx, |tx, key| {
            let rec = run_cell(key, grid.model(&key.model), grid.p, grid.true_effect);
            let _ = tx.send(rec);
        });
    });
    let fresh = writer.join().map_err(|_| BenchError::Data("record writer panicked".into()))??;

    let cell_seconds: f64 = fresh.iter().map(|r| r.wall_clock_seconds).sum();
    let computed = fresh.len();
    let mut all = existing;
    all.extend(fresh);
    sort_records(&mut all);
    write_records(&records_path, &all)?;
    let bytes = std::fs::read(&records_path).map_err(|e| BenchError::io(&records_path, e))?;
    let errors = all.iter().filter(|r| r.is_error()).count();
    let total_seconds = start.elapsed().as_secs_f64();
    let manifest = Manifest {
        grid_hash: grid.grid_hash(),
        config_hash,
        records_sha256: sha256_hex(&bytes),
        records: all.len(),
        errors,
        cells_computed: computed,
        cells_skipped: skipped,
        total_seconds,
        cell_seconds,
        workers,
        grid: serde_json::to_value(grid)?,
    };
    let mut f = File::create(&manifest_path).map_err(|e| BenchError::io(&manifest_path, e))?;
    f.write_all(serde_json::to_string_pretty(&manifest)?.as_bytes())
        .map_err(|e| BenchError::io(&manifest_path, e))?;
    Ok(GridSummary {
        computed,
        skipped,
        errors,
        records: all.len(),
        total_seconds,
        cell_seconds,
    })
}

/// Default store location for a grid run.
pub fn default_out_dir() -> PathBuf {
    PathBuf::from("results")
}
