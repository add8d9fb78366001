//! Command-line interface. Every flag can also come from `--config <file>`;
//! flags given on the command line win.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use tristage::synthgen::{generate, ScenarioSpec, DEFAULT_P};

use crate::aggregate::{emit, PlotKind};
use crate::bootstrap::{run_bootstrap_study, write_dataset_csv, write_outputs, RealDataJob, DEFAULT_MODELS};
use crate::config::{parse_seeds, FileConfig};
use crate::error::{BenchError, Result};
use crate::grid::{default_out_dir, read_records, run_grid, ExperimentGrid};
use crate::selftest::run_selftest;

#[derive(Debug, Parser)]
#[command(name = "tristage", version, about = "Covariate selection benchmarks for causal inference")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the simulation grid and stream records to <out>/records.csv.
    Simulate(SimulateArgs),
    /// Turn a record store into plot-ready CSV.
    Aggregate(AggregateArgs),
    /// Bootstrap selection study on a CSV file.
    Bootstrap(BootstrapArgs),
    /// Run the invariant suite.
    Selftest,
    /// Write one simulated dataset as CSV (columns x1..xp, treatment, outcome).
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scenarios, e.g. 1,2.
    #[arg(long, value_delimiter = ',')]
    pub scenario: Vec<u8>,
    #[arg(long, value_delimiter = ',')]
    pub n: Vec<usize>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub rho: Vec<f64>,
    /// Seed list such as 1-30 or 1,2,5.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub models: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub true_effect: Option<f64>,
    /// Number of covariates.
    #[arg(long)]
    pub p: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Store directory or records.csv file.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// bias, selection-probability, bias-summary or timing.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub treatment: Option<String>,
    #[arg(long)]
    pub outcome: Option<String>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub control_sample: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Covariate names or 1-based positions, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub expert_features: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub models: Vec<String>,
    /// Also estimate the ATT adjusting for every covariate.
    #[arg(long)]
    pub sample_att: bool,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 1)]
    pub scenario: u8,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub true_effect: f64,
    #[arg(long, default_value_t = DEFAULT_P)]
    pub p: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn file_config(path: &Option<PathBuf>) -> Result<FileConfig> {
    match path {
        Some(p) => FileConfig::load(p),
        None => Ok(FileConfig::default()),
    }
}

fn pick<T>(flag: Vec<T>, file: Option<Vec<T>>, default: Vec<T>) -> Vec<T> {
    if !flag.is_empty() {
        flag
    } else {
        file.unwrap_or(default)
    }
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let file = file_config(&args.config)?;
    let defaults = ExperimentGrid::default();
    let seeds = match (&args.seeds, &file.seeds) {
        (Some(s), _) => parse_seeds(s)?,
        (None, Some(s)) => s.resolve()?,
        (None, None) => defaults.seeds.clone(),
    };
    let default_names: Vec<String> = defaults.models.iter().map(|m| m.name.clone()).collect();
    let names = pick(args.models, file.models.clone().map(|m| m.into_vec()), default_names);
    let grid = ExperimentGrid {
        scenarios: pick(args.scenario, file.scenario.clone().map(|v| v.into_vec()), defaults.scenarios),
        ns: pick(args.n, file.n.clone().map(|v| v.into_vec()), defaults.ns),
        rhos: pick(args.rho, file.rho.clone().map(|v| v.into_vec()), defaults.rhos),
        seeds,
        models: file.selectors_for(&names)?,
        true_effect: args.true_effect.or(file.true_effect).unwrap_or(defaults.true_effect),
        p: args.p.or(file.p).unwrap_or(defaults.p),
    };
    let out = args.out.or(file.out).unwrap_or_else(default_out_dir);
    let workers = args.workers.or(file.workers).unwrap_or(1);
    let cells = grid.cells().len();
    eprintln!("simulate: {cells} cells, {workers} worker(s), store {}", out.display());
    let s = run_grid(&grid, &out, workers)?;
    println!(
        "computed {} cells, skipped {} already present, {} error-tagged; {} records in {} ({:.1} s)",
        s.computed,
        s.skipped,
        s.errors,
        s.records,
        out.display(),
        s.total_seconds
    );
    Ok(())
}

fn aggregate(args: AggregateArgs) -> Result<()> {
    let file = file_config(&args.config)?;
    let store = args
        .store
        .or(file.store)
        .ok_or_else(|| BenchError::Usage("--store is required".into()))?;
    let kind: PlotKind = args
        .kind
        .or(file.kind)
        .ok_or_else(|| BenchError::Usage("--kind is required".into()))?
        .parse()?;
    let out = args.out.or(file.out).ok_or_else(|| BenchError::Usage("--out is required".into()))?;
    let records = read_records(&store)?;
    let rows = emit(&records, kind, &out)?;
    println!("wrote {rows} rows to {}", out.display());
    Ok(())
}

fn bootstrap(args: BootstrapArgs) -> Result<()> {
    let file = file_config(&args.config)?;
    let need = |v: Option<String>, flag: &str| v.ok_or_else(|| BenchError::Usage(format!("--{flag} is required")));
    let csv = args
        .csv
        .or(file.csv.clone())
        .ok_or_else(|| BenchError::Usage("--csv is required".into()))?;
    let treatment = need(args.treatment.or(file.treatment.clone()), "treatment")?;
    let outcome = need(args.outcome.or(file.outcome.clone()), "outcome")?;
    let base = RealDataJob::new(&csv, &treatment, &outcome);
    let names = pick(
        args.models,
        file.models.clone().map(|m| m.into_vec()),
        DEFAULT_MODELS.iter().map(|s| s.to_string()).collect(),
    );
    let expert = pick(args.expert_features, file.expert_features.clone().map(|e| e.into_vec()), Vec::new());
    let job = RealDataJob {
        iterations: args.iters.or(file.iters).unwrap_or(base.iterations),
        control_sample: args.control_sample.or(file.control_sample).unwrap_or(base.control_sample),
        threshold: args.threshold.or(file.threshold).unwrap_or(base.threshold),
        expert_features: if expert.is_empty() { None } else { Some(expert) },
        seed: args.seed.or(file.seed).unwrap_or(base.seed),
        models: file.selectors_for(&names)?,
        sample_att: args.sample_att || file.sample_att.unwrap_or(false),
        ..base
    };
    let out = args.out.or(file.out.clone()).unwrap_or_else(|| PathBuf::from("bootstrap"));
    let workers = args.workers.or(file.workers).unwrap_or(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| BenchError::Usage(format!("worker pool: {e}")))?;
    let result = pool.install(|| run_bootstrap_study(&job))?;
    write_outputs(&result, &out)?;
    let r = &result.report;
    if r.rows_dropped > 0 {
        eprintln!("dropped {} of {} rows with missing values", r.rows_dropped, r.rows_read);
    }
    for m in &r.models {
        println!(
            "{}: consensus [{}], mean ATT {}",
            m.model,
            m.consensus_names.join(", "),
            m.att.as_ref().map(|a| format!("{:.6}", a.mean_att)).unwrap_or_else(|| "n/a".into())
        );
    }
    println!("report written to {}", out.join("report.json").display());
    Ok(())
}

fn selftest() -> Result<()> {
    let report = run_selftest(|c| println!("{c}"));
    let failed = report.failures();
    println!(
        "{} checks, {} passed, {failed} failed in {:.1} s",
        report.checks.len(),
        report.checks.len() - failed,
        report.seconds
    );
    if failed > 0 {
        return Err(BenchError::SelftestFailed(failed));
    }
    Ok(())
}

fn generate_csv(args: GenerateArgs) -> Result<()> {
    let spec = ScenarioSpec::scenario(args.scenario, args.p)
        .map_err(|e| BenchError::Usage(e.to_string()))?
        .with_true_effect(args.true_effect);
    let data = generate(&spec, args.n, args.rho, args.seed)?;
    write_dataset_csv(&data, Path::new(&args.out))?;
    println!("wrote {} rows to {}", data.n(), args.out.display());
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Aggregate(a) => aggregate(a),
        Command::Bootstrap(a) => bootstrap(a),
        Command::Selftest => selftest(),
        Command::Generate(a) => generate_csv(a),
    }
}

/// Parse `args`, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
