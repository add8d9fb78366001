//! Summaries of a record store, written as tidy CSV.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{BenchError, Result};
use crate::grid::ExperimentRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// One row per successful record: `model,scenario,n,rho,seed,bias`.
    Bias,
    /// `model,scenario,n,rho,covariate,frequency`.
    SelectionProbability,
    /// Mean, SD and one-sample t-test of the bias per cell group.
    BiasSummary,
    /// Mean and total wall clock per model and N.
    Timing,
}

impl FromStr for PlotKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bias" => Ok(PlotKind::Bias),
            "selection-probability" | "selectionProbability" | "selection" => Ok(PlotKind::SelectionProbability),
            "bias-summary" | "biasSummary" => Ok(PlotKind::BiasSummary),
            "timing" => Ok(PlotKind::Timing),
            other => Err(BenchError::Usage(format!(
                "unknown kind '{other}' (expected bias, selection-probability, bias-summary or timing)"
            ))),
        }
    }
}

pub const BIAS_HEADER: &str = "model,scenario,n,rho,seed,bias";
pub const SELECTION_HEADER: &str = "model,scenario,n,rho,covariate,frequency";

type GroupKey = (String, u8, usize, u64);

fn group_key(r: &ExperimentRecord) -> GroupKey {
    (r.model.clone(), r.scenario, r.n, r.rho.to_bits())
}

fn ok_groups(records: &[ExperimentRecord]) -> BTreeMap<GroupKey, Vec<&ExperimentRecord>> {
    let mut groups: BTreeMap<GroupKey, Vec<&ExperimentRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| !r.is_error()) {
        groups.entry(group_key(r)).or_default().push(r);
    }
    groups
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub model: String,
    pub scenario: u8,
    pub n: usize,
    pub rho: f64,
    pub seed: u64,
    pub bias: f64,
}

pub fn bias_rows(records: &[ExperimentRecord]) -> Vec<BiasRow> {
    records
        .iter()
        .filter_map(|r| {
            Some(BiasRow {
                model: r.model.clone(),
                scenario: r.scenario,
                n: r.n,
                rho: r.rho,
                seed: r.seed,
                bias: r.bias?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub model: String,
    pub scenario: u8,
    pub n: usize,
    pub rho: f64,
    /// 1-based.
    pub covariate: usize,
    pub frequency: f64,
}

/// Fraction of successful seeds selecting each covariate, per
/// (model, scenario, N, ρ). Error-tagged records are left out of both counts.
pub fn selection_probabilities(records: &[ExperimentRecord]) -> Vec<SelectionRow> {
    let mut out = Vec::new();
    for ((model, scenario, n, rho), group) in ok_groups(records) {
        let p = group.iter().map(|r| r.p).max().unwrap_or(0);
        let mut counts = vec![0usize; p];
        for r in &group {
            for j in r.selected_covariates() {
                if (1..=p).contains(&j) {
                    counts[j - 1] += 1;
                }
            }
        }
        for (j, c) in counts.iter().enumerate() {
            out.push(SelectionRow {
                model: model.clone(),
                scenario,
                n,
                rho: f64::from_bits(rho),
                covariate: j + 1,
                frequency: *c as f64 / group.len() as f64,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSummaryRow {
    pub model: String,
    pub scenario: u8,
    pub n: usize,
    pub rho: f64,
    pub seeds: usize,
    pub mean_bias: f64,
    pub sd_bias: f64,
    pub mean_abs_bias: f64,
    pub t_statistic: Option<f64>,
    /// Two-sided p-value for a zero mean bias; empty when degenerate.
    pub p_value: Option<f64>,
    /// Zero spread across seeds, so no t-test.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub mean: f64,
    pub sd: f64,
    pub t: Option<f64>,
    pub p_value: Option<f64>,
}

/// Two-sided one-sample t-test of `mean = 0`. Needs two or more values;
/// `t` and `p_value` are `None` when the sample SD is zero.
pub fn one_sample_t_test(values: &[f64]) -> Result<TTest> {
    let n = values.len();
    if n < 2 {
        return Err(BenchError::Data(format!("t-test needs at least 2 values, got {n}")));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    if !(sd > 0.0) {
        return Ok(TTest {
            mean,
            sd,
            t: None,
            p_value: None,
        });
    }
    let t = mean / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| BenchError::Data(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest {
        mean,
        sd,
        t: Some(t),
        p_value: Some(p),
    })
}

pub fn bias_summary(records: &[ExperimentRecord]) -> Result<Vec<BiasSummaryRow>> {
    let mut out = Vec::new();
    for ((model, scenario, n, rho), group) in ok_groups(records) {
        let biases: Vec<f64> = group.iter().filter_map(|r| r.bias).collect();
        let rho = f64::from_bits(rho);
        let test = one_sample_t_test(&biases).map_err(|_| {
            BenchError::Data(format!(
                "bias summary needs at least 2 seeds per cell; {model} scenario {scenario} N={n} rho={rho} has {}",
                biases.len()
            ))
        })?;
        out.push(BiasSummaryRow {
            model,
            scenario,
            n,
            rho,
            seeds: biases.len(),
            mean_bias: test.mean,
            sd_bias: test.sd,
            mean_abs_bias: biases.iter().map(|b| b.abs()).sum::<f64>() / biases.len() as f64,
            t_statistic: test.t,
            p_value: test.p_value,
            degenerate: test.p_value.is_none(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub model: String,
    pub n: usize,
    pub runs: usize,
    pub mean_seconds: f64,
    pub total_seconds: f64,
}

pub fn timing(records: &[ExperimentRecord]) -> Vec<TimingRow> {
    let mut groups: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for r in records {
        groups.entry((r.model.clone(), r.n)).or_default().push(r.wall_clock_seconds);
    }
    groups
        .into_iter()
        .map(|((model, n), secs)| {
            let total: f64 = secs.iter().sum();
            TimingRow {
                model,
                n,
                runs: secs.len(),
                mean_seconds: total / secs.len() as f64,
                total_seconds: total,
            }
        })
        .collect()
}

fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| BenchError::io(path, e))
}

/// Write the `kind` table of `records` to `out`; returns the number of rows.
pub fn emit(records: &[ExperimentRecord], kind: PlotKind, out: &Path) -> Result<usize> {
    if records.is_empty() {
        return Err(BenchError::Data("record store is empty".into()));
    }
    match kind {
        PlotKind::Bias => {
            let rows = bias_rows(records);
            write_rows(out, &BIAS_HEADER.split(',').collect::<Vec<_>>(), &rows)?;
            Ok(rows.len())
        }
        PlotKind::SelectionProbability => {
            let rows = selection_probabilities(records);
            write_rows(out, &SELECTION_HEADER.split(',').collect::<Vec<_>>(), &rows)?;
            Ok(rows.len())
        }
        PlotKind::BiasSummary => {
            let rows = bias_summary(records)?;
            write_rows(
                out,
                &[
                    "model",
                    "scenario",
                    "n",
                    "rho",
                    "seeds",
                    "mean_bias",
                    "sd_bias",
                    "mean_abs_bias",
                    "t_statistic",
                    "p_value",
                    "degenerate",
                ],
                &rows,
            )?;
            Ok(rows.len())
        }
        PlotKind::Timing => {
            let rows = timing(records);
            write_rows(out, &["model", "n", "runs", "mean_seconds", "total_seconds"], &rows)?;
            Ok(rows.len())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(seed: u64, selected: &str, bias: f64) -> ExperimentRecord {
        ExperimentRecord {
            model: "m".into(),
            scenario: 1,
            n: 200,
            rho: 0.0,
            seed,
            p: 6,
            selected: selected.into(),
            att: Some(bias),
            bias: Some(bias),
            wall_clock_seconds: 0.5,
            error: String::new(),
        }
    }

    #[test]
    fn frequencies_count_seeds() {
        let mut records: Vec<_> = (1..=30).map(|s| rec(s, if s <= 27 { "1;2" } else { "2" }, 0.0)).collect();
        records.push(ExperimentRecord {
            error: "singular-system: x".into(),
            att: None,
            bias: None,
            ..rec(31, "", 0.0)
        });
        let rows = selection_probabilities(&records);
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[0].frequency, 27.0 / 30.0);
        assert_eq!(rows[1].frequency, 1.0);
        assert_eq!(rows[2].frequency, 0.0);
    }

    #[test]
    fn constant_biases_are_degenerate() {
        let rows = bias_summary(&(1..=30).map(|s| rec(s, "", 1.0)).collect::<Vec<_>>()).unwrap();
        assert!(rows[0].degenerate && rows[0].p_value.is_none());
        assert_eq!(rows[0].mean_bias, 1.0);
        let zeros = bias_summary(&(1..=30).map(|s| rec(s, "", 0.0)).collect::<Vec<_>>()).unwrap();
        assert!(zeros[0].degenerate);
        assert_eq!(zeros[0].mean_bias, 0.0);
        assert!(bias_summary(&[rec(1, "", 0.5)]).is_err());
    }

    #[test]
    fn t_test_matches_closed_form() {
        // mean 1 and sample SD 1 over n = 4 gives t = 2 on 3 df, where
        // F(t) = 1/2 + (x/(1+x^2) + atan x)/pi with x = t/sqrt(3).
        let h = 3f64.sqrt() / 2.0;
        let r = one_sample_t_test(&[1.0 - h, 1.0 + h, 1.0 - h, 1.0 + h]).unwrap();
        assert!((r.mean - 1.0).abs() < 1e-15 && (r.sd - 1.0).abs() < 1e-15);
        assert!((r.t.unwrap() - 2.0).abs() < 1e-12);
        let x = 2.0 / 3f64.sqrt();
        let cdf = 0.5 + (x / (1.0 + x * x) + x.atan()) / std::f64::consts::PI;
        assert!((r.p_value.unwrap() - 2.0 * (1.0 - cdf)).abs() < 1e-10);
    }

    #[test]
    fn unknown_kind_is_an_error() {
        assert!("histogram".parse::<PlotKind>().is_err());
        assert_eq!("bias".parse::<PlotKind>().unwrap(), PlotKind::Bias);
    }
}
