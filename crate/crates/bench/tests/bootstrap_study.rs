use std::fmt::Write as _;
use std::path::Path;

use tristage::frameworks::SelectorConfig;
use tristage::synthgen::{generate, ScenarioSpec};
use tristage_bench::bootstrap::*;

/// Scenario-1 data with an extra categorical `site` column and `missing`
/// rows holding an NA somewhere.
fn write_study_csv(path: &Path, missing: usize) {
    let d = generate(&ScenarioSpec::scenario(1, 8).unwrap().with_exposure_intercept(-1.0), 300, 0.0, 11).unwrap();
    let mut s = String::from("x1,x2,x3,x4,x5,x6,x7,x8,site,treat,y\n");
    for i in 0..d.n() {
        for j in 0..8 {
            if i < missing && j == i % 8 {
                s.push_str("NA,");
            } else {
                write!(s, "{},", d.x[(i, j)]).unwrap();
            }
        }
        let site = ["north", "east", "west"][i % 3];
        writeln!(s, "{site},{},{}", u8::from(d.t[i]), d.y[i]).unwrap();
    }
    std::fs::write(path, s).unwrap();
}

fn small_job(path: &Path) -> RealDataJob {
    RealDataJob {
        iterations: 4,
        control_sample: 120,
        expert_features: Some(vec!["x1".into(), "2".into()]),
        seed: 5,
        models: vec![SelectorConfig::preset("enh-elrt").unwrap()],
        sample_att: true,
        ..RealDataJob::new(path, "treat", "y")
    }
}

#[test]
fn loader_drops_missing_rows_and_encodes_categories() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    write_study_csv(&path, 7);
    let l = load_csv(&path, "treat", "y").unwrap();
    assert_eq!((l.rows_read, l.rows_dropped, l.data.n()), (300, 7, 293));
    assert_eq!(l.categorical, vec!["site"]);
    assert_eq!(&l.data.names[8..], &["site=north", "site=west"]);
    // loaded row 7 is source row 14
    let row = 7;
    let site = ["north", "east", "west"][(row + 7) % 3];
    assert_eq!(l.data.x[(row, 8)], f64::from(site == "north"));
    assert_eq!(l.data.x[(row, 9)], f64::from(site == "west"));
}

#[test]
fn loader_rejects_bad_treatment() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "a,t,y\n1,0,1\n2,2,3\n3,1,2\n").unwrap();
    assert!(load_csv(&path, "t", "y").is_err());
    std::fs::write(&path, "a,t,y\n1,1,1\n2,1,3\n").unwrap();
    assert!(load_csv(&path, "t", "y").is_err());
    assert!(load_csv(&path, "t", "nope").is_err());
}

#[test]
fn study_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    write_study_csv(&path, 0);
    let job = small_job(&path);
    let a = run_bootstrap_study(&job).unwrap();
    let b = run_bootstrap_study(&job).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.atts, b.atts);
    let r = &a.report;
    assert_eq!(r.expert.as_ref().unwrap().features, vec![1, 2]);
    assert!(r.sample.as_ref().unwrap().att.is_some());
    let m = &r.models[0];
    assert_eq!(m.frequencies.len(), 10);
    let want: Vec<usize> = (0..10).filter(|&j| m.frequencies[j] >= 0.7).map(|j| j + 1).collect();
    assert_eq!(m.consensus, want);

    let out = dir.path().join("out");
    write_outputs(&a, &out).unwrap();
    for f in ["report.json", "frequencies.csv", "atts.csv", "summary.csv", "timings.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn threshold_one_keeps_only_unanimous_covariates() {
    let freqs = selection_frequencies(&[vec![0, 2], vec![0], vec![0, 3]], 4);
    assert_eq!(consensus_set(&freqs, 1.0), vec![0]);
    assert!(consensus_set(&selection_frequencies(&[vec![0], vec![1]], 2), 1.0).is_empty());
}

#[test]
fn subsample_keeps_all_treated() {
    let d = generate(&ScenarioSpec::scenario(1, 6).unwrap(), 200, 0.0, 1).unwrap();
    let rows = subsample_rows(&d, 30, 9);
    assert_eq!(rows.len(), d.treated().len() + 30);
    assert!(d.treated().iter().all(|i| rows.contains(i)));
    assert_eq!(rows, subsample_rows(&d, 30, 9));
}

#[test]
fn invalid_jobs_are_refused() {
    let mut job = RealDataJob::new("x.csv", "t", "y");
    job.threshold = 0.0;
    assert!(job.validate().is_err());
    job.threshold = 0.5;
    job.iterations = 0;
    assert!(job.validate().is_err());
}
