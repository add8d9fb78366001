use tristage::frameworks::SelectorConfig;
use tristage_bench::grid::*;

fn one_cell_grid(model: &str) -> ExperimentGrid {
    ExperimentGrid {
        scenarios: vec![1],
        ns: vec![200],
        rhos: vec![0.0],
        seeds: vec![3],
        models: vec![SelectorConfig::preset(model).unwrap()],
        true_effect: 0.0,
        p: 20,
    }
}

#[test]
fn one_cell_record_has_every_field() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_grid(&one_cell_grid("enh-elrt"), dir.path(), 1).unwrap();
    assert_eq!((s.computed, s.skipped, s.records), (1, 0, 1));
    let text = std::fs::read_to_string(dir.path().join(RECORDS_FILE)).unwrap();
    assert_eq!(text.lines().next().unwrap(), RECORD_HEADER.join(","));
    let recs = read_records(dir.path()).unwrap();
    let r = &recs[0];
    assert_eq!((r.model.as_str(), r.scenario, r.n, r.rho, r.seed, r.p), ("enh-elrt", 1, 200, 0.0, 3, 20));
    assert!(r.error.is_empty(), "{}", r.error);
    assert!(r.att.is_some() && r.bias == r.att);
    assert!(r.wall_clock_seconds > 0.0);
    assert!(r.selected_covariates().iter().all(|&j| (1..=20).contains(&j)));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest["records"], 1);
    assert_eq!(manifest["records_sha256"], sha256_hex(text.as_bytes()));
}

#[test]
fn resume_skips_and_config_change_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let grid = one_cell_grid("enh-elrs");
    run_grid(&grid, dir.path(), 1).unwrap();
    let before = std::fs::read(dir.path().join(RECORDS_FILE)).unwrap();
    let again = run_grid(&grid, dir.path(), 1).unwrap();
    assert_eq!((again.computed, again.skipped), (0, 1));
    assert_eq!(std::fs::read(dir.path().join(RECORDS_FILE)).unwrap(), before);

    let mut more = grid.clone();
    more.seeds = vec![3, 4];
    let grown = run_grid(&more, dir.path(), 1).unwrap();
    assert_eq!((grown.computed, grown.skipped, grown.records), (1, 1, 2));

    let mut changed = grid.clone();
    changed.true_effect = 1.0;
    assert!(run_grid(&changed, dir.path(), 1).is_err());
}

#[test]
fn cells_are_sorted_and_complete() {
    let g = ExperimentGrid::default();
    let cells = g.cells();
    assert_eq!(cells.len(), 4 * 4 * 3 * 4 * 30);
    assert_eq!(cells[0].model, "enh-elrs");
    assert_eq!(g.config_hash(), ExperimentGrid::default().config_hash());
}

#[test]
fn truncated_rows_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.csv");
    std::fs::write(
        &path,
        format!("{}\nenh-elrt,1,200,0,1,20,1;2,0.1,0.1,0.5,\nenh-elrt,1,200,0,2,20,1;2,0.", RECORD_HEADER.join(",")),
    )
    .unwrap();
    let recs = read_records(&path).unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].selected_covariates(), vec![1, 2]);
}
