use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tristage::causal::*;
use tristage::synthgen::{generate, Dataset, ScenarioSpec};

fn scenario1(n: usize, alpha: f64, seed: u64) -> Dataset {
    generate(&ScenarioSpec::scenario(1, 20).unwrap().with_true_effect(alpha), n, 0.0, seed).unwrap()
}

fn random_data(seed: u64, n: usize, p: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
    let t: Vec<bool> = (0..n).map(|i| i % 3 == 0 || rng.random::<f64>() < 0.2).collect();
    let y = (0..n).map(|i| x[(i, 0)] + rng.random_range(-0.1..0.1)).collect();
    Dataset::new(x, t, y).unwrap()
}

#[test]
fn exact_effect_is_recovered() {
    let mut d = random_data(1, 60, 2);
    d.y = d.t.iter().map(|&t| if t { 1.5 } else { 0.0 }).collect();
    let est = att_for_selection(&d, &[0, 1], &MatchOptions::default()).unwrap();
    assert!((est.att - 1.5).abs() < 1e-10);
    assert!(est.standard_error >= 0.0 && est.standard_error.is_finite());
}

#[test]
fn identical_covariates_give_matched_mean_difference() {
    let xs = [0.3, -1.2, 2.0, 0.7];
    let vals: Vec<f64> = xs.iter().chain(xs.iter()).copied().collect();
    let x = DMatrix::from_column_slice(8, 1, &vals);
    let t: Vec<bool> = (0..8).map(|i| i < 4).collect();
    let y = vec![3.0, 1.0, 4.0, 1.5, 0.5, 0.2, 1.1, 0.9];
    let d = Dataset::new(x, t, y.clone()).unwrap();
    let m = nearest_neighbor_match(&d, &[0]).unwrap();
    assert!(m.distances.iter().all(|&v| v == 0.0));
    let est = estimate_att(&d, &m, &[0]).unwrap();
    let diff = m.pairs.iter().map(|&(a, b)| y[a] - y[b]).sum::<f64>() / 4.0;
    assert!((est.att - diff).abs() < 1e-10);
}

#[test]
fn target_model_is_unbiased_under_the_null() {
    let mut atts = Vec::new();
    for seed in 1..=30 {
        let d = scenario1(1000, 0.0, seed);
        let est = target_model_att(&d).unwrap();
        atts.push(est.att);
    }
    let mean = atts.iter().sum::<f64>() / 30.0;
    assert!(mean.abs() < 0.1, "mean target-model ATT {mean}");
}

#[test]
fn target_model_covers_injected_effect() {
    let mut covered = 0;
    for seed in 1..=10 {
        let est = target_model_att(&scenario1(1000, 2.0, seed)).unwrap();
        if (est.att - 2.0).abs() <= 3.0 * est.standard_error {
            covered += 1;
        }
        assert_eq!(est, target_model_att(&scenario1(1000, 2.0, seed)).unwrap());
    }
    assert!(covered >= 9, "{covered}/10 within 3 SE");
}

#[test]
fn truth_selection_null_att_within_three_se() {
    let mut inside = 0;
    for seed in 1..=20 {
        let d = scenario1(500, 0.0, seed);
        let est = att_for_selection(&d, &[0, 1, 2, 3], &MatchOptions::default()).unwrap();
        if est.att.abs() <= 3.0 * est.standard_error {
            inside += 1;
        }
    }
    assert!(inside >= 19, "{inside}/20");
}

#[test]
fn target_model_needs_truth() {
    assert!(target_model_att(&random_data(2, 30, 2)).is_err());
}

#[test]
fn collinear_covariates_are_dropped() {
    let mut d = random_data(3, 60, 2);
    for i in 0..60 {
        d.x[(i, 1)] = 2.0 * d.x[(i, 0)];
    }
    let est = att_for_selection(&d, &[0, 1], &MatchOptions::default()).unwrap();
    assert_eq!(est.dropped, vec![1]);
}

#[test]
fn mahalanobis_and_caliper_options() {
    let d = scenario1(300, 0.0, 4);
    let opts = MatchOptions {
        metric: Metric::Mahalanobis,
        caliper: None,
    };
    let m = nearest_neighbor_match_with(&d, &[0, 1], &opts).unwrap();
    assert!(!m.is_empty());
    let tight = MatchOptions {
        caliper: Some(1e-6),
        ..MatchOptions::default()
    };
    let c = nearest_neighbor_match_with(&d, &[0, 1], &tight).unwrap();
    assert!(c.flags.caliper_dropped > 0);
    assert!(c.len() + c.flags.caliper_dropped <= d.treated().len());
}

#[test]
fn csv_export() {
    let d = random_data(5, 20, 1);
    let m = nearest_neighbor_match(&d, &[0]).unwrap();
    let mut buf = Vec::new();
    m.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("treated_id,control_id,distance\n"));
    assert_eq!(text.lines().count(), m.len() + 1);
}

#[test]
fn bias_is_plain_difference() {
    let est = |att| AttEstimate {
        att,
        standard_error: 0.0,
        n_pairs: 1,
        model: AttModel::SelectedRegression,
        dropped: Vec::new(),
    };
    assert_eq!(selection_bias(&est(0.0258), 0.0587), -0.0329);
    assert!((selection_bias(&est(0.0436), 0.0587) + 0.0151).abs() < 1e-15);
    assert_eq!(selection_bias(&est(0.3), 0.3), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pairs_are_without_replacement_and_greedy(seed in 0u64..10_000, n in 20usize..80) {
        let d = random_data(seed, n, 2);
        let m = nearest_neighbor_match(&d, &[0, 1]).unwrap();
        let mut controls: Vec<usize> = m.pairs.iter().map(|p| p.1).collect();
        controls.sort_unstable();
        controls.dedup();
        prop_assert_eq!(controls.len(), m.len());
        prop_assert_eq!(m.len(), d.treated().len().min(d.controls().len()));
        let treated: Vec<usize> = m.pairs.iter().map(|p| p.0).collect();
        prop_assert!(treated.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn control_order_does_not_change_pairs(seed in 0u64..10_000) {
        let d = random_data(seed, 40, 2);
        let m = nearest_neighbor_match(&d, &[0, 1]).unwrap();
        // reverse the storage order of the controls only
        let treated = d.treated();
        let mut controls = d.controls();
        controls.reverse();
        let order: Vec<usize> = treated.iter().chain(&controls).copied().collect();
        let shuffled = d.subset(&order);
        let m2 = nearest_neighbor_match(&shuffled, &[0, 1]).unwrap();
        let mut a: Vec<(usize, usize)> = m.pairs.clone();
        let mut b: Vec<(usize, usize)> = m2.pairs.iter().map(|&(t, c)| (order[t], order[c])).collect();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn att_ignores_outcome_shift(seed in 0u64..10_000, c in -50.0f64..50.0) {
        let d = random_data(seed, 50, 2);
        let a = att_for_selection(&d, &[0, 1], &MatchOptions::default()).unwrap();
        let mut e = d.clone();
        e.y.iter_mut().for_each(|v| *v += c);
        let b = att_for_selection(&e, &[0, 1], &MatchOptions::default()).unwrap();
        prop_assert!((a.att - b.att).abs() < 1e-10);
    }
}
