use proptest::prelude::*;
use tristage::smoothing::*;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(lo) < 0.0) == (f(mid) < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn default_tanh_and_sigmoid_cross_once() {
    let diff = |x: f64| x.tanh().sqrt() - sigmoid(x);
    let cross = bisect(diff, 0.01, 3.0);
    assert!((cross - 0.362_950_638).abs() < 1e-8, "{cross}");
    let below: Vec<f64> = (1..100).map(|k| cross * k as f64 / 100.0).collect();
    let above: Vec<f64> = (1..100).map(|k| cross + k as f64 * 0.05).collect();
    let (t, s) = (tanh_weights(&below, 0.5), sigmoid_weights(&below, 1.0));
    assert!((0..below.len()).all(|j| t[j] < s[j]));
    let (t, s) = (tanh_weights(&above, 0.5), sigmoid_weights(&above, 1.0));
    assert!((0..above.len()).all(|j| t[j] > s[j]));
}

#[test]
fn equal_power_crossing_is_asinh_one() {
    let cross = bisect(|x| x.tanh() - sigmoid(x), 0.01, 3.0);
    assert!((cross - 1f64.asinh()).abs() < 1e-12);
}

#[test]
fn presets_use_default_powers() {
    assert_eq!(SmoothingSpec::sigmoid().gamma(), DEFAULT_SIGMOID_GAMMA);
    assert_eq!(SmoothingSpec::tanh().gamma(), DEFAULT_TANH_GAMMA);
    assert!(SmoothingSpec::new(SmoothingKind::Tanh, 0.0).is_err());
}

#[test]
fn zero_policies() {
    let w = inverse_power_weights(&[0.0, 0.5, 2.0], 1.0, ZeroPolicy::Exclude);
    assert!(w[0].is_infinite());
    assert_eq!((w[1], w[2]), (2.0, 0.5));
    let c = inverse_power_weights(&[0.0, 1e-12], 1.0, ZeroPolicy::Clamp(DEFAULT_ZERO_CLAMP));
    assert_eq!((c[0], c[1]), (DEFAULT_ZERO_CLAMP, DEFAULT_ZERO_CLAMP));
}

#[test]
fn tanh_gains_dominate_up_to_the_inflection_bound() {
    // where the tanh and sigmoid derivatives meet: sech^2(x) = s(x)(1 - s(x))
    let bound = bisect(|x| 1.0 / x.cosh().powi(2) - sigmoid(x) * (1.0 - sigmoid(x)), 0.5, 3.0);
    assert!((bound - 2.0 * ((1.0 + 3f64.sqrt()) / 2.0).acosh()).abs() < 1e-10);
    let grid: Vec<f64> = (0..=200).map(|k| bound * k as f64 / 200.0).collect();
    let (t, s) = (tanh_weights(&grid, 1.0), sigmoid_weights(&grid, 1.0));
    for a in 0..grid.len() {
        for b in a + 1..grid.len() {
            assert!(t[b] - t[a] >= s[b] - s[a] - 1e-15);
        }
    }
    let (ta, tb) = (2.5f64.tanh(), 3f64.tanh());
    assert!(tb - ta < sigmoid(3.0) - sigmoid(2.5));
}

proptest! {
    #[test]
    fn weights_are_monotone(a in 0.0f64..8.0, b in 0.0f64..8.0, gamma in 0.1f64..3.0) {
        prop_assume!((a - b).abs() > 1e-9);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let s = sigmoid_weights(&[lo, hi], gamma);
        let t = tanh_weights(&[lo, hi], gamma);
        prop_assert!(s[0] < s[1] && t[0] < t[1]);
        prop_assume!(lo > 0.0);
        let inv = inverse_power_weights(&[lo, hi], gamma, ZeroPolicy::Exclude);
        prop_assert!(inv[0] > inv[1]);
    }

    #[test]
    fn weights_stay_in_range(beta in proptest::collection::vec(-15.0f64..15.0, 1..30), gamma in 0.1f64..3.0) {
        let s = sigmoid_weights(&beta, gamma);
        let t = tanh_weights(&beta, gamma);
        let p = beta.len() as f64;
        prop_assert!(s.as_slice().iter().all(|&w| w >= 0.5f64.powf(gamma) && w <= 1.0));
        prop_assert!(t.as_slice().iter().all(|&w| (0.0..=1.0).contains(&w)));
        prop_assert!(s.as_slice().iter().map(|w| w * w).sum::<f64>() <= p);
        prop_assert!(t.as_slice().iter().map(|w| w * w).sum::<f64>() <= p);
    }
}
