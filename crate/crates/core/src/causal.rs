//! Post-selection estimation: nearest-neighbour matching and regression ATT.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::synthgen::Dataset;

/// Distance used to pick the nearest control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    /// Euclidean on covariates standardized over the whole sample.
    #[default]
    Euclidean,
    /// Mahalanobis with the whole-sample covariance of the selected covariates.
    Mahalanobis,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MatchOptions {
    pub metric: Metric,
    /// Treated units whose nearest available control is farther than this stay unmatched.
    pub caliper: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MatchFlags {
    /// No covariate was selected; pairs follow storage order.
    pub empty_selection: bool,
    /// Fewer controls than treated; only the first treated units were matched.
    pub controls_exhausted: bool,
    /// Treated units left unmatched by the caliper.
    pub caliper_dropped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedSample {
    /// `(treated row, control row)`.
    pub pairs: Vec<(usize, usize)>,
    pub distances: Vec<f64>,
    pub flags: MatchFlags,
}

impl MatchedSample {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Matched rows, treated and control interleaved pair by pair.
    pub fn rows(&self) -> Vec<usize> {
        self.pairs.iter().flat_map(|&(t, c)| [t, c]).collect()
    }

    /// Writes `treated_id,control_id,distance` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "treated_id,control_id,distance")?;
        for (&(t, c), d) in self.pairs.iter().zip(&self.distances) {
            writeln!(out, "{t},{c},{d}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttModel {
    SelectedRegression,
    MatchedMeanDifference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttEstimate {
    pub att: f64,
    pub standard_error: f64,
    pub n_pairs: usize,
    pub model: AttModel,
    /// Selected covariates left out of the regression because they were collinear.
    pub dropped: Vec<usize>,
}

fn check_selected(data: &Dataset, selected: &[usize]) -> Result<()> {
    if let Some(&j) = selected.iter().find(|&&j| j >= data.p()) {
        return Err(Error::invalid(format!("covariate {j} out of range for p = {}", data.p())));
    }
    Ok(())
}

/// Coordinates in which Euclidean distance is the requested metric.
fn match_space(data: &Dataset, selected: &[usize], metric: Metric) -> DMatrix<f64> {
    let n = data.n();
    let k = selected.len();
    let mut z = DMatrix::from_fn(n, k, |i, a| data.x[(i, selected[a])]);
    for a in 0..k {
        let mean = z.column(a).mean();
        z.column_mut(a).add_scalar_mut(-mean);
    }
    match metric {
        Metric::Euclidean => {
            for a in 0..k {
                let sd = (z.column(a).norm_squared() / (n - 1) as f64).sqrt();
                if sd > 0.0 {
                    z.column_mut(a).unscale_mut(sd);
                }
            }
            z
        }
        Metric::Mahalanobis => {
            let mut cov = z.tr_mul(&z) / (n - 1) as f64;
            let scale = cov.diagonal().max().max(f64::MIN_POSITIVE);
            for a in 0..k {
                cov[(a, a)] += 1e-12 * scale;
            }
            match cov.cholesky() {
                // rows z_i -> L^{-1} z_i, i.e. Z L^{-T}
                Some(ch) => {
                    let l = ch.l();
                    let zt = l.solve_lower_triangular(&z.transpose()).unwrap_or_else(|| z.transpose());
                    zt.transpose()
                }
                None => z,
            }
        }
    }
}

/// Greedy one-to-one nearest-neighbour matching without replacement.
///
/// Treated units are processed in ascending row order; each takes the nearest
/// unused control, ties going to the lowest control row.
pub fn nearest_neighbor_match(data: &Dataset, selected: &[usize]) -> Result<MatchedSample> {
    nearest_neighbor_match_with(data, selected, &MatchOptions::default())
}

pub fn nearest_neighbor_match_with(
    data: &Dataset,
    selected: &[usize],
    opts: &MatchOptions,
) -> Result<MatchedSample> {
    check_selected(data, selected)?;
    let treated = data.treated();
    let controls = data.controls();
    if treated.is_empty() || controls.is_empty() {
        return Err(Error::DegenerateLabels);
    }
    let mut flags = MatchFlags {
        controls_exhausted: controls.len() < treated.len(),
        ..MatchFlags::default()
    };
    let limit = treated.len().min(controls.len());

    if selected.is_empty() {
        flags.empty_selection = true;
        return Ok(MatchedSample {
            pairs: treated.iter().zip(&controls).map(|(&t, &c)| (t, c)).collect(),
            distances: vec![0.0; limit],
            flags,
        });
    }

    let z = match_space(data, selected, opts.metric);
    let k = selected.len();
    let rows: Vec<Vec<f64>> = (0..data.n()).map(|i| (0..k).map(|a| z[(i, a)]).collect()).collect();
    let mut used = vec![false; controls.len()];
    let mut pairs = Vec::with_capacity(limit);
    let mut distances = Vec::with_capacity(limit);
    for &t in &treated {
        if pairs.len() == limit {
            break;
        }
        let zt = &rows[t];
        let mut best: Option<(f64, usize)> = None;
        for (ci, &c) in controls.iter().enumerate() {
            if used[ci] {
                continue;
            }
            let d2: f64 = zt.iter().zip(&rows[c]).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.is_none_or(|(bd, _)| d2 < bd) {
                best = Some((d2, ci));
            }
        }
        let (d2, ci) = best.expect("an unused control remains while pairs < limit");
        let d = d2.sqrt();
        if opts.caliper.is_some_and(|cal| d > cal) {
            flags.caliper_dropped += 1;
            continue;
        }
        used[ci] = true;
        pairs.push((t, controls[ci]));
        distances.push(d);
    }
    Ok(MatchedSample {
        pairs,
        distances,
        flags,
    })
}

/// Regression ATT over the matched sample: OLS of `Y` on `(1, T, selected)`.
///
/// Covariates that are (numerically) linear combinations of earlier columns are
/// dropped and reported. With no covariates the estimate is the mean paired
/// difference with its paired standard error.
pub fn estimate_att(data: &Dataset, matched: &MatchedSample, selected: &[usize]) -> Result<AttEstimate> {
    check_selected(data, selected)?;
    if matched.is_empty() {
        return Err(Error::invalid("matched sample is empty"));
    }
    let n_pairs = matched.len();
    if selected.is_empty() {
        let diffs: Vec<f64> = matched.pairs.iter().map(|&(t, c)| data.y[t] - data.y[c]).collect();
        let mean = diffs.iter().sum::<f64>() / n_pairs as f64;
        let se = if n_pairs > 1 {
            let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n_pairs - 1) as f64;
            (var / n_pairs as f64).sqrt()
        } else {
            0.0
        };
        return Ok(AttEstimate {
            att: mean,
            standard_error: se,
            n_pairs,
            model: AttModel::MatchedMeanDifference,
            dropped: Vec::new(),
        });
    }

    let rows = matched.rows();
    let m = rows.len();
    // centred columns; T first so it is never the one dropped
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(selected.len() + 1);
    let center = |v: DVector<f64>| {
        let mean = v.mean();
        v.add_scalar(-mean)
    };
    cols.push(center(DVector::from_iterator(m, rows.iter().map(|&i| if data.t[i] { 1.0 } else { 0.0 }))));
    let mut basis: Vec<DVector<f64>> = vec![cols[0].normalize()];
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for &j in selected {
        let c = center(DVector::from_iterator(m, rows.iter().map(|&i| data.x[(i, j)])));
        let norm0 = c.norm();
        let mut r = c.clone();
        for q in &basis {
            let proj = q.dot(&r);
            r.axpy(-proj, q, 1.0);
        }
        // the intercept uses one degree of freedom, T another
        if norm0 == 0.0 || r.norm() <= 1e-8 * norm0 || kept.len() + 3 > m {
            dropped.push(j);
        } else {
            basis.push(r.normalize());
            cols.push(c);
            kept.push(j);
        }
    }

    let k = cols.len();
    let xc = DMatrix::from_columns(&cols);
    let yv = DVector::from_iterator(m, rows.iter().map(|&i| data.y[i]));
    let yc = center(yv);
    let gram = xc.tr_mul(&xc);
    let chol = gram.clone().cholesky().ok_or(Error::SingularSystem)?;
    let coef = chol.solve(&xc.tr_mul(&yc));
    let resid = &yc - &xc * &coef;
    let df = m as f64 - k as f64 - 1.0;
    let se = if df > 0.0 {
        let sigma2 = resid.norm_squared() / df;
        let inv = chol.inverse();
        (sigma2 * inv[(0, 0)]).max(0.0).sqrt()
    } else {
        0.0
    };
    Ok(AttEstimate {
        att: coef[0],
        standard_error: se,
        n_pairs,
        model: AttModel::SelectedRegression,
        dropped,
    })
}

/// Match and estimate on the covariates a selector returned.
pub fn att_for_selection(data: &Dataset, selected: &[usize], opts: &MatchOptions) -> Result<AttEstimate> {
    let matched = nearest_neighbor_match_with(data, selected, opts)?;
    estimate_att(data, &matched, selected)
}

/// ATT of the oracle model that uses the true confounders and outcome predictors.
pub fn target_model_att(data: &Dataset) -> Result<AttEstimate> {
    let truth = data
        .truth
        .as_ref()
        .ok_or_else(|| Error::MissingTruth("target model needs ground-truth variable classes".into()))?;
    att_for_selection(data, &truth.target_set(), &MatchOptions::default())
}

/// Signed difference `att - reference`.
pub fn selection_bias(estimate: &AttEstimate, reference: f64) -> f64 {
    estimate.att - reference
}

/// Absolute standardized mean difference of covariate `j` between two row sets,
/// scaled by the pooled pre-matching standard deviation of the two arms.
pub fn standardized_difference(data: &Dataset, j: usize, treated: &[usize], controls: &[usize]) -> f64 {
    let mean = |rows: &[usize]| rows.iter().map(|&i| data.x[(i, j)]).sum::<f64>() / rows.len() as f64;
    let var = |rows: &[usize]| {
        let m = mean(rows);
        rows.iter().map(|&i| (data.x[(i, j)] - m).powi(2)).sum::<f64>() / (rows.len() as f64 - 1.0).max(1.0)
    };
    let (all_t, all_c) = (data.treated(), data.controls());
    let pooled = ((var(&all_t) + var(&all_c)) / 2.0).sqrt();
    let diff = (mean(treated) - mean(controls)).abs();
    if pooled > 0.0 {
        diff / pooled
    } else {
        diff
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_d(t: &[f64], c: &[f64]) -> Dataset {
        let vals: Vec<f64> = t.iter().chain(c).copied().collect();
        let labels: Vec<bool> = (0..vals.len()).map(|i| i < t.len()).collect();
        let n = vals.len();
        Dataset::new(DMatrix::from_column_slice(n, 1, &vals), labels, vec![0.0; n]).unwrap()
    }

    #[test]
    fn hand_enumerated_greedy_pairs() {
        let d = one_d(&[0.0, 10.0], &[1.0, 9.0]);
        let m = nearest_neighbor_match(&d, &[0]).unwrap();
        assert_eq!(m.pairs, vec![(0, 2), (1, 3)]);
    }

    #[test]
    fn identical_control_gives_zero_distance() {
        let d = one_d(&[3.0], &[7.0, 3.0, -2.0]);
        let m = nearest_neighbor_match(&d, &[0]).unwrap();
        assert_eq!(m.pairs, vec![(0, 2)]);
        assert_eq!(m.distances, vec![0.0]);
    }

    #[test]
    fn ties_go_to_lowest_control() {
        let d = one_d(&[0.0], &[1.0, -1.0]);
        assert_eq!(nearest_neighbor_match(&d, &[0]).unwrap().pairs, vec![(0, 1)]);
    }

    #[test]
    fn fewer_controls_flags() {
        let d = one_d(&[0.0, 1.0, 2.0], &[1.1]);
        let m = nearest_neighbor_match(&d, &[0]).unwrap();
        assert!(m.flags.controls_exhausted);
        assert_eq!(m.pairs, vec![(0, 3)]);
    }

    #[test]
    fn empty_selection_pairs_in_order() {
        let d = one_d(&[0.0, 1.0], &[5.0, 6.0, 7.0]);
        let m = nearest_neighbor_match(&d, &[]).unwrap();
        assert!(m.flags.empty_selection);
        assert_eq!(m.pairs, vec![(0, 2), (1, 3)]);
    }

    #[test]
    fn caliper_drops_far_units() {
        let d = one_d(&[0.0, 100.0], &[0.1, 0.2]);
        let opts = MatchOptions {
            caliper: Some(0.5),
            ..MatchOptions::default()
        };
        let m = nearest_neighbor_match_with(&d, &[0], &opts).unwrap();
        assert_eq!(m.pairs, vec![(0, 2)]);
        assert_eq!(m.flags.caliper_dropped, 1);
    }

    #[test]
    fn csv_layout() {
        let d = one_d(&[0.0], &[1.0]);
        let m = nearest_neighbor_match(&d, &[]).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "treated_id,control_id,distance\n0,1,0\n");
    }

    #[test]
    fn bias_is_signed_difference() {
        let est = |att| AttEstimate {
            att,
            standard_error: 0.0,
            n_pairs: 1,
            model: AttModel::SelectedRegression,
            dropped: vec![],
        };
        assert_eq!(selection_bias(&est(0.3), 0.3), 0.0);
        assert!((selection_bias(&est(0.0258), 0.0587) + 0.0329).abs() < 1e-15);
        assert!((selection_bias(&est(0.0812), 0.0587) - 0.0225).abs() < 1e-15);
    }
}
