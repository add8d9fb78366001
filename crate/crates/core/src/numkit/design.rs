use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative spread below which a column is treated as constant.
const CONSTANT_TOL: f64 = 1e-12;

/// An N x p covariate matrix together with the affine map that produced it.
///
/// Standardized columns have mean 0 and unit sample standard deviation.
/// Constant columns are centered to 0 and keep a recorded std of 1.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    values: DMatrix<f64>,
    column_means: Vec<f64>,
    column_stds: Vec<f64>,
    constant: Vec<bool>,
    standardized: bool,
}

/// Center and scale every column of `raw`.
pub fn standardize(raw: &DMatrix<f64>) -> Result<DesignMatrix> {
    let (n, p) = raw.shape();
    if n < 2 {
        return Err(Error::invalid(format!("standardize needs N >= 2, got {n}")));
    }
    if p == 0 {
        return Err(Error::invalid("standardize needs at least one column"));
    }
    let mut values = raw.clone();
    let mut means = Vec::with_capacity(p);
    let mut stds = Vec::with_capacity(p);
    let mut constant = Vec::with_capacity(p);
    for j in 0..p {
        let col = raw.column(j);
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sd = var.sqrt();
        let is_const = !(sd > CONSTANT_TOL * mean.abs().max(1.0));
        let scale = if is_const { 1.0 } else { sd };
        for i in 0..n {
            values[(i, j)] = if is_const { 0.0 } else { (raw[(i, j)] - mean) / scale };
        }
        means.push(mean);
        stds.push(scale);
        constant.push(is_const);
    }
    if constant.iter().all(|&c| c) {
        return Err(Error::DegenerateDesign);
    }
    Ok(DesignMatrix {
        values,
        column_means: means,
        column_stds: stds,
        constant,
        standardized: true,
    })
}

impl DesignMatrix {
    /// Wrap a matrix without transforming it.
    pub fn unscaled(raw: DMatrix<f64>) -> Result<Self> {
        let (n, p) = raw.shape();
        if n < 2 || p == 0 {
            return Err(Error::invalid(format!("design must be at least 2 x 1, got {n} x {p}")));
        }
        let constant = (0..p)
            .map(|j| {
                let col = raw.column(j);
                let first = col[0];
                col.iter().all(|&v| v == first)
            })
            .collect();
        Ok(DesignMatrix {
            values: raw,
            column_means: vec![0.0; p],
            column_stds: vec![1.0; p],
            constant,
            standardized: false,
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_means(&self) -> &[f64] {
        &self.column_means
    }

    pub fn column_stds(&self) -> &[f64] {
        &self.column_stds
    }

    pub fn is_constant(&self, j: usize) -> bool {
        self.constant[j]
    }

    pub fn constant_columns(&self) -> &[bool] {
        &self.constant
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    /// Map the stored values back to the raw scale.
    pub fn inverse_transform(&self) -> DMatrix<f64> {
        let mut out = self.values.clone();
        for j in 0..self.ncols() {
            for i in 0..self.nrows() {
                out[(i, j)] = self.values[(i, j)] * self.column_stds[j] + self.column_means[j];
            }
        }
        out
    }

    /// Coefficients fitted on this design expressed on the raw scale.
    pub fn raw_coefficients(&self, coefs: &[f64]) -> Vec<f64> {
        coefs
            .iter()
            .zip(&self.column_stds)
            .map(|(b, s)| b / s)
            .collect()
    }

    /// Rows `rows` as a new unscaled design (the transform metadata is kept).
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let p = self.ncols();
        let values = DMatrix::from_fn(rows.len(), p, |i, j| self.values[(rows[i], j)]);
        DesignMatrix {
            values,
            column_means: self.column_means.clone(),
            column_stds: self.column_stds.clone(),
            constant: self.constant.clone(),
            standardized: self.standardized,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_sd(v: &[f64]) -> f64 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    }

    #[test]
    fn symmetric_column_maps_to_minus_one_zero_one() {
        let raw = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let d = standardize(&raw).unwrap();
        let col: Vec<f64> = d.values().column(0).iter().copied().collect();
        // sample sd of [1,2,3] is 1, so the scaled values are exactly [-1, 0, 1]
        assert_eq!(col, vec![-1.0, 0.0, 1.0]);
        assert!((sample_sd(&col) - 1.0).abs() < 1e-12);
        assert_eq!(d.column_means(), &[2.0]);
    }

    #[test]
    fn standardizing_twice_is_identity() {
        let raw = DMatrix::from_fn(40, 3, |i, j| ((i * 7 + j * 13) % 11) as f64 * 0.3 - j as f64);
        let once = standardize(&raw).unwrap();
        let twice = standardize(once.values()).unwrap();
        for (a, b) in once.values().iter().zip(twice.values().iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_column_is_flagged_and_zeroed() {
        let raw = DMatrix::from_row_slice(3, 2, &[5.0, 1.0, 5.0, 2.0, 5.0, 4.0]);
        let d = standardize(&raw).unwrap();
        assert!(d.is_constant(0));
        assert!(!d.is_constant(1));
        assert_eq!(d.column_stds()[0], 1.0);
        assert!(d.values().column(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn all_constant_is_degenerate() {
        let raw = DMatrix::from_element(4, 2, 3.0);
        assert_eq!(standardize(&raw), Err(Error::DegenerateDesign));
    }

    #[test]
    fn single_row_rejected() {
        let raw = DMatrix::from_element(1, 2, 3.0);
        assert!(matches!(standardize(&raw), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn inverse_transform_round_trips() {
        let raw = DMatrix::from_fn(10, 2, |i, j| (i as f64).sin() * 3.0 + j as f64 * 10.0);
        let d = standardize(&raw).unwrap();
        let back = d.inverse_transform();
        for (a, b) in raw.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
