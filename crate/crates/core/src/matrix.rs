//! Dense data matrix with a missing-value mask, simplex weights and run configuration.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Row-major `N x F` matrix plus a missing mask (`true` = missing).
///
/// Missing cells hold a quiet NaN until they are imputed; the mask stays
/// authoritative afterwards, so an imputed matrix still knows which cells were
/// filled in.
#[derive(Clone, Debug)]
pub struct DataMatrix {
    values: Vec<f64>,
    mask: Vec<bool>,
    n_rows: usize,
    n_cols: usize,
}

impl PartialEq for DataMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.n_rows == other.n_rows
            && self.n_cols == other.n_cols
            && self.mask == other.mask
            && self.values.iter().zip(&other.values).all(|(a, b)| a == b || (a.is_nan() && b.is_nan()))
    }
}

impl DataMatrix {
    pub fn new(n_rows: usize, n_cols: usize, values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if n_rows == 0 || n_cols == 0 {
            return Err(invalid("matrix must have at least one row and one column"));
        }
        let len = n_rows * n_cols;
        if values.len() != len || mask.len() != len {
            return Err(Error::ShapeMismatch {
                expected: format!("{len} cells"),
                got: format!("{} values, {} mask entries", values.len(), mask.len()),
            });
        }
        if let Some(pos) = values.iter().zip(&mask).position(|(v, &m)| !m && !v.is_finite()) {
            return Err(invalid(format!("observed cell ({}, {}) is not finite", pos / n_cols, pos % n_cols)));
        }
        Ok(Self { values, mask, n_rows, n_cols })
    }

    /// Matrix with no missing cells.
    pub fn complete(n_rows: usize, n_cols: usize, values: Vec<f64>) -> Result<Self> {
        let mask = vec![false; values.len()];
        Self::new(n_rows, n_cols, values, mask)
    }

    /// Matrix whose NaN cells are the missing ones.
    pub fn from_nan(n_rows: usize, n_cols: usize, values: Vec<f64>) -> Result<Self> {
        let mask = values.iter().map(|v| v.is_nan()).collect();
        Self::new(n_rows, n_cols, values, mask)
    }

    /// Builds from rows; NaN marks a missing cell.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != n_cols) {
            return Err(Error::ShapeMismatch {
                expected: format!("{n_cols} columns"),
                got: format!("{} columns in row {bad}", rows[bad].len()),
            });
        }
        Self::from_nan(rows.len(), n_cols, rows.concat())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn row_mask(&self, i: usize) -> &[bool] {
        &self.mask[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn get(&self, i: usize, f: usize) -> f64 {
        self.values[i * self.n_cols + f]
    }

    pub fn is_missing(&self, i: usize, f: usize) -> bool {
        self.mask[i * self.n_cols + f]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_cols)
    }

    pub fn missing_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn has_missing(&self) -> bool {
        self.mask.iter().any(|&m| m)
    }

    /// True once every cell, missing or not, holds a finite value.
    pub fn is_filled(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn observed_in_column(&self, f: usize) -> usize {
        (0..self.n_rows).filter(|&i| !self.is_missing(i, f)).count()
    }

    /// Copy with the same mask and new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.n_rows, self.n_cols, values, self.mask.clone())
    }

    /// Copy where every cell flagged in `extra` (or already missing) is missing and reset to NaN.
    pub fn with_extra_mask(&self, extra: &[bool]) -> Result<Self> {
        if extra.len() != self.mask.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} mask entries", self.mask.len()),
                got: extra.len().to_string(),
            });
        }
        let mask: Vec<bool> = self.mask.iter().zip(extra).map(|(&a, &b)| a || b).collect();
        let values = self.values.iter().zip(&mask).map(|(&v, &m)| if m { f64::NAN } else { v }).collect();
        Self::new(self.n_rows, self.n_cols, values, mask)
    }

    /// Copy with every missing cell reset to the NaN sentinel.
    pub fn unimputed(&self) -> Self {
        let mut out = self.clone();
        for (v, &m) in out.values.iter_mut().zip(&self.mask) {
            if m {
                *v = f64::NAN;
            }
        }
        out
    }

    /// Copy with the mask cleared; requires every cell to be finite.
    pub fn into_complete(self) -> Result<Self> {
        Self::complete(self.n_rows, self.n_cols, self.values)
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub(crate) fn check_same_shape(&self, other: &DataMatrix) -> Result<()> {
        if self.n_rows != other.n_rows || self.n_cols != other.n_cols {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", self.n_rows, self.n_cols),
                got: format!("{}x{}", other.n_rows, other.n_cols),
            });
        }
        Ok(())
    }
}

/// Nonnegative weights summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimplexWeights(Vec<f64>);

const SIMPLEX_TOL: f64 = 1e-12;

impl SimplexWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if is_on_simplex(&w) {
            Ok(Self(w))
        } else {
            Err(invalid(format!("{w:?} is not on the simplex")))
        }
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn vertex(k: usize, i: usize) -> Self {
        let mut w = vec![0.0; k];
        w[i] = 1.0;
        Self(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn squared_norm(&self) -> f64 {
        self.0.iter().map(|w| w * w).sum()
    }
}

impl std::ops::Deref for SimplexWeights {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

fn is_on_simplex(w: &[f64]) -> bool {
    !w.is_empty() && w.iter().all(|&x| x.is_finite() && x >= 0.0) && (w.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL
}

/// Euclidean projection onto the probability simplex (sort-and-threshold).
pub fn project_to_simplex(v: &[f64]) -> Result<SimplexWeights> {
    if v.is_empty() {
        return Err(invalid("cannot project an empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(invalid("simplex projection input must be finite"));
    }
    if is_on_simplex(v) {
        return Ok(SimplexWeights(v.to_vec()));
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    let mut w: Vec<f64> = v.iter().map(|&x| (x - theta).max(0.0)).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    Ok(SimplexWeights(w))
}

/// Divides each row's observed entries by their Euclidean norm.
///
/// Zero-norm rows are left alone with scale 1. Imputed cells are scaled along
/// with the observed ones so that [`denormalize_rows`] inverts the map.
pub fn l2_normalize_rows(x: &DataMatrix) -> (DataMatrix, Vec<f64>) {
    let mut out = x.clone();
    let mut scales = Vec::with_capacity(x.n_rows());
    for i in 0..x.n_rows() {
        let norm = x.row(i).iter().zip(x.row_mask(i)).filter(|(_, &m)| !m).map(|(v, _)| v * v).sum::<f64>().sqrt();
        let scale = if norm > 0.0 { norm } else { 1.0 };
        out.row_mut(i).iter_mut().for_each(|v| *v /= scale);
        scales.push(scale);
    }
    (out, scales)
}

/// Inverse of [`l2_normalize_rows`].
pub fn denormalize_rows(x: &DataMatrix, scales: &[f64]) -> Result<DataMatrix> {
    if scales.len() != x.n_rows() {
        return Err(Error::ShapeMismatch { expected: format!("{} scales", x.n_rows()), got: scales.len().to_string() });
    }
    let mut out = x.clone();
    for (i, &s) in scales.iter().enumerate() {
        out.row_mut(i).iter_mut().for_each(|v| *v *= s);
    }
    Ok(out)
}

/// Shared-variance Gaussian generator parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mu: Vec<f64>,
    pub sigma: f64,
}

impl GaussianParams {
    /// `sigma = 0` is accepted so degenerate data can be generated; the
    /// self-masking mechanism rejects it.
    pub fn new(mu: Vec<f64>, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(invalid(format!("sigma must be finite and nonnegative, got {sigma}")));
        }
        if mu.iter().any(|m| !m.is_finite()) {
            return Err(invalid("mu must be finite"));
        }
        Ok(Self { mu, sigma })
    }
}

/// Hyperparameters of an imputation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Config {
    /// Number of neighbours and dimension of the weight simplex.
    pub n_neighbors: usize,
    pub max_iter: usize,
    /// Ridge penalty on the weights.
    pub eta: f64,
    /// Squared-norm cap on rows, used to pick the bandwidth.
    pub s: f64,
    pub beta: f64,
    pub normalize: bool,
    pub seed: u64,
    /// Kernel bandwidth; the smallest concavity-preserving one when `None`.
    pub bandwidth: Option<f64>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            n_neighbors: 5,
            max_iter: 500,
            eta: 0.001,
            s: 1.0,
            beta: 0.0,
            normalize: false,
            seed: 0,
            bandwidth: None,
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        if self.n_neighbors < 2 {
            return Err(invalid("n_neighbors must be at least 2"));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter must be positive"));
        }
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(invalid("norm cap S must be positive"));
        }
        if !(self.eta >= 0.0 && self.eta < 4.0 * self.s * self.s * self.n_neighbors as f64) {
            return Err(invalid(format!("eta must lie in [0, 4 S^2 K), got {}", self.eta)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(invalid("beta must lie in [0, 1]"));
        }
        if let Some(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(invalid("bandwidth must be positive"));
            }
        }
        Ok(())
    }
}
