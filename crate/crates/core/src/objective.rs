//! The distribution-preservation objective
//!
//! `G(a, X) = (1/N) sum_i [log D(x_i(a)) - log D(x_i)] - eta |a|^2`,
//!
//! where `x_i(a)` replaces the missing coordinates of row `i` by the
//! `a`-weighted combination of its K Chebyshev neighbours in the reference
//! set, and `D` is the kernel density of [`NeighborIndex::log_density`].
//!
//! Neighbour lists depend on `X` only, so `x_i(a)` is affine in `a` and every
//! method here accepts weights off the simplex (finite differences need it).

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::matrix::{DataMatrix, SimplexWeights};
use crate::neighbors::NeighborIndex;

/// `G` (or `G*` when `density` is built on the ground truth) at a fixed state `X`.
pub struct ObjectiveContext<'a> {
    reference: &'a NeighborIndex,
    density: &'a NeighborIndex,
    x: &'a DataMatrix,
    eta: f64,
    k: usize,
    neighbors: Vec<Vec<usize>>,
    base: Vec<f64>,
    active: Vec<usize>,
}

impl<'a> ObjectiveContext<'a> {
    /// Caches the neighbour lists of every row of `x` in `reference` and the
    /// densities `log D(x_i)`.
    pub fn new(
        reference: &'a NeighborIndex,
        density: &'a NeighborIndex,
        x: &'a DataMatrix,
        k: usize,
        eta: f64,
    ) -> Result<Self> {
        if !x.is_filled() {
            return Err(invalid("objective needs a fully imputed matrix"));
        }
        if x.n_cols() != reference.n_features() || x.n_cols() != density.n_features() {
            return Err(invalid("feature count differs between data and index"));
        }
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(invalid("eta must be nonnegative"));
        }
        let active: Vec<usize> = (0..x.n_rows()).filter(|&i| x.row_mask(i).iter().any(|&m| m)).collect();
        let neighbors = (0..x.n_rows())
            .into_par_iter()
            .map(|i| reference.knn_chebyshev(x.row(i), k))
            .collect::<Result<Vec<_>>>()?;
        let base = (0..x.n_rows())
            .into_par_iter()
            .map(|i| if x.row_mask(i).iter().any(|&m| m) { density.log_density(x.row(i)) } else { 0.0 })
            .collect();
        Ok(Self { reference, density, x, eta, k, neighbors, base, active })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn state(&self) -> &DataMatrix {
        self.x
    }

    pub fn reference(&self) -> &NeighborIndex {
        self.reference
    }

    pub fn density(&self) -> &NeighborIndex {
        self.density
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Row `i` after one improvement step with weights `alpha`.
    pub fn impute_row(&self, i: usize, alpha: &[f64]) -> Vec<f64> {
        combine(self.reference, self.x.row(i), self.x.row_mask(i), &self.neighbors[i], alpha)
    }

    /// The next state: every row passed through [`Self::impute_row`].
    pub fn impute(&self, alpha: &[f64]) -> DataMatrix {
        let mut out = self.x.clone();
        for &i in &self.active {
            let row = self.impute_row(i, alpha);
            out.row_mut(i).copy_from_slice(&row);
        }
        out
    }

    fn check_alpha(&self, alpha: &[f64]) -> Result<()> {
        if alpha.len() != self.k {
            return Err(invalid(format!("alpha has length {}, expected {}", alpha.len(), self.k)));
        }
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(invalid("alpha must be finite"));
        }
        Ok(())
    }

    fn penalty(&self, alpha: &[f64]) -> f64 {
        self.eta * alpha.iter().map(|a| a * a).sum::<f64>()
    }

    /// Per-sample log ratios `log D(x_i(a)) - log D(x_i)` for the rows with missing cells.
    pub fn log_ratios(&self, alpha: &[f64]) -> Result<Vec<f64>> {
        self.check_alpha(alpha)?;
        self.active
            .par_iter()
            .map(|&i| {
                let r = self.density.log_density(&self.impute_row(i, alpha)) - self.base[i];
                finite(r, i, "log density ratio")
            })
            .collect()
    }

    pub fn value(&self, alpha: &[f64]) -> Result<f64> {
        let ratios = self.log_ratios(alpha)?;
        Ok(ratios.iter().sum::<f64>() / self.x.n_rows() as f64 - self.penalty(alpha))
    }

    pub fn gradient(&self, alpha: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_and_gradient(alpha)?.1)
    }

    pub fn value_and_gradient(&self, alpha: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_alpha(alpha)?;
        let h = self.density.bandwidth();
        let per_sample = self
            .active
            .par_iter()
            .map(|&i| {
                let xa = self.impute_row(i, alpha);
                let mut w = Vec::new();
                let lse = self.density.log_kernel_sum(&xa, Some(&mut w));
                let ratio = finite(lse - self.density.log_normalizer() - self.base[i], i, "log density ratio")?;
                let m = weighted_offset(self.density, &xa, &w);
                let mask = self.x.row_mask(i);
                let mut g = vec![0.0; self.k];
                for (gk, &n) in g.iter_mut().zip(&self.neighbors[i]) {
                    let z = self.reference.point(n);
                    let dot: f64 = (0..xa.len()).filter(|&f| mask[f]).map(|f| m[f] * z[f]).sum();
                    *gk = finite(-dot / (2.0 * h), i, "gradient")?;
                }
                Ok((ratio, g))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = self.x.n_rows() as f64;
        let mut value = 0.0;
        let mut grad = vec![0.0; self.k];
        for (r, g) in &per_sample {
            value += r;
            grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        grad.iter_mut().zip(alpha).for_each(|(g, a)| *g = *g / n - 2.0 * self.eta * a);
        Ok((value / n - self.penalty(alpha), grad))
    }

    /// Exact second derivative, row-major `K x K`. Only used for validation.
    ///
    /// Entry `(k, q)` is
    /// `-(1/2hN) sum_i [ z_k.z_q - (1/2h) z_k' Cov_i z_q ] - 2 eta [k = q]`,
    /// with `Cov_i` the kernel-weighted covariance of the reference points seen
    /// from `x_i(a)` and `z_k` the masked neighbour columns of row `i`.
    pub fn hessian(&self, alpha: &[f64]) -> Result<Vec<f64>> {
        self.check_alpha(alpha)?;
        let h = self.density.bandwidth();
        let k = self.k;
        let per_sample = self
            .active
            .par_iter()
            .map(|&i| {
                let xa = self.impute_row(i, alpha);
                let mut w = Vec::new();
                self.density.log_kernel_sum(&xa, Some(&mut w));
                let mask = self.x.row_mask(i);
                let missing: Vec<usize> = (0..xa.len()).filter(|&f| mask[f]).collect();
                let cols: Vec<&[f64]> = self.neighbors[i].iter().map(|&n| self.reference.point(n)).collect();
                // a[j][k] = (x_i(a) - z_j) . ztilde_k
                let mut mean = vec![0.0; k];
                let mut second = vec![0.0; k * k];
                for (j, &wj) in w.iter().enumerate() {
                    let zj = self.density.point(j);
                    let a: Vec<f64> =
                        cols.iter().map(|c| missing.iter().map(|&f| (xa[f] - zj[f]) * c[f]).sum()).collect();
                    for p in 0..k {
                        mean[p] += wj * a[p];
                        for q in 0..k {
                            second[p * k + q] += wj * a[p] * a[q];
                        }
                    }
                }
                let mut out = vec![0.0; k * k];
                for p in 0..k {
                    for q in 0..k {
                        let gram: f64 = missing.iter().map(|&f| cols[p][f] * cols[q][f]).sum();
                        let cov = second[p * k + q] - mean[p] * mean[q];
                        out[p * k + q] = finite(-(gram - cov / (2.0 * h)) / (2.0 * h), i, "hessian")?;
                    }
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        let n = self.x.n_rows() as f64;
        let mut hess = vec![0.0; k * k];
        for s in &per_sample {
            hess.iter_mut().zip(s).for_each(|(a, b)| *a += b);
        }
        for p in 0..k {
            for q in 0..k {
                hess[p * k + q] /= n;
            }
            hess[p * k + p] -= 2.0 * self.eta;
        }
        Ok(hess)
    }
}

/// Replaces the masked coordinates of `x` by `sum_k alpha_k z_{n_k}`.
pub(crate) fn combine(index: &NeighborIndex, x: &[f64], mask: &[bool], nbrs: &[usize], alpha: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    for (f, o) in out.iter_mut().enumerate() {
        if mask[f] {
            *o = nbrs.iter().zip(alpha).map(|(&n, a)| a * index.point(n)[f]).sum();
        }
    }
    out
}

/// `sum_j w_j (x - z_j)` over the density's reference points.
fn weighted_offset(index: &NeighborIndex, x: &[f64], w: &[f64]) -> Vec<f64> {
    let mut m = x.to_vec();
    for (j, &wj) in w.iter().enumerate() {
        for (mf, zf) in m.iter_mut().zip(index.point(j)) {
            *mf -= wj * zf;
        }
    }
    m
}

fn finite(v: f64, sample: usize, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical { sample, what: what.to_string() })
    }
}

fn cubic(h: f64, b: f64, c: f64) -> f64 {
    -2.0 * h * h * h + b * h * h + c
}

/// Smallest bandwidth for which `G` is concave in the weights: the root above
/// `b/3` of `-2h^3 + b h^2 + c` with `b = (4 S^2 K - eta) / (2 K S)` and
/// `c = N^2 S / 4`.
pub fn solve_bandwidth(s: f64, k: usize, eta: f64, n: usize) -> Result<f64> {
    if !(s > 0.0 && s.is_finite()) || k == 0 || n == 0 {
        return Err(invalid("bandwidth needs S > 0, K >= 1, N >= 1"));
    }
    let kf = k as f64;
    if !(eta >= 0.0 && eta < 4.0 * s * s * kf) {
        return Err(invalid(format!("eta = {eta} must lie in [0, 4 S^2 K) for concavity")));
    }
    let b = (4.0 * s * s * kf - eta) / (2.0 * kf * s);
    let c = (n as f64).powi(2) * s / 4.0;
    Ok(cubic_root_above(b, c))
}

/// Unique real root of `-2h^3 + b h^2 + c` for `b > 0, c >= 0`.
pub(crate) fn cubic_root_above(b: f64, c: f64) -> f64 {
    // h^3 + a2 h^2 + a0 = 0 with a2 = -b/2, a0 = -c/2, shifted by h = t + b/6
    let p = -b * b / 12.0;
    let q = -b * b * b / 108.0 - c / 2.0;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    let mut h = if disc >= 0.0 {
        let r = disc.sqrt();
        (-q / 2.0 + r).cbrt() + (-q / 2.0 - r).cbrt() + b / 6.0
    } else {
        f64::NAN
    };
    for _ in 0..3 {
        let d = -6.0 * h * h + 2.0 * b * h;
        if d != 0.0 && h.is_finite() {
            let next = h - cubic(h, b, c) / d;
            if next.is_finite() {
                h = next;
            }
        }
    }
    let ok = h.is_finite()
        && h > b / 3.0
        && cubic(h, b, c).abs() <= 1e-8 * c.abs().max(1.0)
        && cubic(h * (1.0 + 1e-9), b, c) < 0.0;
    if ok {
        h
    } else {
        bisect_root(b, c)
    }
}

fn bisect_root(b: f64, c: f64) -> f64 {
    let mut lo = b / 3.0;
    let mut hi = (b / 3.0).max(1.0);
    while cubic(hi, b, c) >= 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cubic(mid, b, c) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// `|sum_s G(a^s, X^{s-1}) - [(1/N) sum_i (log D(x^t_i) - log D(x^0_i)) - eta sum_s |a^s|^2]|`.
pub fn telescope_sum(
    per_step_g: &[f64],
    log_density_start: &[f64],
    log_density_end: &[f64],
    eta: f64,
    alphas: &[SimplexWeights],
) -> f64 {
    let lhs: f64 = per_step_g.iter().sum();
    let n = log_density_start.len() as f64;
    let drift: f64 = log_density_end.iter().zip(log_density_start).map(|(e, s)| e - s).sum::<f64>() / n;
    let penalty: f64 = alphas.iter().map(|a| a.squared_norm()).sum::<f64>() * eta;
    (lhs - (drift - penalty)).abs()
}
