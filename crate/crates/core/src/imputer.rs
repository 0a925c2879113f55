//! Initial KNN imputation, the weighted improvement step, the full iterative
//! loop and the baselines it is compared against.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::learner::AdaHedge;
use crate::matrix::{denormalize_rows, l2_normalize_rows, Config, DataMatrix, SimplexWeights};
use crate::neighbors::NeighborIndex;
use crate::objective::{combine, solve_bandwidth, ObjectiveContext};

/// Donor weighting for the plain KNN imputer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Weights {
    Uniform,
    /// Inverse distance; a donor at distance zero takes all the weight.
    Distance,
}

/// Euclidean distance over the coordinates observed in both rows, rescaled by
/// `F / #common`. Rows sharing no observed coordinate are infinitely far apart.
pub fn nan_euclidean(a: &[f64], a_mask: &[bool], b: &[f64], b_mask: &[bool]) -> f64 {
    let mut common = 0usize;
    let mut sum = 0.0;
    for f in 0..a.len() {
        if !a_mask[f] && !b_mask[f] {
            common += 1;
            sum += (a[f] - b[f]).powi(2);
        }
    }
    if common == 0 {
        f64::INFINITY
    } else {
        (a.len() as f64 / common as f64 * sum).sqrt()
    }
}

fn check_columns(x: &DataMatrix) -> Result<()> {
    for f in 0..x.n_cols() {
        let observed = x.observed_in_column(f);
        if observed < x.n_rows() && observed < 2 {
            return Err(invalid(format!("feature {f} has {observed} observed entries, need at least 2")));
        }
    }
    Ok(())
}

/// Fills one missing cell from donors sorted by (distance, row).
fn donor_value(donors: &[(f64, usize)], value: impl Fn(usize) -> f64, weights: Weights) -> f64 {
    let uniform = |ds: &[(f64, usize)]| ds.iter().map(|&(_, j)| value(j)).sum::<f64>() / ds.len() as f64;
    match weights {
        Weights::Uniform => uniform(donors),
        Weights::Distance => {
            let exact: Vec<(f64, usize)> = donors.iter().copied().filter(|(d, _)| *d == 0.0).collect();
            if !exact.is_empty() {
                return uniform(&exact);
            }
            let finite: Vec<(f64, usize)> = donors.iter().copied().filter(|(d, _)| d.is_finite()).collect();
            if finite.is_empty() {
                return uniform(donors);
            }
            let total: f64 = finite.iter().map(|(d, _)| 1.0 / d).sum();
            finite.iter().map(|&(d, j)| value(j) / d).sum::<f64>() / total
        }
    }
}

fn knn_fill(x: &DataMatrix, k: usize, weights: Weights) -> Result<DataMatrix> {
    if k == 0 {
        return Err(invalid("need at least one neighbour"));
    }
    check_columns(x)?;
    let (n, f) = (x.n_rows(), x.n_cols());
    for c in 0..f {
        let observed = x.observed_in_column(c);
        if observed < n && observed < k {
            warn!("feature {c} has {observed} observed entries; using {observed} neighbours instead of {k}");
        }
    }
    let filled: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = x.row(i).to_vec();
            let mask = x.row_mask(i);
            if !mask.iter().any(|&m| m) {
                return row;
            }
            let dist: Vec<f64> = (0..n)
                .map(|j| if j == i { f64::INFINITY } else { nan_euclidean(x.row(i), mask, x.row(j), x.row_mask(j)) })
                .collect();
            for c in (0..f).filter(|&c| mask[c]) {
                let mut donors: Vec<(f64, usize)> =
                    (0..n).filter(|&j| j != i && !x.is_missing(j, c)).map(|j| (dist[j], j)).collect();
                donors.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                donors.truncate(k);
                row[c] = donor_value(&donors, |j| x.get(j, c), weights);
            }
            row
        })
        .collect();
    x.with_values(filled.concat())
}

/// Mean of the `k` nearest rows (nan-aware Euclidean) having the feature observed.
pub fn knn_initial_impute(x: &DataMatrix, k: usize) -> Result<DataMatrix> {
    knn_fill(x, k, Weights::Uniform)
}

/// Like [`knn_initial_impute`] with inverse-distance donor weights.
pub fn knn_distance_impute(x: &DataMatrix, k: usize) -> Result<DataMatrix> {
    knn_fill(x, k, Weights::Distance)
}

pub fn mean_impute(x: &DataMatrix) -> Result<DataMatrix> {
    let (n, f) = (x.n_rows(), x.n_cols());
    let means = (0..f)
        .map(|c| {
            let obs: Vec<f64> = (0..n).filter(|&i| !x.is_missing(i, c)).map(|i| x.get(i, c)).collect();
            if obs.is_empty() {
                return Err(invalid(format!("feature {c} has no observed entry")));
            }
            Ok(obs.iter().sum::<f64>() / obs.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let values =
        x.values().iter().zip(x.mask()).enumerate().map(|(p, (&v, &m))| if m { means[p % f] } else { v }).collect();
    x.with_values(values)
}

/// One improvement step for a single row: the masked coordinates become the
/// `alpha`-combination of the row's `k` Chebyshev neighbours in `index`.
pub fn impute_step(
    x_prev: &[f64],
    mask_row: &[bool],
    alpha: &[f64],
    index: &NeighborIndex,
    k: usize,
) -> Result<Vec<f64>> {
    if alpha.len() != k {
        return Err(invalid(format!("alpha has length {}, expected {k}", alpha.len())));
    }
    if mask_row.len() != x_prev.len() {
        return Err(invalid("mask and row lengths differ"));
    }
    let nbrs = index.knn_chebyshev(x_prev, k)?;
    Ok(combine(index, x_prev, mask_row, &nbrs, alpha))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    BudgetExhausted,
    /// `G(a^t, X^{t-1}) <= 0`.
    EarlyStop,
}

/// Per-round record of a run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ImputationTrace {
    pub alphas: Vec<SimplexWeights>,
    pub g_values: Vec<f64>,
    /// Gradient of `G` at each round; the learner saw its negation.
    pub gradients: Vec<Vec<f64>>,
    pub stop_reason: StopReason,
    pub final_t: usize,
    /// `log D(x^0_i)` for every row.
    pub log_density_start: Vec<f64>,
    /// `log D(x^t_i)` for the last computed state, even when the run returns the one before.
    pub log_density_end: Vec<f64>,
    pub bandwidth: f64,
    pub eta: f64,
    pub k: usize,
}

/// Everything needed to replay a run or impute new rows.
#[derive(Clone, Debug)]
pub struct FittedF3i {
    /// Incomplete training data (normalised when the run normalised).
    pub training: DataMatrix,
    /// `X^0`, the reference set.
    pub initial: DataMatrix,
    pub index: NeighborIndex,
    pub alpha: SimplexWeights,
    pub k: usize,
    pub eta: f64,
    pub normalize: bool,
}

#[derive(Clone, Debug)]
pub struct F3iRun {
    pub imputed: DataMatrix,
    pub trace: ImputationTrace,
    pub model: FittedF3i,
}

/// Runs the iterative imputation.
///
/// `X^0` is the uniform KNN imputation and the reference set of every later
/// step. Round `t` plays `a^t` from AdaHedge, builds `X^t` row by row, feeds
/// the learner `-grad G(a^t, X^{t-1})`, and stops once `G(a^t, X^{t-1}) <= 0`.
/// The result is `X^T` when the budget runs out and `X^{t-1}` otherwise.
pub fn f3i_run(x: &DataMatrix, cfg: &Config) -> Result<F3iRun> {
    cfg.validate()?;
    let (work, scales) = if cfg.normalize {
        let (xn, s) = l2_normalize_rows(x);
        (xn, Some(s))
    } else {
        (x.clone(), None)
    };
    let k = cfg.n_neighbors;
    if k > work.n_rows() {
        return Err(invalid(format!("K = {k} exceeds the {} available rows", work.n_rows())));
    }
    let initial = knn_initial_impute(&work, k)?;
    let h = match cfg.bandwidth {
        Some(h) => h,
        None => solve_bandwidth(cfg.s, k, cfg.eta, work.n_rows())?,
    };
    let index = NeighborIndex::build(&initial, h)?;
    let log_density_start: Vec<f64> = initial.rows().map(|r| index.log_density(r)).collect();

    let mut learner = AdaHedge::new(k);
    let mut prev = initial.clone();
    let mut alphas = Vec::new();
    let mut g_values = Vec::new();
    let mut gradients = Vec::new();
    let mut stop_reason = StopReason::BudgetExhausted;
    let mut last = initial.clone();
    for _ in 0..cfg.max_iter {
        let alpha = learner.predict();
        let ctx = ObjectiveContext::new(&index, &index, &prev, k, cfg.eta)?;
        let next = ctx.impute(&alpha);
        let (g, grad) = ctx.value_and_gradient(&alpha)?;
        let loss: Vec<f64> = grad.iter().map(|v| -v).collect();
        learner.update(&loss)?;
        alphas.push(alpha);
        g_values.push(g);
        gradients.push(grad);
        last = next;
        if g <= 0.0 {
            stop_reason = StopReason::EarlyStop;
            break;
        }
        prev = last.clone();
    }
    let log_density_end: Vec<f64> = last.rows().map(|r| index.log_density(r)).collect();
    let chosen = match stop_reason {
        StopReason::BudgetExhausted => last,
        StopReason::EarlyStop => prev,
    };
    let imputed = match &scales {
        Some(s) => denormalize_rows(&chosen, s)?,
        None => chosen,
    };
    let final_t = alphas.len();
    let alpha = alphas.last().cloned().unwrap_or_else(|| SimplexWeights::uniform(k));
    let trace = ImputationTrace {
        alphas,
        g_values,
        gradients,
        stop_reason,
        final_t,
        log_density_start,
        log_density_end,
        bandwidth: h,
        eta: cfg.eta,
        k,
    };
    let model = FittedF3i { training: work, initial, index, alpha, k, eta: cfg.eta, normalize: cfg.normalize };
    Ok(F3iRun { imputed, trace, model })
}

impl FittedF3i {
    /// Rebuilds `X^0, X^1, ..., X^t` from the recorded weights.
    pub fn replay_states(&self, trace: &ImputationTrace) -> Result<Vec<DataMatrix>> {
        let mut states = vec![self.initial.clone()];
        for alpha in &trace.alphas {
            let prev = states.last().expect("non-empty");
            let next = ObjectiveContext::new(&self.index, &self.index, prev, self.k, self.eta)?.impute(alpha);
            states.push(next);
        }
        Ok(states)
    }

    /// Imputes a new row (NaN = missing): initial KNN rule against the
    /// training data, then one improvement step with the final weights.
    pub fn out_of_sample_impute(&self, x_new: &[f64]) -> Result<Vec<f64>> {
        let f = self.training.n_cols();
        if x_new.len() != f {
            return Err(invalid(format!("row has {} features, model has {f}", x_new.len())));
        }
        let mask: Vec<bool> = x_new.iter().map(|v| v.is_nan()).collect();
        if !mask.iter().any(|&m| m) {
            return Ok(x_new.to_vec());
        }
        let mut row = x_new.to_vec();
        let scale = if self.normalize {
            let norm = row.iter().filter(|v| !v.is_nan()).map(|v| v * v).sum::<f64>().sqrt();
            let s = if norm > 0.0 { norm } else { 1.0 };
            row.iter_mut().for_each(|v| *v /= s);
            s
        } else {
            1.0
        };
        let train = &self.training;
        let dist: Vec<f64> =
            (0..train.n_rows()).map(|j| nan_euclidean(&row, &mask, train.row(j), train.row_mask(j))).collect();
        for c in (0..f).filter(|&c| mask[c]) {
            let mut donors: Vec<(f64, usize)> =
                (0..train.n_rows()).filter(|&j| !train.is_missing(j, c)).map(|j| (dist[j], j)).collect();
            if donors.is_empty() {
                return Err(invalid(format!("feature {c} has no observed training value")));
            }
            donors.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            donors.truncate(self.k);
            row[c] = donor_value(&donors, |j| train.get(j, c), Weights::Uniform);
        }
        let mut out = impute_step(&row, &mask, &self.alpha, &self.index, self.k)?;
        out.iter_mut().for_each(|v| *v *= scale);
        Ok(out)
    }
}
