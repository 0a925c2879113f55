//! Seeded experiment batches: the MSE bound, the imputation regret bound, the
//! joint regret bound, the noise-level sweep and the planted-blob comparison.
//!
//! Every run derives all of its randomness from its seed, so a batch gives
//! the same records however it is scheduled. Batches run on the current rayon
//! pool and return records sorted by seed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::{bound_delta, c_miss, cumulative_regret, joint_regret_bound, mse, regret_bound, sigma_miss, Summed};
use crate::imputer::f3i_run;
use crate::joint::{
    mean_impute_then_classify, pcgrad_f3i_run, JointConfig, JointObjective, LabelledRows, LossVariant, Split,
};
use crate::matrix::{Config, DataMatrix};
use crate::neighbors::NeighborIndex;
use crate::objective::ObjectiveContext;
use crate::synthgen::{
    apply_mcar, apply_missingness, concat_pairs, generate_complete, make_classification_labels, planted_blobs,
    sample_params, Mechanism, MissingnessSpec,
};

/// Synthetic imputation setting shared by the MSE and regret batches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub n: usize,
    pub f: usize,
    pub k: usize,
    pub sigma: f64,
    pub mechanism: Mechanism,
    pub p_miss: f64,
    pub eta: f64,
    pub max_iter: usize,
    pub bandwidth: Option<f64>,
}

impl Default for Setting {
    fn default() -> Self {
        Self {
            n: 50,
            f: 100,
            k: 5,
            sigma: 0.1,
            mechanism: Mechanism::Mcar,
            p_miss: 0.25,
            eta: 0.001,
            max_iter: 500,
            bandwidth: None,
        }
    }
}

impl Setting {
    pub fn config(&self, seed: u64) -> Config {
        Config {
            n_neighbors: self.k,
            max_iter: self.max_iter,
            eta: self.eta,
            seed,
            bandwidth: self.bandwidth,
            ..Config::default()
        }
    }

    /// `N * C_miss` at confidence `1 / N^3`.
    pub fn scaled_c_miss(&self) -> Result<f64> {
        let s = sigma_miss(self.sigma, self.k).sigma_miss;
        Ok(self.n as f64 * c_miss(s, self.f, bound_delta(self.n))?)
    }

    /// Complete data and its masked copy for one seed.
    pub fn sample(&self, seed: u64) -> Result<(DataMatrix, DataMatrix)> {
        let params = sample_params(self.f, self.sigma, seed)?;
        let complete = generate_complete(self.n, self.f, &params, seed);
        let spec = MissingnessSpec::new(self.mechanism, self.p_miss);
        let masked = apply_missingness(&complete, &params, &spec, seed)?;
        Ok((complete, masked))
    }
}

/// One row of a validation report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub measured: f64,
    pub bound: f64,
    pub satisfied: bool,
    pub t_final: usize,
    /// Whether the regret oracle met its tolerance; always true for MSE runs.
    pub converged: bool,
}

impl RunRecord {
    fn new(seed: u64, measured: f64, bound: f64, t_final: usize, converged: bool) -> Self {
        Self { seed, measured, bound, satisfied: measured <= bound, t_final, converged }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub runs: usize,
    pub satisfied: usize,
    pub mean_measured: f64,
    pub std_measured: f64,
    pub mean_bound: f64,
    pub max_ratio: f64,
}

pub fn summarize(records: &[RunRecord]) -> BatchSummary {
    let n = records.len().max(1) as f64;
    let mean = records.iter().map(|r| r.measured).sum::<f64>() / n;
    let var = records.iter().map(|r| (r.measured - mean).powi(2)).sum::<f64>() / n;
    BatchSummary {
        runs: records.len(),
        satisfied: records.iter().filter(|r| r.satisfied).count(),
        mean_measured: mean,
        std_measured: var.sqrt(),
        mean_bound: records.iter().map(|r| r.bound).sum::<f64>() / n,
        max_ratio: records.iter().map(|r| r.measured / r.bound).fold(f64::NEG_INFINITY, f64::max),
    }
}

fn batch<T: Send>(seeds: &[u64], run: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    seeds.par_iter().map(|&s| run(s)).collect()
}

/// `N F MSE` of the final imputation against `N C_miss`.
pub fn mse_bound_run(setting: &Setting, seed: u64) -> Result<RunRecord> {
    let (complete, masked) = setting.sample(seed)?;
    let run = f3i_run(&masked, &setting.config(seed))?;
    let scaled = (setting.n * setting.f) as f64 * mse(&run.imputed, &complete)?;
    Ok(RunRecord::new(seed, scaled, setting.scaled_c_miss()?, run.trace.final_t, true))
}

pub fn mse_bound_batch(setting: &Setting, seeds: &[u64]) -> Result<Vec<RunRecord>> {
    batch(seeds, |s| mse_bound_run(setting, s))
}

/// Cumulative regret measured with the ground-truth density against the
/// AdaHedge-plus-linear bound.
pub fn regret_bound_run(setting: &Setting, seed: u64) -> Result<RunRecord> {
    let (complete, masked) = setting.sample(seed)?;
    let run = f3i_run(&masked, &setting.config(seed))?;
    let trace = &run.trace;
    let h = trace.bandwidth;
    let truth = NeighborIndex::build(&complete, h)?;
    let states = run.model.replay_states(trace)?;
    let contexts = states[..trace.final_t]
        .iter()
        .map(|x| ObjectiveContext::new(&run.model.index, &truth, x, setting.k, setting.eta))
        .collect::<Result<Vec<_>>>()?;
    let (regret, best) = cumulative_regret(Summed(contexts), &trace.alphas)?;
    let bound = regret_bound(&trace.gradients, h, setting.sigma, setting.n, setting.f, setting.k)?;
    Ok(RunRecord::new(seed, regret, bound.bound_value, trace.final_t, best.converged))
}

pub fn regret_bound_batch(setting: &Setting, seeds: &[u64]) -> Result<Vec<RunRecord>> {
    batch(seeds, |s| regret_bound_run(setting, s))
}

/// Item-user pair classification data for the joint bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSetting {
    pub n_items: usize,
    pub n_users: usize,
    pub item_features: usize,
    pub user_features: usize,
    pub sigma: f64,
    pub p_miss: f64,
    pub k: usize,
    pub eta: f64,
    pub max_iter: usize,
    pub joint: JointConfig,
}

impl Default for JointSetting {
    fn default() -> Self {
        Self {
            n_items: 10,
            n_users: 10,
            item_features: 50,
            user_features: 50,
            sigma: 0.1,
            p_miss: 0.5,
            k: 5,
            eta: 0.001,
            max_iter: 3,
            joint: JointConfig {
                beta: 0.5,
                epochs: 10,
                classifier_lr: 0.01,
                loss_variant: LossVariant::PositiveLogloss,
            },
        }
    }
}

pub struct JointSample {
    pub complete: DataMatrix,
    pub masked: DataMatrix,
    pub labels: Vec<u8>,
}

impl JointSetting {
    /// Every item paired with every user, labelled by 2-means on the pairs.
    pub fn sample(&self, seed: u64) -> Result<JointSample> {
        let item_seed = seed.wrapping_mul(2);
        let user_seed = item_seed.wrapping_add(1);
        let ip = sample_params(self.item_features, self.sigma, item_seed)?;
        let up = sample_params(self.user_features, self.sigma, user_seed)?;
        let items = generate_complete(self.n_items, self.item_features, &ip, item_seed);
        let users = generate_complete(self.n_users, self.user_features, &up, user_seed);
        let pairs: Vec<(usize, usize)> =
            (0..self.n_items).flat_map(|a| (0..self.n_users).map(move |b| (a, b))).collect();
        let labels = make_classification_labels(&items, &users, &pairs, seed)?;
        let complete = concat_pairs(&items, &users, &pairs)?;
        let masked = apply_mcar(&complete, self.p_miss, seed)?;
        Ok(JointSample { complete, masked, labels })
    }

    pub fn config(&self, seed: u64) -> Config {
        Config { n_neighbors: self.k, max_iter: self.max_iter, eta: self.eta, seed, ..Config::default() }
    }
}

/// Regret of the last epoch's weights on the joint objective (ground-truth
/// density, classifier held during that epoch) against the joint bound.
pub fn joint_bound_run(setting: &JointSetting, seed: u64) -> Result<RunRecord> {
    let sample = setting.sample(seed)?;
    let n = sample.masked.n_rows();
    let split = Split::all(n);
    let run = pcgrad_f3i_run(&sample.masked, &sample.labels, &split, &setting.config(seed), &setting.joint)?;
    let last = run.epochs.last().expect("at least one epoch");
    let h = run.index.bandwidth();
    let truth = NeighborIndex::build(&sample.complete, h)?;
    let states = run.last_epoch_states(setting.k, setting.eta)?;
    let t = last.alphas.len();
    let objectives = states[..t]
        .iter()
        .map(|x| {
            Ok(JointObjective {
                ctx: ObjectiveContext::new(&run.index, &truth, x, setting.k, setting.eta)?,
                clf: &last.classifier,
                data: LabelledRows { rows: &split.train, labels: &sample.labels },
                beta: setting.joint.beta,
                variant: setting.joint.loss_variant,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (regret, best) = cumulative_regret(Summed(objectives), &last.alphas)?;
    let bound = joint_regret_bound(
        &last.learner_vectors,
        h,
        setting.joint.beta,
        setting.sigma,
        n,
        sample.complete.n_cols(),
        setting.k,
    )?;
    Ok(RunRecord::new(seed, regret, bound.bound_value, t, best.converged))
}

pub fn joint_bound_batch(setting: &JointSetting, seeds: &[u64]) -> Result<Vec<RunRecord>> {
    batch(seeds, |s| joint_bound_run(setting, s))
}

/// Mean `N F MSE` for one noise level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub sigma: f64,
    pub mean_scaled_mse: f64,
}

/// The noise levels of the bound table.
pub const SIGMA_GRID: [f64; 6] = [0.01, 0.1, 0.15, 0.2, 0.25, 0.5];

pub fn sigma_sweep(base: &Setting, sigmas: &[f64], seeds: &[u64]) -> Result<Vec<SweepPoint>> {
    sigmas
        .iter()
        .map(|&sigma| {
            let setting = Setting { sigma, ..base.clone() };
            let recs = mse_bound_batch(&setting, seeds)?;
            Ok(SweepPoint { sigma, mean_scaled_mse: summarize(&recs).mean_measured })
        })
        .collect()
}

/// Coefficient of determination of the least-squares line through `(x, y)`.
pub fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    sxy * sxy / (sxx * syy)
}

/// Planted two-blob classification with MCAR cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobSetting {
    pub n: usize,
    pub f: usize,
    pub sigma: f64,
    /// Distance between the blob centres in units of `sigma`.
    pub separation: f64,
    pub p_miss: f64,
    pub train: f64,
    pub validation: f64,
    pub k: usize,
    pub eta: f64,
    pub max_iter: usize,
    pub joint: JointConfig,
}

impl Default for BlobSetting {
    fn default() -> Self {
        Self {
            n: 200,
            f: 10,
            sigma: 1.0,
            separation: 10.0,
            p_miss: 0.25,
            train: 0.7,
            validation: 0.2,
            k: 5,
            eta: 0.001,
            max_iter: 20,
            joint: JointConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobRecord {
    pub seed: u64,
    pub f3i_auc: f64,
    pub baseline_auc: f64,
}

pub fn blob_run(setting: &BlobSetting, seed: u64) -> Result<BlobRecord> {
    let (complete, labels) =
        planted_blobs(setting.n, setting.f, setting.sigma, setting.separation * setting.sigma, seed)?;
    let masked = apply_mcar(&complete, setting.p_miss, seed)?;
    let split = Split::random(setting.n, setting.train, setting.validation, seed)?;
    let cfg =
        Config { n_neighbors: setting.k, max_iter: setting.max_iter, eta: setting.eta, seed, ..Config::default() };
    let run = pcgrad_f3i_run(&masked, &labels, &split, &cfg, &setting.joint)?;
    let f3i_auc = run.epochs.last().and_then(|e| e.test_auc).unwrap_or(f64::NAN);
    let (_, baseline) = mean_impute_then_classify(&masked, &labels, &split, &setting.joint)?;
    Ok(BlobRecord { seed, f3i_auc, baseline_auc: baseline.unwrap_or(f64::NAN) })
}

pub fn blob_batch(setting: &BlobSetting, seeds: &[u64]) -> Result<Vec<BlobRecord>> {
    batch(seeds, |s| blob_run(setting, s))
}
