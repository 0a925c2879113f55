//! Joint imputation and binary classification.
//!
//! A sigmoid classifier is trained on the imputed matrix while the imputation
//! learner receives a mix of the density-objective gradient and the
//! classification-loss gradient, de-conflicted by projecting each onto the
//! normal plane of the other when they disagree.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::eval::{auc, Objective};
use crate::imputer::{knn_initial_impute, mean_impute, StopReason};
use crate::learner::AdaHedge;
use crate::matrix::{Config, DataMatrix, SimplexWeights};
use crate::neighbors::NeighborIndex;
use crate::objective::{combine, solve_bandwidth, ObjectiveContext};
use crate::rng::stream;

const PROB_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// `-y log C(x)`; rows labelled 0 contribute nothing.
    PositiveLogloss,
    /// Binary cross-entropy.
    FullBce,
}

/// `C(x) = 1 / (1 + exp(-(omega . x + bias)))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmoidClassifier {
    pub omega: Vec<f64>,
    pub bias: f64,
}

fn log_sigmoid(z: f64) -> f64 {
    // log(1 / (1 + e^-z)) = -softplus(-z)
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl SigmoidClassifier {
    pub fn zeros(f: usize) -> Self {
        Self { omega: vec![0.0; f], bias: 0.0 }
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.omega.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    /// Derivative of the loss with respect to the logit.
    fn dloss_dlogit(&self, x: &[f64], y: u8, variant: LossVariant) -> f64 {
        let p = self.predict_proba(x);
        let y = y as f64;
        match variant {
            LossVariant::PositiveLogloss => -y * (1.0 - p),
            LossVariant::FullBce => p - y,
        }
    }
}

pub fn logloss(clf: &SigmoidClassifier, x: &[f64], y: u8, variant: LossVariant) -> f64 {
    let z = clf.logit(x);
    let (lo, hi) = (PROB_CLAMP.ln(), (-PROB_CLAMP).ln_1p());
    let log_p = log_sigmoid(z).clamp(lo, hi);
    let log_q = log_sigmoid(-z).clamp(lo, hi);
    let y = y as f64;
    match variant {
        LossVariant::PositiveLogloss => -y * log_p,
        LossVariant::FullBce => -y * log_p - (1.0 - y) * log_q,
    }
}

/// Gradient in the weights of the loss at the improved row `x_prev(alpha)`:
/// `dl/dz * omega' Z~`, with `Z~` the masked neighbour columns.
#[allow(clippy::too_many_arguments)]
pub fn grad_loss_alpha(
    clf: &SigmoidClassifier,
    x_prev: &[f64],
    mask_row: &[bool],
    alpha: &[f64],
    index: &NeighborIndex,
    k: usize,
    y: u8,
    variant: LossVariant,
) -> Result<Vec<f64>> {
    let nbrs = index.knn_chebyshev(x_prev, k)?;
    Ok(grad_loss_alpha_with(clf, x_prev, mask_row, alpha, index, &nbrs, y, variant))
}

#[allow(clippy::too_many_arguments)]
fn grad_loss_alpha_with(
    clf: &SigmoidClassifier,
    x_prev: &[f64],
    mask_row: &[bool],
    alpha: &[f64],
    index: &NeighborIndex,
    nbrs: &[usize],
    y: u8,
    variant: LossVariant,
) -> Vec<f64> {
    let xa = combine(index, x_prev, mask_row, nbrs, alpha);
    let s = clf.dloss_dlogit(&xa, y, variant);
    nbrs.iter()
        .map(|&n| {
            let z = index.point(n);
            s * (0..z.len()).filter(|&f| mask_row[f]).map(|f| clf.omega[f] * z[f]).sum::<f64>()
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient surgery over any number of tasks: each gradient, visiting the
/// others in random order, drops its component along any original gradient
/// it conflicts with.
pub fn pcgrad(grads: &[Vec<f64>], rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut out = grads.to_vec();
    for (i, gi) in out.iter_mut().enumerate() {
        let mut order: Vec<usize> = (0..grads.len()).filter(|&j| j != i).collect();
        order.shuffle(rng);
        for j in order {
            let gj = &grads[j];
            let d = dot(gi, gj);
            let nn = dot(gj, gj);
            if d < 0.0 && nn > 0.0 {
                gi.iter_mut().zip(gj).for_each(|(a, b)| *a -= d / nn * b);
            }
        }
    }
    out
}

pub fn pcgrad_pair(g1: &[f64], g2: &[f64], seed: u64) -> (Vec<f64>, Vec<f64>) {
    pcgrad_pair_with(g1, g2, &mut stream(seed, 8))
}

fn pcgrad_pair_with(g1: &[f64], g2: &[f64], rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
    // one coin for the task order; with two tasks the result does not depend on it
    let _first: bool = rng.gen();
    let mut out = pcgrad(&[g1.to_vec(), g2.to_vec()], rng).into_iter();
    (out.next().expect("two tasks"), out.next().expect("two tasks"))
}

/// Labelled rows and their classes.
#[derive(Clone, Debug)]
pub struct LabelledRows<'a> {
    pub rows: &'a [usize],
    pub labels: &'a [u8],
}

/// Mean classification-loss gradient over the labelled rows.
fn mean_loss_gradient(
    ctx: &ObjectiveContext<'_>,
    clf: &SigmoidClassifier,
    alpha: &[f64],
    data: &LabelledRows<'_>,
    variant: LossVariant,
) -> Vec<f64> {
    let x = ctx.state();
    let mut g = vec![0.0; ctx.k()];
    for &i in data.rows {
        let gi = grad_loss_alpha_with(
            clf,
            x.row(i),
            x.row_mask(i),
            alpha,
            ctx.reference(),
            ctx.neighbors(i),
            data.labels[i],
            variant,
        );
        g.iter_mut().zip(&gi).for_each(|(a, b)| *a += b);
    }
    let n = data.rows.len().max(1) as f64;
    g.iter_mut().for_each(|v| *v /= n);
    g
}

/// The learner's ascent direction `(1 - beta) grad G^PC - beta grad l^PC`.
///
/// Both task gradients are oriented as ascent directions (`grad G` and
/// `-grad l`) before surgery, so that "conflict" means the two objectives
/// pull the weights in opposite directions.
pub fn pcgrad_learner_loss(
    ctx: &ObjectiveContext<'_>,
    clf: &SigmoidClassifier,
    alpha: &[f64],
    data: &LabelledRows<'_>,
    beta: f64,
    variant: LossVariant,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let g_obj = ctx.gradient(alpha)?;
    if beta == 0.0 {
        return Ok(g_obj);
    }
    let g_loss = mean_loss_gradient(ctx, clf, alpha, data, variant);
    if beta == 1.0 {
        return Ok(g_loss.iter().map(|v| -v).collect());
    }
    let ascent_loss: Vec<f64> = g_loss.iter().map(|v| -v).collect();
    let (a, b) = pcgrad_pair_with(&g_obj, &ascent_loss, rng);
    Ok(a.iter().zip(&b).map(|(a, b)| (1.0 - beta) * a + beta * b).collect())
}

/// `(1 - beta) G(a, X) - (beta / n) sum_i l(x_i(a))` over the labelled rows,
/// the objective of joint training. With `density` on the ground truth this
/// is the regret objective of the joint bound.
pub struct JointObjective<'a> {
    pub ctx: ObjectiveContext<'a>,
    pub clf: &'a SigmoidClassifier,
    pub data: LabelledRows<'a>,
    pub beta: f64,
    pub variant: LossVariant,
}

impl JointObjective<'_> {
    fn mean_loss(&self, alpha: &[f64]) -> f64 {
        let total: f64 = self
            .data
            .rows
            .iter()
            .map(|&i| logloss(self.clf, &self.ctx.impute_row(i, alpha), self.data.labels[i], self.variant))
            .sum();
        total / self.data.rows.len().max(1) as f64
    }

    /// Improvement over leaving `X` as it is; the joint early-stop test.
    pub fn improvement(&self, g_value: f64, alpha: &[f64]) -> f64 {
        if self.beta == 0.0 {
            return g_value;
        }
        let x = self.ctx.state();
        let before: f64 =
            self.data.rows.iter().map(|&i| logloss(self.clf, x.row(i), self.data.labels[i], self.variant)).sum::<f64>()
                / self.data.rows.len().max(1) as f64;
        (1.0 - self.beta) * g_value - self.beta * (self.mean_loss(alpha) - before)
    }
}

impl Objective for JointObjective<'_> {
    fn value(&self, alpha: &[f64]) -> Result<f64> {
        Ok((1.0 - self.beta) * self.ctx.value(alpha)? - self.beta * self.mean_loss(alpha))
    }

    fn gradient(&self, alpha: &[f64]) -> Result<Vec<f64>> {
        let g = self.ctx.gradient(alpha)?;
        let gl = mean_loss_gradient(&self.ctx, self.clf, alpha, &self.data, self.variant);
        Ok(g.iter().zip(&gl).map(|(a, b)| (1.0 - self.beta) * a - self.beta * b).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointConfig {
    pub beta: f64,
    pub epochs: usize,
    pub classifier_lr: f64,
    pub loss_variant: LossVariant,
}

impl Default for JointConfig {
    fn default() -> Self {
        Self { beta: 0.5, epochs: 10, classifier_lr: 0.01, loss_variant: LossVariant::FullBce }
    }
}

impl JointConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(invalid("beta must lie in [0, 1]"));
        }
        if self.epochs == 0 {
            return Err(invalid("epochs must be positive"));
        }
        if !(self.classifier_lr > 0.0 && self.classifier_lr.is_finite()) {
            return Err(invalid("classifier learning rate must be positive"));
        }
        Ok(())
    }
}

/// Rows used to fit the classifier and rows held out for AUC.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Every row trains; nothing is held out.
    pub fn all(n: usize) -> Self {
        Self { train: (0..n).collect(), test: Vec::new() }
    }

    /// Shuffled train/validation/test split; train and validation both fit
    /// the classifier, test only scores it.
    pub fn random(n: usize, train: f64, validation: f64, seed: u64) -> Result<Self> {
        if !(train > 0.0 && validation >= 0.0 && train + validation < 1.0) {
            return Err(invalid("split fractions must leave a nonempty test share"));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut stream(seed, 9));
        let n_fit = ((train + validation) * n as f64).round() as usize;
        let n_fit = n_fit.clamp(1, n.saturating_sub(1));
        let mut fit = idx[..n_fit].to_vec();
        let mut test = idx[n_fit..].to_vec();
        fit.sort_unstable();
        test.sort_unstable();
        Ok(Self { train: fit, test })
    }
}

/// Imputation rounds of one epoch.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochTrace {
    pub alphas: Vec<SimplexWeights>,
    /// Ascent directions handed to the learner (it saw their negation).
    pub learner_vectors: Vec<Vec<f64>>,
    pub g_values: Vec<f64>,
    pub improvements: Vec<f64>,
    pub stop_reason: StopReason,
    /// Classifier held fixed during the epoch's imputation.
    pub classifier: SigmoidClassifier,
    pub test_auc: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct JointRun {
    pub imputed: DataMatrix,
    pub classifier: SigmoidClassifier,
    pub epochs: Vec<EpochTrace>,
    /// `X^0`, the reference set.
    pub initial: DataMatrix,
    pub index: NeighborIndex,
}

impl JointRun {
    /// `X^0, ..., X^t` of the last epoch.
    pub fn last_epoch_states(&self, k: usize, eta: f64) -> Result<Vec<DataMatrix>> {
        let last = self.epochs.last().expect("at least one epoch");
        let mut states = vec![self.initial.clone()];
        for alpha in &last.alphas {
            let prev = states.last().expect("non-empty");
            let next = ObjectiveContext::new(&self.index, &self.index, prev, k, eta)?.impute(alpha);
            states.push(next);
        }
        Ok(states)
    }
}

fn check_labels(labels: &[u8], rows: &[usize]) -> Result<()> {
    if labels.iter().any(|&y| y > 1) {
        return Err(invalid("labels must be 0 or 1"));
    }
    let ones = rows.iter().filter(|&&i| labels[i] == 1).count();
    if ones == 0 || ones == rows.len() {
        return Err(Error::DegenerateLabels("training rows hold a single class".into()));
    }
    Ok(())
}

fn check_split(split: &Split, n: usize) -> Result<()> {
    if split.train.iter().chain(&split.test).any(|&i| i >= n) {
        return Err(invalid("split refers to rows that do not exist"));
    }
    if split.train.iter().any(|i| split.test.contains(i)) {
        return Err(invalid("train and test rows overlap"));
    }
    Ok(())
}

/// One full-batch gradient step on the rows in `rows`.
pub fn classifier_step(
    clf: &mut SigmoidClassifier,
    x: &DataMatrix,
    labels: &[u8],
    rows: &[usize],
    lr: f64,
    variant: LossVariant,
) {
    let mut g = vec![0.0; clf.omega.len()];
    let mut gb = 0.0;
    for &i in rows {
        let s = clf.dloss_dlogit(x.row(i), labels[i], variant);
        g.iter_mut().zip(x.row(i)).for_each(|(a, v)| *a += s * v);
        gb += s;
    }
    let n = rows.len().max(1) as f64;
    clf.omega.iter_mut().zip(&g).for_each(|(w, gi)| *w -= lr * gi / n);
    clf.bias -= lr * gb / n;
}

fn test_auc(clf: &SigmoidClassifier, x: &DataMatrix, labels: &[u8], test: &[usize]) -> Option<f64> {
    if test.is_empty() {
        return None;
    }
    let scores: Vec<f64> = test.iter().map(|&i| clf.logit(x.row(i))).collect();
    let ys: Vec<u8> = test.iter().map(|&i| labels[i]).collect();
    auc(&scores, &ys).ok()
}

/// Alternates, per epoch, a full imputation pass at fixed classifier
/// parameters with one gradient step of the classifier on the result.
///
/// Every epoch restarts the imputation from `X^0` with a fresh learner, so
/// with `beta = 0` each epoch reproduces [`crate::imputer::f3i_run`].
pub fn pcgrad_f3i_run(
    x: &DataMatrix,
    labels: &[u8],
    split: &Split,
    cfg: &Config,
    jcfg: &JointConfig,
) -> Result<JointRun> {
    cfg.validate()?;
    jcfg.validate()?;
    if cfg.normalize {
        return Err(invalid("joint training does not normalise rows"));
    }
    if labels.len() != x.n_rows() {
        return Err(invalid(format!("{} labels for {} rows", labels.len(), x.n_rows())));
    }
    check_split(split, x.n_rows())?;
    check_labels(labels, &split.train)?;
    let k = cfg.n_neighbors;
    let initial = knn_initial_impute(x, k)?;
    let h = match cfg.bandwidth {
        Some(h) => h,
        None => solve_bandwidth(cfg.s, k, cfg.eta, x.n_rows())?,
    };
    let index = NeighborIndex::build(&initial, h)?;
    let data = LabelledRows { rows: &split.train, labels };
    let mut rng = stream(cfg.seed, 10);
    let mut clf = SigmoidClassifier::zeros(x.n_cols());
    let mut epochs = Vec::with_capacity(jcfg.epochs);
    let mut imputed = initial.clone();

    for _ in 0..jcfg.epochs {
        let mut learner = AdaHedge::new(k);
        let mut prev = initial.clone();
        let mut last = initial.clone();
        let mut trace = EpochTrace {
            alphas: Vec::new(),
            learner_vectors: Vec::new(),
            g_values: Vec::new(),
            improvements: Vec::new(),
            stop_reason: StopReason::BudgetExhausted,
            classifier: clf.clone(),
            test_auc: None,
        };
        for _ in 0..cfg.max_iter {
            let alpha = learner.predict();
            let ctx = ObjectiveContext::new(&index, &index, &prev, k, cfg.eta)?;
            let next = ctx.impute(&alpha);
            let (g, grad) = ctx.value_and_gradient(&alpha)?;
            let vector = if jcfg.beta == 0.0 {
                grad
            } else {
                pcgrad_learner_loss(&ctx, &clf, &alpha, &data, jcfg.beta, jcfg.loss_variant, &mut rng)?
            };
            learner.update(&vector.iter().map(|v| -v).collect::<Vec<_>>())?;
            let joint =
                JointObjective { ctx, clf: &clf, data: data.clone(), beta: jcfg.beta, variant: jcfg.loss_variant };
            let improvement = joint.improvement(g, &alpha);
            trace.alphas.push(alpha);
            trace.learner_vectors.push(vector);
            trace.g_values.push(g);
            trace.improvements.push(improvement);
            last = next;
            if improvement <= 0.0 {
                trace.stop_reason = StopReason::EarlyStop;
                break;
            }
            prev = last.clone();
        }
        imputed = match trace.stop_reason {
            StopReason::BudgetExhausted => last,
            StopReason::EarlyStop => prev,
        };
        classifier_step(&mut clf, &imputed, labels, &split.train, jcfg.classifier_lr, jcfg.loss_variant);
        trace.test_auc = test_auc(&clf, &imputed, labels, &split.test);
        epochs.push(trace);
    }
    Ok(JointRun { imputed, classifier: clf, epochs, initial, index })
}

/// Baseline: mean imputation, then the same classifier schedule.
pub fn mean_impute_then_classify(
    x: &DataMatrix,
    labels: &[u8],
    split: &Split,
    jcfg: &JointConfig,
) -> Result<(SigmoidClassifier, Option<f64>)> {
    jcfg.validate()?;
    check_split(split, x.n_rows())?;
    check_labels(labels, &split.train)?;
    let imputed = mean_impute(x)?;
    let mut clf = SigmoidClassifier::zeros(x.n_cols());
    for _ in 0..jcfg.epochs {
        classifier_step(&mut clf, &imputed, labels, &split.train, jcfg.classifier_lr, jcfg.loss_variant);
    }
    let score = test_auc(&clf, &imputed, labels, &split.test);
    Ok((clf, score))
}
