//! Synthetic Gaussian data, missingness mechanisms and cluster labels.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::matrix::{DataMatrix, GaussianParams};
use crate::neighbors::sq_dist;
use crate::rng::{stream, Rng as ChaCha};

const RESAMPLE_ATTEMPTS: usize = 100;
const MIN_OBSERVED: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mechanism {
    Mcar,
    MarLogistic,
    MnarGsm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissingnessSpec {
    pub mechanism: Mechanism,
    pub p_miss: f64,
    /// Fraction of features that are never masked (MAR only).
    pub f_obs_fraction: f64,
    /// Clip range for the self-masking amplitude `K_f` (MNAR only).
    pub kf_clip: (f64, f64),
}

impl MissingnessSpec {
    pub fn new(mechanism: Mechanism, p_miss: f64) -> Self {
        Self { mechanism, p_miss, f_obs_fraction: 0.3, kf_clip: (0.01, 0.99) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_miss > 0.0 && self.p_miss < 1.0) {
            return Err(invalid(format!("p_miss must lie in (0, 1), got {}", self.p_miss)));
        }
        if !(self.f_obs_fraction > 0.0 && self.f_obs_fraction < 1.0) {
            return Err(invalid("f_obs_fraction must lie in (0, 1)"));
        }
        let (lo, hi) = self.kf_clip;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(invalid("kf_clip must be an interval inside [0, 1]"));
        }
        Ok(())
    }
}

/// `mu ~ N(0, sigma^2 I)`.
pub fn sample_params(f: usize, sigma: f64, seed: u64) -> Result<GaussianParams> {
    let mut rng = stream(seed, 1);
    let mu = (0..f).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect();
    GaussianParams::new(mu, sigma)
}

/// `x_if ~ N(mu_f, sigma^2)` i.i.d., nothing missing.
pub fn generate_complete(n: usize, f: usize, params: &GaussianParams, seed: u64) -> DataMatrix {
    assert_eq!(params.mu.len(), f, "mu has the wrong length");
    let mut rng = stream(seed, 2);
    let values = (0..n * f).map(|c| params.mu[c % f] + params.sigma * rng.sample::<f64, _>(StandardNormal)).collect();
    DataMatrix::complete(n, f, values).expect("generated values are finite")
}

/// Masks cell `(i, f)` with probability `prob[i * F + f]`, redrawing a column
/// whenever it would keep fewer than two observed cells.
fn mask_with_probabilities(x: &DataMatrix, prob: &[f64], rng: &mut ChaCha) -> Result<DataMatrix> {
    let (n, f) = (x.n_rows(), x.n_cols());
    let mut extra = vec![false; n * f];
    for col in 0..f {
        let already = x.observed_in_column(col);
        let mut accepted = false;
        for _ in 0..RESAMPLE_ATTEMPTS {
            let mut newly = 0;
            for i in 0..n {
                let c = i * f + col;
                let draw: f64 = rng.gen();
                extra[c] = !x.is_missing(i, col) && draw < prob[c];
                newly += extra[c] as usize;
            }
            if newly == 0 || already - newly >= MIN_OBSERVED {
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(Error::GenerationFailure(format!(
                "feature {col} kept fewer than {MIN_OBSERVED} observed cells after {RESAMPLE_ATTEMPTS} draws"
            )));
        }
    }
    x.with_extra_mask(&extra)
}

pub fn apply_mcar(x: &DataMatrix, p_miss: f64, seed: u64) -> Result<DataMatrix> {
    if !(0.0..=1.0).contains(&p_miss) {
        return Err(invalid(format!("p_miss must lie in [0, 1], got {p_miss}")));
    }
    let prob = vec![p_miss; x.values().len()];
    mask_with_probabilities(x, &prob, &mut stream(seed, 3))
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Intercept `b` with `mean_i sigmoid(latent_i + b) = p`.
fn calibrate_intercept(latent: &[f64], p: f64) -> f64 {
    let rate = |b: f64| latent.iter().map(|z| sigmoid(z + b)).sum::<f64>() / latent.len() as f64;
    let (mut lo, mut hi) = (-1.0, 1.0);
    while rate(lo) > p {
        lo *= 2.0;
    }
    while rate(hi) < p {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let r = rate(mid);
        if (r - p).abs() <= 1e-10 {
            return mid;
        }
        if r < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Logistic MAR: a random `floor(f_obs_fraction * F)` features stay observed
/// and drive the masking of the others through a calibrated logistic model.
pub fn apply_mar_logistic(x: &DataMatrix, spec: &MissingnessSpec, seed: u64) -> Result<DataMatrix> {
    spec.validate()?;
    if x.has_missing() {
        return Err(invalid("MAR masking expects a complete matrix"));
    }
    let (n, f) = (x.n_rows(), x.n_cols());
    let n_obs = (spec.f_obs_fraction * f as f64).floor() as usize;
    if n_obs == 0 || n_obs >= f {
        return Err(invalid(format!("{n_obs} always-observed features out of {f} leaves nothing to model")));
    }
    let mut rng = stream(seed, 4);
    let observed = sample(&mut rng, f, n_obs).into_vec();
    let mut is_obs = vec![false; f];
    observed.iter().for_each(|&c| is_obs[c] = true);

    let mut prob = vec![0.0; n * f];
    for col in (0..f).filter(|&c| !is_obs[c]) {
        let w: Vec<f64> = (0..n_obs).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut latent: Vec<f64> =
            (0..n).map(|i| observed.iter().zip(&w).map(|(&c, wc)| x.get(i, c) * wc).sum()).collect();
        let mean = latent.iter().sum::<f64>() / n as f64;
        let sd = (latent.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        if sd > 0.0 && sd.is_finite() {
            latent.iter_mut().for_each(|z| *z /= sd);
        } else {
            latent.iter_mut().for_each(|z| *z = 0.0);
        }
        let b = calibrate_intercept(&latent, spec.p_miss);
        for i in 0..n {
            prob[i * f + col] = sigmoid(latent[i] + b);
        }
    }
    mask_with_probabilities(x, &prob, &mut rng)
}

/// Gaussian self-masking: `P(missing) = K_f exp(-(x - mu_f)^2 / sigma^2)`.
pub fn apply_mnar_gsm(
    x: &DataMatrix,
    params: &GaussianParams,
    spec: &MissingnessSpec,
    seed: u64,
) -> Result<DataMatrix> {
    spec.validate()?;
    let (n, f) = (x.n_rows(), x.n_cols());
    if params.mu.len() != f {
        return Err(invalid("mu length differs from the feature count"));
    }
    if params.sigma <= 0.0 {
        return Err(invalid("self-masking needs sigma > 0"));
    }
    let mut rng = stream(seed, 5);
    let kf = gsm_amplitudes(f, spec, &mut rng);
    let s2 = params.sigma * params.sigma;
    let mut prob = vec![0.0; n * f];
    for i in 0..n {
        for c in 0..f {
            if !x.is_missing(i, c) {
                prob[i * f + c] = kf[c] * (-(x.get(i, c) - params.mu[c]).powi(2) / s2).exp();
            }
        }
    }
    mask_with_probabilities(x, &prob, &mut rng)
}

/// `K_f ~ N((3.5/3) p (1 - p), 0.1)` clipped to `kf_clip`; 0.1 is the standard deviation.
pub fn gsm_amplitudes(f: usize, spec: &MissingnessSpec, rng: &mut impl Rng) -> Vec<f64> {
    let p = spec.p_miss;
    let normal = Normal::new(3.5 / 3.0 * p * (1.0 - p), 0.1).expect("valid normal");
    (0..f).map(|_| normal.sample(rng).clamp(spec.kf_clip.0, spec.kf_clip.1)).collect()
}

/// Dispatches on the mechanism; `params` is only read by self-masking.
pub fn apply_missingness(
    x: &DataMatrix,
    params: &GaussianParams,
    spec: &MissingnessSpec,
    seed: u64,
) -> Result<DataMatrix> {
    match spec.mechanism {
        Mechanism::Mcar => {
            spec.validate()?;
            apply_mcar(x, spec.p_miss, seed)
        }
        Mechanism::MarLogistic => apply_mar_logistic(x, spec, seed),
        Mechanism::MnarGsm => apply_mnar_gsm(x, params, spec, seed),
    }
}

/// Two-cluster K-means++ (10 restarts, at most 100 Lloyd iterations, tolerance 1e-8).
pub fn kmeans2(points: &DataMatrix, seed: u64) -> Result<Vec<u8>> {
    if points.has_missing() {
        return Err(invalid("clustering needs complete vectors"));
    }
    let n = points.n_rows();
    let distinct = (1..n).any(|i| points.row(i) != points.row(0));
    if !distinct {
        return Err(Error::DegenerateClustering("fewer than two distinct vectors".into()));
    }
    let mut rng = stream(seed, 6);
    let mut best: Option<(f64, Vec<u8>)> = None;
    for _ in 0..10 {
        let (inertia, labels) = lloyd(points, seed_centers(points, &mut rng));
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, labels));
        }
    }
    let mut labels = best.expect("ten restarts").1;
    if labels[0] == 1 {
        labels.iter_mut().for_each(|l| *l = 1 - *l);
    }
    Ok(labels)
}

fn seed_centers(points: &DataMatrix, rng: &mut ChaCha) -> [Vec<f64>; 2] {
    let n = points.n_rows();
    let first = points.row(rng.gen_range(0..n)).to_vec();
    let d2: Vec<f64> = points.rows().map(|r| sq_dist(r, &first)).collect();
    let total: f64 = d2.iter().sum();
    let mut target = rng.gen::<f64>() * total;
    let mut pick = n - 1;
    for (i, d) in d2.iter().enumerate() {
        if *d > 0.0 && target < *d {
            pick = i;
            break;
        }
        target -= d;
    }
    if d2[pick] == 0.0 {
        pick = d2.iter().position(|&d| d > 0.0).expect("two distinct points");
    }
    [first, points.row(pick).to_vec()]
}

fn lloyd(points: &DataMatrix, mut centers: [Vec<f64>; 2]) -> (f64, Vec<u8>) {
    let f = points.n_cols();
    let mut labels = vec![0u8; points.n_rows()];
    for _ in 0..100 {
        for (l, r) in labels.iter_mut().zip(points.rows()) {
            *l = (sq_dist(r, &centers[1]) < sq_dist(r, &centers[0])) as u8;
        }
        let mut shift = 0.0;
        for c in 0..2u8 {
            let members: Vec<&[f64]> = points.rows().zip(&labels).filter(|(_, &l)| l == c).map(|(r, _)| r).collect();
            if members.is_empty() {
                continue;
            }
            let mut mean = vec![0.0; f];
            for r in &members {
                mean.iter_mut().zip(*r).for_each(|(m, v)| *m += v);
            }
            mean.iter_mut().for_each(|m| *m /= members.len() as f64);
            shift += sq_dist(&mean, &centers[c as usize]);
            centers[c as usize] = mean;
        }
        if shift <= 1e-8 {
            break;
        }
    }
    for (l, r) in labels.iter_mut().zip(points.rows()) {
        *l = (sq_dist(r, &centers[1]) < sq_dist(r, &centers[0])) as u8;
    }
    let inertia = points.rows().zip(&labels).map(|(r, &l)| sq_dist(r, &centers[l as usize])).sum();
    (inertia, labels)
}

/// Labels `(item, user)` pairs by clustering their concatenated feature vectors.
pub fn make_classification_labels(
    items: &DataMatrix,
    users: &DataMatrix,
    pairs: &[(usize, usize)],
    seed: u64,
) -> Result<Vec<u8>> {
    let joined = concat_pairs(items, users, pairs)?;
    kmeans2(&joined, seed)
}

/// Row `p` is `[items[pairs[p].0], users[pairs[p].1]]`.
pub fn concat_pairs(items: &DataMatrix, users: &DataMatrix, pairs: &[(usize, usize)]) -> Result<DataMatrix> {
    if items.has_missing() || users.has_missing() {
        return Err(invalid("item and user matrices must be complete"));
    }
    let mut values = Vec::with_capacity(pairs.len() * (items.n_cols() + users.n_cols()));
    for &(a, b) in pairs {
        if a >= items.n_rows() || b >= users.n_rows() {
            return Err(invalid(format!("pair ({a}, {b}) is out of range")));
        }
        values.extend_from_slice(items.row(a));
        values.extend_from_slice(users.row(b));
    }
    DataMatrix::complete(pairs.len(), items.n_cols() + users.n_cols(), values)
}

/// Two Gaussian blobs whose centres are `separation` apart along a random
/// direction; labels are balanced and shuffled.
pub fn planted_blobs(n: usize, f: usize, sigma: f64, separation: f64, seed: u64) -> Result<(DataMatrix, Vec<u8>)> {
    if n < 2 {
        return Err(invalid("need at least two rows"));
    }
    let mut rng = stream(seed, 7);
    let mut dir: Vec<f64> = (0..f).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|d| *d /= norm);
    let mut labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    rand::seq::SliceRandom::shuffle(&mut labels[..], &mut rng);
    let mut values = Vec::with_capacity(n * f);
    for &y in &labels {
        let side = if y == 1 { 0.5 } else { -0.5 };
        for d in &dir {
            values.push(side * separation * d + sigma * rng.sample::<f64, _>(StandardNormal));
        }
    }
    Ok((DataMatrix::complete(n, f, values)?, labels))
}
