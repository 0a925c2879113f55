//! Error metrics, AUC, bound constants and the regret oracle.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::learner::adahedge_regret_bound;
use crate::matrix::{project_to_simplex, DataMatrix, SimplexWeights};
use crate::objective::ObjectiveContext;

pub fn mse(x_imp: &DataMatrix, x_star: &DataMatrix) -> Result<f64> {
    x_imp.check_same_shape(x_star)?;
    if !x_imp.is_filled() || !x_star.is_filled() {
        return Err(invalid("mse needs two complete matrices"));
    }
    let n = x_imp.values().len() as f64;
    Ok(x_imp.values().iter().zip(x_star.values()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n)
}

pub fn rmse(x_imp: &DataMatrix, x_star: &DataMatrix) -> Result<f64> {
    Ok(mse(x_imp, x_star)?.sqrt())
}

/// Squared error averaged over the missing cells of each row, then over the
/// rows that have at least one missing cell.
pub fn masked_mse(x_imp: &DataMatrix, x_star: &DataMatrix, mask: &[bool]) -> Result<f64> {
    x_imp.check_same_shape(x_star)?;
    if mask.len() != x_imp.values().len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} mask entries", x_imp.values().len()),
            got: mask.len().to_string(),
        });
    }
    let f = x_imp.n_cols();
    let mut total = 0.0;
    let mut rows = 0usize;
    for i in 0..x_imp.n_rows() {
        let cells: Vec<usize> = (0..f).filter(|&c| mask[i * f + c]).collect();
        if cells.is_empty() {
            continue;
        }
        let err: f64 = cells.iter().map(|&c| (x_imp.get(i, c) - x_star.get(i, c)).powi(2)).sum();
        total += err / cells.len() as f64;
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::UndefinedMetric("masked MSE with nothing masked".into()));
    }
    Ok(total / rows as f64)
}

/// Area under the ROC curve from the rank-sum statistic, ties at midranks.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(invalid("scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(invalid("scores contain NaN"));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&p| labels[p] == 1).count() as f64 * mid;
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

/// Scale constants of the high-probability bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub sigma2: f64,
    pub sigma_gsm: f64,
    pub sigma_miss: f64,
    pub c_miss: f64,
    pub delta_t: f64,
    pub adahedge_term: f64,
    pub bound_value: f64,
}

/// `sigma_2 = sigma sqrt(1 + 1/K)`, `sigma_gsm = sigma sqrt((K + 3) / 3K)`
/// and their maximum.
pub fn sigma_miss(sigma: f64, k: usize) -> BoundConstants {
    let kf = k as f64;
    let sigma2 = sigma * (1.0 + 1.0 / kf).sqrt();
    let sigma_gsm = sigma * ((kf + 3.0) / (3.0 * kf)).sqrt();
    BoundConstants {
        sigma2,
        sigma_gsm,
        sigma_miss: sigma2.max(sigma_gsm),
        c_miss: 0.0,
        delta_t: 0.0,
        adahedge_term: 0.0,
        bound_value: 0.0,
    }
}

/// `s^2 F + 2 ln(1/d) (1 + sqrt(1 + 8 s^2 F / ln(1/d)))` with `s = sigma_miss`.
pub fn c_miss(sigma_miss: f64, f: usize, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    let l = (1.0 / delta).ln();
    let v = sigma_miss * sigma_miss * f as f64;
    Ok(v + 2.0 * l * (1.0 + (1.0 + 8.0 * v / l).sqrt()))
}

/// The confidence level used by every bound: `1 / N^3`.
pub fn bound_delta(n: usize) -> f64 {
    (n as f64).powi(-3)
}

/// Largest spread `max_k v_k - min_k v_k` over the recorded vectors.
pub fn max_range(vectors: &[Vec<f64>]) -> f64 {
    vectors
        .iter()
        .map(|v| {
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            hi - lo
        })
        .fold(0.0, f64::max)
}

/// AdaHedge regret term plus `(C_miss / h) t`, with the loss range taken over
/// the recorded gradients.
pub fn regret_bound(
    gradients: &[Vec<f64>],
    h: f64,
    sigma: f64,
    n: usize,
    f: usize,
    k: usize,
) -> Result<BoundConstants> {
    joint_regret_bound(gradients, h, 0.0, sigma, n, f, k)
}

/// As [`regret_bound`] on the learner's joint vectors, linear term scaled by `1 - beta`.
pub fn joint_regret_bound(
    vectors: &[Vec<f64>],
    h: f64,
    beta: f64,
    sigma: f64,
    n: usize,
    f: usize,
    k: usize,
) -> Result<BoundConstants> {
    let t = vectors.len();
    let mut out = sigma_miss(sigma, k);
    let c = c_miss(out.sigma_miss, f, bound_delta(n))?;
    let delta_t = max_range(vectors);
    let adahedge_term = if t == 0 { 0.0 } else { adahedge_regret_bound(delta_t, t, k) };
    let linear = (1.0 - beta) * c / h * t as f64;
    out.c_miss = c;
    out.delta_t = delta_t;
    out.adahedge_term = adahedge_term;
    out.bound_value = adahedge_term + linear;
    Ok(out)
}

/// A differentiable function of the simplex weights.
pub trait Objective {
    fn value(&self, alpha: &[f64]) -> Result<f64>;
    fn gradient(&self, alpha: &[f64]) -> Result<Vec<f64>>;
}

impl Objective for ObjectiveContext<'_> {
    fn value(&self, alpha: &[f64]) -> Result<f64> {
        ObjectiveContext::value(self, alpha)
    }

    fn gradient(&self, alpha: &[f64]) -> Result<Vec<f64>> {
        ObjectiveContext::gradient(self, alpha)
    }
}

/// Sum of one objective per recorded state.
pub struct Summed<T>(pub Vec<T>);

impl<T: Objective> Objective for Summed<T> {
    fn value(&self, alpha: &[f64]) -> Result<f64> {
        self.0.iter().map(|o| o.value(alpha)).sum()
    }

    fn gradient(&self, alpha: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; alpha.len()];
        for o in &self.0 {
            g.iter_mut().zip(o.gradient(alpha)?).for_each(|(a, b)| *a += b);
        }
        Ok(g)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub alpha: SimplexWeights,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

const ORACLE_TOL: f64 = 1e-8;
const ORACLE_MAX_ITER: usize = 10_000;

fn projected_step(alpha: &[f64], g: &[f64], t: f64) -> Result<SimplexWeights> {
    let moved: Vec<f64> = alpha.iter().zip(g).map(|(a, d)| a + t * d).collect();
    project_to_simplex(&moved)
}

/// Maximises a concave objective over the simplex by projected gradient
/// ascent with backtracking. Starts from the best of the uniform weights and
/// `candidates`, so the result never falls below any of them.
pub fn regret_oracle(obj: &dyn Objective, k: usize, candidates: &[SimplexWeights]) -> Result<OracleResult> {
    let mut alpha = SimplexWeights::uniform(k);
    let mut value = obj.value(&alpha)?;
    for c in candidates {
        let v = obj.value(c)?;
        if v > value {
            value = v;
            alpha = c.clone();
        }
    }
    let mut best = (alpha.clone(), value);
    let mut step = f64::NAN;
    for it in 0..ORACLE_MAX_ITER {
        let g = obj.gradient(&alpha)?;
        let unit = projected_step(&alpha, &g, 1.0)?;
        let pg: f64 = unit.iter().zip(alpha.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if pg <= ORACLE_TOL {
            return Ok(finish(best, (alpha, value), true, it));
        }
        if !step.is_finite() {
            step = 1.0 / g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        }
        let mut accepted = false;
        while step > 1e-300 {
            let cand = projected_step(&alpha, &g, step)?;
            let d: Vec<f64> = cand.iter().zip(alpha.iter()).map(|(c, a)| c - a).collect();
            if d.iter().all(|&v| v == 0.0) {
                step *= 0.5;
                continue;
            }
            let dir: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
            let v = obj.value(&cand)?;
            // Near the optimum value differences drown in rounding; for a
            // concave objective a nonnegative slope at the candidate still
            // certifies f(cand) >= f(alpha).
            let sufficient = v >= value + 1e-4 * dir && v >= value;
            let certified = || -> Result<bool> {
                let gc = obj.gradient(&cand)?;
                Ok(gc.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>() >= 0.0)
            };
            if sufficient || certified()? {
                if v > best.1 {
                    best = (cand.clone(), v);
                }
                alpha = cand;
                value = v;
                accepted = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Ok(finish(best, (alpha, value), false, it));
        }
    }
    Ok(finish(best, (alpha, value), false, ORACLE_MAX_ITER))
}

/// Reports the last iterate unless rounding left an earlier one higher.
fn finish(
    best: (SimplexWeights, f64),
    last: (SimplexWeights, f64),
    converged: bool,
    iterations: usize,
) -> OracleResult {
    let (alpha, value) = if best.1 > last.1 { best } else { last };
    OracleResult { alpha, value, converged, iterations }
}

/// `max_a sum_s f_s(a) - sum_s f_s(a^s)` with one objective per recorded state.
pub fn cumulative_regret<T: Objective>(per_state: Summed<T>, alphas: &[SimplexWeights]) -> Result<(f64, OracleResult)> {
    if per_state.0.len() != alphas.len() {
        return Err(invalid("one objective per recorded round is required"));
    }
    let k = alphas.first().map_or(1, |a| a.len());
    let played: f64 = per_state.0.iter().zip(alphas).map(|(o, a)| o.value(a)).sum::<Result<f64>>()?;
    let best = regret_oracle(&per_state, k, alphas)?;
    Ok((best.value - played, best))
}
