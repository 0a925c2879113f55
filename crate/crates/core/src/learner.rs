//! AdaHedge: exponential weights whose learning rate is `ln K / Delta`, where
//! `Delta` accumulates the mixability gaps of past rounds.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::matrix::SimplexWeights;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaHedge {
    cum_loss: Vec<f64>,
    cum_gap: f64,
    round: usize,
}

impl AdaHedge {
    pub fn new(k: usize) -> Self {
        assert!(k > 0, "AdaHedge needs at least one expert");
        Self { cum_loss: vec![0.0; k], cum_gap: 0.0, round: 0 }
    }

    pub fn n_experts(&self) -> usize {
        self.cum_loss.len()
    }

    pub fn cum_loss(&self) -> &[f64] {
        &self.cum_loss
    }

    pub fn cum_gap(&self) -> f64 {
        self.cum_gap
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// `None` stands for an infinite rate.
    fn rate(&self) -> Option<f64> {
        (self.cum_gap > 0.0).then(|| (self.n_experts() as f64).ln() / self.cum_gap)
    }

    pub fn predict(&self) -> SimplexWeights {
        let min = self.cum_loss.iter().copied().fold(f64::INFINITY, f64::min);
        let raw: Vec<f64> = match self.rate() {
            Some(eta) => self.cum_loss.iter().map(|l| (-eta * (l - min)).exp()).collect(),
            None => self.cum_loss.iter().map(|&l| if l == min { 1.0 } else { 0.0 }).collect(),
        };
        let total: f64 = raw.iter().sum();
        SimplexWeights::new(raw.iter().map(|w| w / total).collect())
            .unwrap_or_else(|_| SimplexWeights::uniform(self.n_experts()))
    }

    /// Feeds one loss vector; returns the mixability gap of the round.
    pub fn update(&mut self, loss: &[f64]) -> Result<f64> {
        if loss.len() != self.n_experts() {
            return Err(invalid(format!("loss has {} entries, expected {}", loss.len(), self.n_experts())));
        }
        if loss.iter().any(|l| !l.is_finite()) {
            return Err(invalid("loss vector must be finite"));
        }
        // the gap is shift invariant; centring keeps it bit-identical under shifts
        let lmin = loss.iter().copied().fold(f64::INFINITY, f64::min);
        let centred: Vec<f64> = loss.iter().map(|l| l - lmin).collect();
        let loss_c = &centred[..];
        let w = self.predict();
        let hedge: f64 = w.iter().zip(loss_c).map(|(w, l)| w * l).sum();
        let mix = match self.rate() {
            Some(eta) if eta > 0.0 => {
                let expo: Vec<f64> =
                    w.iter().zip(loss_c).filter(|(w, _)| **w > 0.0).map(|(w, l)| w.ln() - eta * l).collect();
                let max = expo.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + expo.iter().map(|e| (e - max).exp()).sum::<f64>().ln();
                -lse / eta
            }
            // zero rate: the mix loss tends to the hedge loss
            Some(_) => hedge,
            None => {
                let min_before = self.cum_loss.iter().copied().fold(f64::INFINITY, f64::min);
                let min_after = self.cum_loss.iter().zip(loss_c).map(|(c, l)| c + l).fold(f64::INFINITY, f64::min);
                min_after - min_before
            }
        };
        let gap = (hedge - mix).max(0.0);
        self.cum_gap += gap;
        self.cum_loss.iter_mut().zip(loss).for_each(|(c, l)| *c += l);
        self.round += 1;
        Ok(gap)
    }
}

/// `2 d sqrt(t ln K) + 16 d (2 + ln K / 3)` for loss range `d` over `t` rounds.
pub fn adahedge_regret_bound(delta_t: f64, t: usize, k: usize) -> f64 {
    let ln_k = (k as f64).ln();
    2.0 * delta_t * (t as f64 * ln_k).sqrt() + 16.0 * delta_t * (2.0 + ln_k / 3.0)
}
