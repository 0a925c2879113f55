//! AdaHedge against a fixed best expert, with its regret bound.

use f3i::learner::{adahedge_regret_bound, AdaHedge};
use rand::{Rng, SeedableRng};

fn main() -> f3i::Result<()> {
    let k = 4;
    let mut learner = AdaHedge::new(k);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let mut mix_loss = 0.0;
    for t in 1..=1000 {
        let loss: Vec<f64> = (0..k).map(|i| rng.gen::<f64>() - if i == 2 { 0.1 } else { 0.0 }).collect();
        let w = learner.predict();
        mix_loss += w.iter().zip(&loss).map(|(a, l)| a * l).sum::<f64>();
        learner.update(&loss)?;
        if t % 250 == 0 {
            let best = learner.cum_loss().iter().cloned().fold(f64::INFINITY, f64::min);
            let bound = adahedge_regret_bound(1.1, t, k);
            println!("t={t:>4} regret {:.3}  bound {:.3}  weights {:.3?}", mix_loss - best, bound, w.as_slice());
        }
    }
    Ok(())
}
