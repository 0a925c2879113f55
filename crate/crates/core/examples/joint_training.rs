//! Imputation and a sigmoid classifier trained together, against mean imputation.

use f3i::joint::{mean_impute_then_classify, pcgrad_f3i_run, JointConfig, Split};
use f3i::synthgen::{apply_mcar, planted_blobs};
use f3i::Config;

fn main() -> f3i::Result<()> {
    let (x, labels) = planted_blobs(200, 10, 1.0, 3.0, 4)?;
    let masked = apply_mcar(&x, 0.4, 4)?;
    let split = Split::random(200, 0.7, 0.2, 4)?;
    let cfg = Config { max_iter: 20, ..Config::default() };
    let jcfg = JointConfig::default();
    let run = pcgrad_f3i_run(&masked, &labels, &split, &cfg, &jcfg)?;
    for (e, epoch) in run.epochs.iter().enumerate() {
        println!("epoch {e}: {} rounds, test auc {:.4}", epoch.alphas.len(), epoch.test_auc.unwrap_or(f64::NAN));
    }
    let (_, baseline) = mean_impute_then_classify(&masked, &labels, &split, &jcfg)?;
    println!("mean imputation baseline auc {:.4}", baseline.unwrap_or(f64::NAN));
    Ok(())
}
