//! Mean, uniform KNN, distance-weighted KNN and F3I on one masked sample.

use f3i::eval::{masked_mse, rmse};
use f3i::experiments::Setting;
use f3i::imputer::{f3i_run, knn_distance_impute, knn_initial_impute, mean_impute};
use f3i::synthgen::Mechanism;

fn main() -> f3i::Result<()> {
    for mechanism in [Mechanism::Mcar, Mechanism::MarLogistic, Mechanism::MnarGsm] {
        let setting = Setting { mechanism, sigma: 0.5, ..Setting::default() };
        let (complete, masked) = setting.sample(11)?;
        let methods = [
            ("mean", mean_impute(&masked)?),
            ("knn-uniform", knn_initial_impute(&masked, setting.k)?),
            ("knn-distance", knn_distance_impute(&masked, setting.k)?),
            ("f3i", f3i_run(&masked, &setting.config(11))?.imputed),
        ];
        println!("{mechanism:?}");
        for (name, imputed) in &methods {
            let m = masked_mse(imputed, &complete, masked.mask())?;
            println!("  {name:<13} rmse {:.4}  masked mse {:.4}", rmse(imputed, &complete)?, m);
        }
    }
    Ok(())
}
