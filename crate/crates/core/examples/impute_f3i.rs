//! Runs the iterative imputer and compares it with its KNN starting point.

use f3i::eval::mse;
use f3i::experiments::Setting;
use f3i::imputer::{f3i_run, knn_initial_impute};
use f3i::Config;

fn main() -> f3i::Result<()> {
    let setting = Setting { max_iter: 100, bandwidth: Some(1.0), ..Setting::default() };
    let (complete, masked) = setting.sample(3)?;
    let start = knn_initial_impute(&masked, setting.k)?;
    // Rows are scaled to unit norm for the run and scaled back afterwards.
    let cfg = Config { normalize: true, ..setting.config(3) };
    let run = f3i_run(&masked, &cfg)?;
    let t = &run.trace;
    println!("stopped after {} rounds ({:?})", t.final_t, t.stop_reason);
    println!("final weights {:?}", run.model.alpha.as_slice());
    println!("mse knn {:.6e}  f3i {:.6e}", mse(&start, &complete)?, mse(&run.imputed, &complete)?);
    Ok(())
}
