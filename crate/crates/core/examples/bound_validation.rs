//! Checks the imputation-error and regret bounds over a few seeds.

use f3i::experiments::{mse_bound_batch, regret_bound_batch, summarize, Setting};

fn main() -> f3i::Result<()> {
    let setting = Setting::default();
    let seeds: Vec<u64> = (0..10).collect();
    println!("N * C_miss = {:.2}", setting.scaled_c_miss()?);
    let mse = summarize(&mse_bound_batch(&setting, &seeds)?);
    println!(
        "error bound: {}/{} satisfied, N*F*MSE = {:.2} +- {:.2}",
        mse.satisfied, mse.runs, mse.mean_measured, mse.std_measured
    );
    let regret = summarize(&regret_bound_batch(&setting, &seeds)?);
    println!(
        "regret bound: {}/{} satisfied, regret {:.3e}, bound {:.3}",
        regret.satisfied, regret.runs, regret.mean_measured, regret.mean_bound
    );
    Ok(())
}
