//! Fits on one sample and imputes rows that were not seen during fitting.

use f3i::experiments::Setting;
use f3i::imputer::f3i_run;

fn main() -> f3i::Result<()> {
    let setting = Setting { max_iter: 50, bandwidth: Some(0.05), ..Setting::default() };
    let (_, masked) = setting.sample(1)?;
    let fitted = f3i_run(&masked, &setting.config(1))?.model;
    let (truth, fresh) = setting.sample(2)?;
    for i in 0..3 {
        let filled = fitted.out_of_sample_impute(fresh.row(i))?;
        let err: f64 = filled.iter().zip(truth.row(i)).map(|(a, b)| (a - b) * (a - b)).sum();
        let missing = fresh.row_mask(i).iter().filter(|&&m| m).count();
        println!("row {i}: {missing} cells filled, squared error {err:.4e}");
    }
    Ok(())
}
