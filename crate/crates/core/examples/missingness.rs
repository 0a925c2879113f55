//! Samples Gaussian data and masks it under the three mechanisms.

use f3i::synthgen::{apply_missingness, generate_complete, sample_params, Mechanism, MissingnessSpec};

fn main() -> f3i::Result<()> {
    let (n, f, seed) = (200, 20, 7);
    let params = sample_params(f, 0.1, seed)?;
    let complete = generate_complete(n, f, &params, seed);
    for mechanism in [Mechanism::Mcar, Mechanism::MarLogistic, Mechanism::MnarGsm] {
        let spec = MissingnessSpec::new(mechanism, 0.25);
        let masked = apply_missingness(&complete, &params, &spec, seed)?;
        let rate = masked.missing_count() as f64 / (n * f) as f64;
        println!("{mechanism:?}: {:.3} of cells missing", rate);
    }
    Ok(())
}
