//! Bandwidth choice and the shape of the density objective on the simplex.

use f3i::imputer::knn_initial_impute;
use f3i::objective::{solve_bandwidth, ObjectiveContext};
use f3i::synthgen::apply_mcar;
use f3i::{DataMatrix, NeighborIndex, SimplexWeights};
use rand::{Rng, SeedableRng};

fn main() -> f3i::Result<()> {
    let (n, f, k, eta) = (40, 6, 3, 0.001);
    for n in [10, 50, 200] {
        println!("N = {n:>3}: concave for h >= {:.4}", solve_bandwidth(1.0, k, eta, n)?);
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let scale = 1.0 / (f as f64).sqrt();
    let values = (0..n * f).map(|_| rng.gen_range(-scale..scale)).collect();
    let complete = DataMatrix::complete(n, f, values)?;
    let x0 = knn_initial_impute(&apply_mcar(&complete, 0.3, 2)?, k)?;
    for h in [0.05, solve_bandwidth(1.0, k, eta, n)?] {
        let index = NeighborIndex::build(&x0, h)?;
        let ctx = ObjectiveContext::new(&index, &index, &x0, k, eta)?;
        println!("h = {h:.4}");
        for i in 0..k {
            let a = SimplexWeights::vertex(k, i);
            println!("  G(vertex {i}) = {:+.6e}", ctx.value(&a)?);
        }
        let u = SimplexWeights::uniform(k);
        let g = ctx.gradient(&u)?;
        println!("  G(uniform)  = {:+.6e}, gradient {:?}", ctx.value(&u)?, g);
    }
    Ok(())
}
