//! Iterative improvement of K-nearest-neighbour imputation.
//!
//! The crate starts from a plain KNN imputation and repeatedly re-imputes each
//! missing coordinate as a convex combination of its Chebyshev neighbours in
//! the initial imputation. The combination weights are chosen by an AdaHedge
//! learner fed with the gradient of a kernel-density objective, so that the
//! imputed rows move towards regions where the initial data is dense.
//!
//! ```
//! use f3i::{synthgen, Config, DataMatrix, GaussianParams};
//!
//! let params = GaussianParams::new(vec![0.0; 8], 0.1).unwrap();
//! let complete = synthgen::generate_complete(40, 8, &params, 1);
//! let masked = synthgen::apply_mcar(&complete, 0.2, 2).unwrap();
//! let cfg = Config { max_iter: 20, ..Config::default() };
//! let run = f3i::imputer::f3i_run(&masked, &cfg).unwrap();
//! assert!(run.imputed.values().iter().all(|v| v.is_finite()));
//! # let _: &DataMatrix = &run.imputed;
//! ```

pub mod cli;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod imputer;
pub mod io;
pub mod joint;
pub mod learner;
pub mod matrix;
pub mod neighbors;
pub mod objective;
pub mod synthgen;

mod rng;

pub use error::{Error, Result};
pub use matrix::{l2_normalize_rows, project_to_simplex, Config, DataMatrix, GaussianParams, SimplexWeights};
pub use neighbors::NeighborIndex;
