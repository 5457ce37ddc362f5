//! Sparse Bayesian learning with combined belief propagation and mean-field
//! message passing on a stretched factor graph.
//!
//! The crate provides
//!
//! * the complex Gaussian / Gamma message algebra ([`gaussian`]),
//! * synthetic compressed-sensing problems and metrics ([`problem`]),
//! * the exact BP-MF solver ([`bpmf`]) and its approximate, GAMP-like
//!   variant ([`abpmf`]),
//! * vector- and scalar-form mean-field baselines ([`baselines`]),
//! * a Monte Carlo harness with CSV output ([`harness`]),
//! * independent oracles used to validate the solvers ([`oracles`]).
//!
//! ```
//! use sbl_core::{generate_problem, run_bpmf, RunConfig};
//!
//! let cfg = RunConfig { m_rows: 30, l_cols: 60, k_sparsity: 4, snr_db: 25.0, ..RunConfig::default() };
//! let problem = generate_problem(&cfg, 0).unwrap();
//! let trace = run_bpmf(&problem, &cfg).unwrap();
//! assert!(trace.final_nmse_db().unwrap() < -10.0);
//! ```

pub mod abpmf;
pub mod baselines;
pub mod bpmf;
pub mod error;
pub mod gaussian;
pub mod harness;
pub mod oracles;
pub mod problem;
pub mod trace;

pub use abpmf::{run_abpmf, AbpmfSolver};
pub use baselines::{run_mf_scalar, run_mf_vector};
pub use bpmf::{run_bpmf, BpmfSolver, EdgeMessageGrid, SolverState};
pub use error::{Result, SblError};
pub use gaussian::{gaussian_divide, gaussian_product, second_moment, GammaBelief, GaussianMsg};
pub use harness::{run_algorithm, SweepResult};
pub use problem::{generate_problem, nmse_db, snr_to_lambda, Problem, RunConfig};
pub use trace::{Algorithm, IterationRecord, IterationTrace};

pub use nalgebra::{DMatrix, DVector};
pub use num_complex::Complex64;
