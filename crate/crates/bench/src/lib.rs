//! Shared fixtures for the solver benchmarks.

use sbl_core::{generate_problem, Problem, RunConfig};

/// Measurement count used by the benchmarks.
pub const ROWS: usize = 100;

/// Paper-style instance (`K/L = 0.13`, 14 dB) with `ROWS` measurements and
/// `l` columns.
pub fn instance(l: usize) -> (Problem, RunConfig) {
    let cfg = RunConfig {
        m_rows: ROWS,
        l_cols: l,
        k_sparsity: l * 13 / 100,
        ..RunConfig::default()
    };
    let problem = generate_problem(&cfg, 0).expect("valid benchmark configuration");
    (problem, cfg)
}
