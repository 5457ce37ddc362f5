use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::SblError;
use crate::problem::{mse_abs, nmse_db, Problem};

/// The four recovery algorithms compared by the harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    /// Exact combined BP/mean-field message passing on the stretched graph.
    Bpmf,
    /// Approximate BP/mean-field with `O(M + L)` messages per iteration.
    Abpmf,
    /// Mean field with a joint Gaussian belief on the whole coefficient vector.
    MfVector,
    /// Mean field with one Gaussian belief per coefficient, updated in turn.
    MfScalar,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Bpmf,
        Algorithm::Abpmf,
        Algorithm::MfVector,
        Algorithm::MfScalar,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Algorithm::Bpmf => "bpmf",
            Algorithm::Abpmf => "abpmf",
            Algorithm::MfVector => "mf-vector",
            Algorithm::MfScalar => "mf-scalar",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Algorithm {
    type Err = SblError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.label() == s)
            .ok_or_else(|| {
                SblError::InvalidConfig(format!(
                    "unknown algorithm `{s}` (expected bpmf, abpmf, mf-vector or mf-scalar)"
                ))
            })
    }
}

/// Metrics recorded after one solver iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    /// 1-based iteration index.
    pub iteration: usize,
    /// `None` when the ground truth is all-zero and NMSE is undefined.
    pub nmse_db: Option<f64>,
    pub mse_abs: f64,
    pub lambda_hat: f64,
    pub wall_ms: f64,
}

/// Per-iteration history of one solver run.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationTrace {
    pub algorithm: Algorithm,
    pub trial: u64,
    pub rows: Vec<IterationRecord>,
    /// Point estimate after the last iteration.
    pub alpha_estimate: DVector<Complex64>,
}

impl IterationTrace {
    pub(crate) fn new(algorithm: Algorithm, l_cols: usize) -> Self {
        Self {
            algorithm,
            trial: 0,
            rows: Vec::new(),
            alpha_estimate: DVector::zeros(l_cols),
        }
    }

    pub(crate) fn record(
        &mut self,
        problem: &Problem,
        alpha: DVector<Complex64>,
        lambda_hat: f64,
        elapsed: Duration,
    ) {
        let row = IterationRecord {
            iteration: self.rows.len() + 1,
            nmse_db: nmse_db(&alpha, &problem.alpha_true).ok(),
            mse_abs: mse_abs(&alpha, &problem.alpha_true),
            lambda_hat,
            wall_ms: elapsed.as_secs_f64() * 1e3,
        };
        self.rows.push(row);
        self.alpha_estimate = alpha;
    }

    pub fn final_nmse_db(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.nmse_db)
    }

    pub fn final_lambda_hat(&self) -> Option<f64> {
        self.rows.last().map(|r| r.lambda_hat)
    }

    /// Median per-iteration wall time in milliseconds.
    pub fn median_wall_ms(&self) -> Option<f64> {
        let mut times: Vec<f64> = self.rows.iter().map(|r| r.wall_ms).collect();
        if times.is_empty() {
            return None;
        }
        times.sort_by(f64::total_cmp);
        let mid = times.len() / 2;
        Some(if times.len().is_multiple_of(2) {
            0.5 * (times[mid - 1] + times[mid])
        } else {
            times[mid]
        })
    }
}
