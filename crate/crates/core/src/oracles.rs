//! Reference computations used to validate the solvers.
//!
//! These routines recompute solver quantities by the most direct route
//! available, in mean/variance form, without sharing any incremental state
//! with the solvers they check.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::abpmf::{abs_squared, approx_p, approx_q, compute_s};
use crate::bpmf::{BpmfSolver, EdgeMessageGrid, SolverState};
use crate::error::{Result, SblError};
use crate::gaussian::GaussianMsg;
use crate::problem::{Problem, RunConfig};

/// Exact BP quantities evaluated on the full edge grid.
#[derive(Clone, Debug)]
pub struct ExactMessages {
    pub q_mean: DVector<Complex64>,
    /// Infinite for columns without a single informative edge.
    pub q_var: DVector<f64>,
    pub p_mean: DVector<Complex64>,
    /// Infinite for rows with a flat incoming edge.
    pub p_var: DVector<f64>,
}

/// Evaluates the constraint → `h_n` messages from the grid's coefficient →
/// constraint messages, then the constraint → coefficient messages
/// `α̂_{n→l} = (y_n − p̂_n + Φ_nl α̂_{l→n}) / Φ_nl`,
/// `ν_{n→l} = (1/λ̂ + ν_p_n − |Φ_nl|² ν_{l→n}) / |Φ_nl|²`
/// and their per-column products.
pub fn exact_edge_oracle(
    grid: &EdgeMessageGrid,
    problem: &Problem,
    lambda_hat: f64,
) -> ExactMessages {
    let (m, l) = (problem.m_rows(), problem.l_cols());
    let phi = &problem.phi;

    let mut p_mean = DVector::zeros(m);
    let mut p_var: DVector<f64> = DVector::zeros(m);
    for n in 0..m {
        for c in 0..l {
            if !grid.is_edge(n, c) {
                continue;
            }
            let a = grid.alpha_to_delta(n, c);
            p_mean[n] += phi[(n, c)] * a.mean();
            p_var[n] += phi[(n, c)].norm_sqr() * a.variance();
        }
    }

    let mut q_mean = DVector::zeros(l);
    let mut q_var: DVector<f64> = DVector::zeros(l);
    for c in 0..l {
        let mut precision = 0.0;
        let mut weighted = Complex64::new(0.0, 0.0);
        for n in 0..m {
            if !grid.is_edge(n, c) || !p_var[n].is_finite() {
                continue;
            }
            let a = grid.alpha_to_delta(n, c);
            let w = phi[(n, c)].norm_sqr();
            let var = (1.0 / lambda_hat + p_var[n] - w * a.variance()) / w;
            if !(var > 0.0) || !var.is_finite() {
                continue;
            }
            let mean = (problem.y[n] - p_mean[n] + phi[(n, c)] * a.mean()) / phi[(n, c)];
            precision += 1.0 / var;
            weighted += mean / var;
        }
        if precision > 0.0 {
            q_var[c] = 1.0 / precision;
            q_mean[c] = weighted / precision;
        } else {
            q_var[c] = f64::INFINITY;
        }
    }

    ExactMessages {
        q_mean,
        q_var,
        p_mean,
        p_var,
    }
}

/// Relative deviations of the large-system approximations from the exact
/// edge-grid messages on one solver state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ApproximationGap {
    /// `‖q̂_approx − q̂_exact‖ / ‖q̂_exact‖`.
    pub q_mean: f64,
    /// `max_l |ν_q,approx − ν_q,exact| / ν_q,exact`.
    pub q_var: f64,
    /// `‖p̂_approx − p̂_exact‖ / ‖p̂_exact‖`.
    pub p_mean: f64,
    /// `max_n |ν_p,approx − ν_p,exact| / ν_p,exact`.
    pub p_var: f64,
}

impl ApproximationGap {
    pub fn max(&self) -> f64 {
        self.q_mean.max(self.q_var).max(self.p_mean).max(self.p_var)
    }
}

fn normwise_gap(approx: &DVector<Complex64>, exact: &DVector<Complex64>) -> f64 {
    let scale = exact.norm();
    if scale == 0.0 {
        return (approx - exact).norm();
    }
    (approx - exact).norm() / scale
}

fn max_relative_gap(approx: &DVector<f64>, exact: &DVector<f64>) -> f64 {
    approx
        .iter()
        .zip(exact.iter())
        .filter(|(_, e)| e.is_finite() && **e > 0.0)
        .map(|(a, e)| (a - e).abs() / e)
        .fold(0.0, f64::max)
}

/// Runs the exact solver for `iteration` iterations and compares, on that
/// state, the approximate `p` and `q` updates with their exact
/// counterparts:
///
/// * `p`: exact from the grid; approximate from the coefficient beliefs and
///   the residuals `s` of the previous iteration;
/// * `q` (for the next iteration): exact from the grid and the new `p`;
///   approximate from the beliefs and the residuals built from the new `p`.
pub fn approximation_gap(
    problem: &Problem,
    cfg: &RunConfig,
    iteration: usize,
) -> Result<ApproximationGap> {
    if iteration == 0 {
        return Err(SblError::InvalidConfig("iteration must be >= 1".into()));
    }
    let mut solver = BpmfSolver::new(problem, cfg)?;
    for _ in 1..iteration {
        solver.step()?;
    }
    let before = solver.state().clone();
    solver.step()?;
    let after = solver.state();

    let phi = &problem.phi;
    let phi_abs2 = abs_squared(phi);
    let (prev_p_mean, prev_p_var) = split(&before.p);
    let s_prev = compute_s(&problem.y, &prev_p_mean, &prev_p_var, before.lambda_hat)?;
    let alpha_mean = after.alpha_mean();
    let alpha_var = after.alpha_var();
    let (approx_p_mean, approx_p_var) = approx_p(phi, &phi_abs2, &alpha_mean, &alpha_var, &s_prev);

    let exact = exact_edge_oracle(solver.grid(), problem, after.lambda_hat);
    let s = compute_s(&problem.y, &exact.p_mean, &exact.p_var, after.lambda_hat)?;
    let q = approx_q(
        phi,
        &phi_abs2,
        &alpha_mean,
        &s,
        &exact.p_var,
        after.lambda_hat,
    );
    let (approx_q_mean, approx_q_var) = split(&q);

    Ok(ApproximationGap {
        q_mean: normwise_gap(&approx_q_mean, &exact.q_mean),
        q_var: max_relative_gap(&approx_q_var, &exact.q_var),
        p_mean: normwise_gap(&approx_p_mean, &exact.p_mean),
        p_var: max_relative_gap(&approx_p_var, &exact.p_var),
    })
}

fn split(msgs: &[GaussianMsg]) -> (DVector<Complex64>, DVector<f64>) {
    (
        DVector::from_iterator(msgs.len(), msgs.iter().map(|m| m.mean())),
        DVector::from_iterator(msgs.len(), msgs.iter().map(|m| m.variance())),
    )
}

/// Genie-aided least-squares estimate on the true support.
pub fn support_oracle(problem: &Problem) -> Result<DVector<Complex64>> {
    let support = problem.support();
    let (m, l) = (problem.m_rows(), problem.l_cols());
    if support.len() > m {
        return Err(SblError::DegenerateInput(format!(
            "support of size {} exceeds the {m} measurements",
            support.len()
        )));
    }
    let mut estimate = DVector::zeros(l);
    if support.is_empty() {
        return Ok(estimate);
    }
    let sub = DMatrix::from_fn(m, support.len(), |n, j| problem.phi[(n, support[j])]);
    let coeffs = sub
        .svd(true, true)
        .solve(&problem.y, 1e-12)
        .map_err(|e| SblError::DegenerateInput(e.to_string()))?;
    for (j, &i) in support.iter().enumerate() {
        estimate[i] = coeffs[j];
    }
    Ok(estimate)
}

/// Largest deviations found by [`belief_consistency_check`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConsistencyReport {
    /// Between each stored belief and `q_l · CN(0, 1/γ̂_l)`.
    pub belief_deviation: f64,
    /// Between each stored belief and the product of the two messages on
    /// each informative edge.
    pub edge_deviation: f64,
    pub columns_checked: usize,
    /// Columns with no informative incoming edge.
    pub columns_skipped: usize,
    pub edges_checked: usize,
}

impl ConsistencyReport {
    pub fn max_deviation(&self) -> f64 {
        self.belief_deviation.max(self.edge_deviation)
    }
}

/// Relative distance between two Gaussians: variance relative to the
/// reference variance, mean relative to the larger of `|μ|` and the
/// reference standard deviation.
fn deviation(mean: Complex64, var: f64, reference: GaussianMsg) -> f64 {
    let ref_var = reference.variance();
    let ref_mean = reference.mean();
    let var_dev = (var - ref_var).abs() / ref_var;
    let scale = ref_mean.norm().max(ref_var.sqrt());
    let mean_dev = if scale > 0.0 {
        (mean - ref_mean).norm() / scale
    } else {
        (mean - ref_mean).norm()
    };
    var_dev.max(mean_dev)
}

/// Checks that every coefficient belief equals the product of its incoming
/// constraint messages and its prior message, and that on every edge the
/// outgoing message times the incoming one reproduces the belief.
pub fn belief_consistency_check(state: &SolverState, grid: &EdgeMessageGrid) -> ConsistencyReport {
    let mut report = ConsistencyReport {
        belief_deviation: 0.0,
        edge_deviation: 0.0,
        columns_checked: 0,
        columns_skipped: 0,
        edges_checked: 0,
    };
    for l in 0..grid.cols() {
        let belief = state.alpha[l];
        let mut precision = 0.0;
        let mut weighted = Complex64::new(0.0, 0.0);
        for n in 0..grid.rows() {
            let incoming = grid.delta_to_alpha(n, l);
            if incoming.is_flat() {
                continue;
            }
            let v = incoming.variance();
            precision += 1.0 / v;
            weighted += incoming.mean() / v;

            let outgoing = grid.alpha_to_delta(n, l);
            if !outgoing.is_flat() {
                let vo = outgoing.variance();
                let p = 1.0 / v + 1.0 / vo;
                let mean = (incoming.mean() / v + outgoing.mean() / vo) / p;
                report.edge_deviation = report.edge_deviation.max(deviation(mean, 1.0 / p, belief));
                report.edges_checked += 1;
            }
        }
        if precision == 0.0 {
            report.columns_skipped += 1;
            continue;
        }
        // Prior CN(0, 1/γ̂) adds precision γ̂ and nothing to the weighted mean.
        let total = precision + state.gamma_hat[l];
        let dev = deviation(weighted / total, 1.0 / total, belief);
        report.belief_deviation = report.belief_deviation.max(dev);
        report.columns_checked += 1;
    }
    report
}
