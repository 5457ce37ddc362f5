//! Exact BP-MF sparse Bayesian learning.
//!
//! The dictionary rows are "stretched" into auxiliary variables
//! `h_n = Φ_n α` tied to the coefficients by Dirac constraint factors. The
//! constraint factors are handled with belief propagation on the full
//! `M × L` bipartite edge set; the likelihood, the Gaussian prior and both
//! Gamma hyperpriors are handled with mean field. One iteration runs:
//!
//! 1. constraint → coefficient messages for every edge,
//! 2. their product `q_l` per column,
//! 3. the coefficient belief, the prior precision `γ̂_l`, and the belief
//!    again with the refreshed `γ̂_l`,
//! 4. coefficient → constraint messages (belief with the edge removed),
//! 5. the constraint → `h_n` messages `CN(p̂_n, ν_p_n)`,
//! 6. the `h_n` beliefs and the noise precision `λ̂`.

use std::time::Instant;

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{contract, Result, SblError};
use crate::gaussian::{divide_or_flat, gaussian_product, second_moment, GammaBelief, GaussianMsg};
use crate::problem::{Problem, RunConfig};
use crate::trace::{Algorithm, IterationTrace};

pub const GAMMA_MIN: f64 = 1e-12;
/// A coefficient whose prior precision reaches this value is pruned.
pub const GAMMA_MAX: f64 = 1e12;
pub const LAMBDA_MIN: f64 = 1e-12;
pub const LAMBDA_MAX: f64 = 1e12;
/// Edges with `|Φ_nl|²` below this fraction of the row maximum are absent.
pub const EDGE_DEGENERACY: f64 = 1e-24;

/// Per-edge messages of the `M × L` bipartite subgraph between the
/// coefficients and the constraint factors. Storage is column-major.
#[derive(Clone, Debug)]
pub struct EdgeMessageGrid {
    rows: usize,
    cols: usize,
    /// `|Φ_nl|²`, zero for absent edges.
    weight: Vec<f64>,
    alpha_to_delta: Vec<GaussianMsg>,
    delta_to_alpha: Vec<GaussianMsg>,
}

impl EdgeMessageGrid {
    /// Builds the edge set of `phi`, with every coefficient → constraint
    /// message set to `CN(0, 1)` and every reverse message flat.
    pub fn new(problem: &Problem) -> Self {
        let (rows, cols) = (problem.m_rows(), problem.l_cols());
        let phi = &problem.phi;
        let row_max: Vec<f64> = (0..rows)
            .map(|n| {
                (0..cols)
                    .map(|l| phi[(n, l)].norm_sqr())
                    .fold(0.0, f64::max)
            })
            .collect();
        let mut weight = Vec::with_capacity(rows * cols);
        for l in 0..cols {
            for (n, &max) in row_max.iter().enumerate() {
                let w = phi[(n, l)].norm_sqr();
                weight.push(if w > 0.0 && w >= EDGE_DEGENERACY * max {
                    w
                } else {
                    0.0
                });
            }
        }
        let unit = GaussianMsg::from_precision_or_flat(Complex64::new(0.0, 0.0), 1.0);
        let alpha_to_delta = weight
            .iter()
            .map(|&w| if w > 0.0 { unit } else { GaussianMsg::FLAT })
            .collect();
        Self {
            rows,
            cols,
            weight,
            alpha_to_delta,
            delta_to_alpha: vec![GaussianMsg::FLAT; rows * cols],
        }
    }

    #[inline]
    fn idx(&self, n: usize, l: usize) -> usize {
        debug_assert!(n < self.rows && l < self.cols);
        n + l * self.rows
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_edge(&self, n: usize, l: usize) -> bool {
        self.weight[self.idx(n, l)] > 0.0
    }

    /// Message `α_l → f_δn`.
    pub fn alpha_to_delta(&self, n: usize, l: usize) -> GaussianMsg {
        self.alpha_to_delta[self.idx(n, l)]
    }

    /// Message `f_δn → α_l`.
    pub fn delta_to_alpha(&self, n: usize, l: usize) -> GaussianMsg {
        self.delta_to_alpha[self.idx(n, l)]
    }

    pub fn set_alpha_to_delta(&mut self, n: usize, l: usize, msg: GaussianMsg) {
        let i = self.idx(n, l);
        self.alpha_to_delta[i] = msg;
    }

    pub fn set_delta_to_alpha(&mut self, n: usize, l: usize, msg: GaussianMsg) {
        let i = self.idx(n, l);
        self.delta_to_alpha[i] = msg;
    }

    /// All `f_δn → α_l` messages into column `l`.
    pub fn column_delta_to_alpha(&self, l: usize) -> &[GaussianMsg] {
        &self.delta_to_alpha[l * self.rows..(l + 1) * self.rows]
    }

    /// All `α_l → f_δn` messages out of column `l`.
    pub fn column_alpha_to_delta(&self, l: usize) -> &[GaussianMsg] {
        &self.alpha_to_delta[l * self.rows..(l + 1) * self.rows]
    }
}

/// Beliefs and aggregated messages carried between iterations.
#[derive(Clone, Debug)]
pub struct SolverState {
    /// Coefficient beliefs `CN(α̂_l, ν_α_l)`.
    pub alpha: Vec<GaussianMsg>,
    /// Prior precisions `γ̂_l`.
    pub gamma_hat: Vec<f64>,
    /// Column products `CN(q̂_l, ν_q_l)` of the incoming constraint messages.
    pub q: Vec<GaussianMsg>,
    /// Constraint → `h_n` messages `CN(p̂_n, ν_p_n)`.
    pub p: Vec<GaussianMsg>,
    /// Beliefs `CN(ĥ_n, ν_h_n)`.
    pub h: Vec<GaussianMsg>,
    /// Noise precision estimate.
    pub lambda_hat: f64,
}

impl SolverState {
    pub fn alpha_mean(&self) -> DVector<Complex64> {
        DVector::from_iterator(self.alpha.len(), self.alpha.iter().map(|a| a.mean()))
    }

    pub fn alpha_var(&self) -> DVector<f64> {
        DVector::from_iterator(self.alpha.len(), self.alpha.iter().map(|a| a.variance()))
    }
}

/// `λ̂₀ = M / ‖y‖²`: all observed power is attributed to noise.
pub(crate) fn initial_lambda(problem: &Problem) -> Result<f64> {
    let power = problem.y.norm_squared();
    if power == 0.0 {
        return Err(SblError::DegenerateInput(
            "observation vector is zero; the initial noise precision is undefined".into(),
        ));
    }
    Ok((problem.m_rows() as f64 / power).clamp(LAMBDA_MIN, LAMBDA_MAX))
}

/// Initial state: unit-variance zero-mean edge messages, `γ̂ = 1`, `p`
/// from those edges and `λ̂₀ = M / ‖y‖²`.
pub fn init_state(problem: &Problem, _cfg: &RunConfig) -> Result<(SolverState, EdgeMessageGrid)> {
    let lambda_hat = initial_lambda(problem)?;
    let grid = EdgeMessageGrid::new(problem);
    let (m, l) = (problem.m_rows(), problem.l_cols());
    let unit = GaussianMsg::from_precision_or_flat(Complex64::new(0.0, 0.0), 1.0);
    let mut p = Vec::with_capacity(m);
    for n in 0..m {
        p.push(msg_delta_to_h(&grid, problem, n));
    }
    let h = p
        .iter()
        .zip(problem.y.iter())
        .map(|(p, y)| update_h_belief(*y, lambda_hat, *p))
        .collect::<Result<Vec<_>>>()?;
    let state = SolverState {
        alpha: vec![unit; l],
        gamma_hat: vec![1.0; l],
        q: vec![GaussianMsg::FLAT; l],
        p,
        h,
        lambda_hat,
    };
    Ok((state, grid))
}

/// Mean-field message from the likelihood factor to `h_n`: `CN(y_n, 1/λ̂)`.
pub fn msg_obs_to_h(y_n: Complex64, lambda_hat: f64) -> Result<GaussianMsg> {
    if !(lambda_hat > 0.0) {
        return Err(contract(format!(
            "noise precision must be positive, got {lambda_hat}"
        )));
    }
    GaussianMsg::from_precision(y_n, lambda_hat)
}

/// Overwrites every `f_δn → α_l` message from the current `p`, the
/// coefficient → constraint messages and `λ̂`.
///
/// In precision form the message on edge `(n, l)` is
/// `precision = |Φ_nl|² / d`, `precision · mean = Φ*_nl (y_n − p̂_n + Φ_nl α̂_{l→n}) / d`
/// with `d = 1/λ̂ + ν_p_n − |Φ_nl|² ν_{α,l→n}`. Absent edges, flat rows and
/// non-positive `d` give flat messages.
pub fn msg_delta_to_alpha(state: &SolverState, grid: &mut EdgeMessageGrid, problem: &Problem) {
    let noise_var = 1.0 / state.lambda_hat;
    let rows = grid.rows;
    for l in 0..grid.cols {
        let phi_col = problem.phi.column(l);
        for n in 0..rows {
            let i = n + l * rows;
            let w = grid.weight[i];
            let p = state.p[n];
            if w == 0.0 || p.is_flat() {
                grid.delta_to_alpha[i] = GaussianMsg::FLAT;
                continue;
            }
            let a = grid.alpha_to_delta[i];
            let phi = phi_col[n];
            let denom = noise_var + p.variance() - w * a.variance();
            if !(denom > 0.0) || !denom.is_finite() {
                grid.delta_to_alpha[i] = GaussianMsg::FLAT;
                continue;
            }
            let inv = 1.0 / denom;
            let weighted = phi.conj() * (problem.y[n] - p.mean() + phi * a.mean()) * inv;
            grid.delta_to_alpha[i] = GaussianMsg::from_natural(weighted, w * inv);
        }
    }
}

/// Product `q_l` of all constraint messages into coefficient `l`.
pub fn combine_q(grid: &EdgeMessageGrid, l: usize) -> Result<GaussianMsg> {
    gaussian_product(grid.column_delta_to_alpha(l))
}

/// Coefficient belief from `q_l` and the prior message `CN(0, 1/γ̂_l)`:
/// `α̂_l = q̂_l / (1 + ν_q γ̂_l)`, `ν_α = (1/ν_q + γ̂_l)⁻¹`. A flat `q_l`
/// leaves the prior.
pub fn update_alpha_belief(q: GaussianMsg, gamma_hat_l: f64) -> Result<GaussianMsg> {
    if !(gamma_hat_l > 0.0) {
        return Err(contract(format!(
            "prior precision must be positive, got {gamma_hat_l}"
        )));
    }
    if gamma_hat_l.is_infinite() {
        return GaussianMsg::new(Complex64::new(0.0, 0.0), 0.0);
    }
    Ok(GaussianMsg::from_natural(
        q.weighted_mean(),
        q.precision() + gamma_hat_l,
    ))
}

/// Mean of the Gamma belief on `γ_l`: `(ε + 1) / (η + |α̂_l|² + ν_α_l)`,
/// clamped to `[GAMMA_MIN, GAMMA_MAX]`.
pub fn update_gamma(alpha_belief: GaussianMsg, epsilon: f64, eta: f64) -> Result<f64> {
    let moment = second_moment(alpha_belief)?;
    if eta + moment <= 0.0 {
        return Ok(GAMMA_MAX);
    }
    let gamma = GammaBelief::precision_posterior(epsilon, eta, moment)?.mean();
    Ok(gamma.clamp(GAMMA_MIN, GAMMA_MAX))
}

/// Overwrites every `α_l → f_δn` message with the belief on `α_l` divided
/// by the incoming `f_δn → α_l` message.
pub fn msg_alpha_to_delta(state: &SolverState, grid: &mut EdgeMessageGrid) {
    let rows = grid.rows;
    for l in 0..grid.cols {
        let belief = state.alpha[l];
        for n in 0..rows {
            let i = n + l * rows;
            grid.alpha_to_delta[i] = if grid.weight[i] == 0.0 {
                GaussianMsg::FLAT
            } else {
                divide_or_flat(belief, grid.delta_to_alpha[i])
            };
        }
    }
}

/// Constraint → `h_n` message `CN(p̂_n, ν_p_n)` with
/// `p̂_n = Σ_l Φ_nl α̂_{l→n}` and `ν_p_n = Σ_l |Φ_nl|² ν_{α,l→n}` over
/// present edges. A flat incoming message on a present edge makes the row
/// flat.
pub fn msg_delta_to_h(grid: &EdgeMessageGrid, problem: &Problem, n: usize) -> GaussianMsg {
    let mut mean = Complex64::new(0.0, 0.0);
    let mut var = 0.0;
    for l in 0..grid.cols {
        let i = n + l * grid.rows;
        let w = grid.weight[i];
        if w == 0.0 {
            continue;
        }
        let a = grid.alpha_to_delta[i];
        if a.is_flat() {
            return GaussianMsg::FLAT;
        }
        mean += problem.phi[(n, l)] * a.mean();
        var += w * a.variance();
    }
    point_or_gaussian(mean, var)
}

#[inline]
fn point_or_gaussian(mean: Complex64, var: f64) -> GaussianMsg {
    if var.is_finite() {
        GaussianMsg::from_precision_or_flat(mean, 1.0 / var)
    } else {
        GaussianMsg::FLAT
    }
}

/// Belief on `h_n`: `ν_h = (λ̂ + 1/ν_p)⁻¹`, `ĥ = ν_h (λ̂ y_n + p̂_n / ν_p)`.
pub fn update_h_belief(y_n: Complex64, lambda_hat: f64, p: GaussianMsg) -> Result<GaussianMsg> {
    Ok(msg_obs_to_h(y_n, lambda_hat)? * p)
}

/// Mean of the Gamma belief on `λ` under the `1/λ` prior:
/// `M / Σ_n (|y_n − ĥ_n|² + ν_h_n)`, clamped to `[LAMBDA_MIN, LAMBDA_MAX]`.
pub fn update_lambda(y: &DVector<Complex64>, h_beliefs: &[GaussianMsg]) -> Result<f64> {
    if y.len() != h_beliefs.len() {
        return Err(contract(format!(
            "{} observations but {} h beliefs",
            y.len(),
            h_beliefs.len()
        )));
    }
    let mut residual = 0.0;
    for (y_n, h) in y.iter().zip(h_beliefs) {
        if h.is_flat() {
            return Err(contract("h belief is flat"));
        }
        residual += (y_n - h.mean()).norm_sqr() + h.variance();
    }
    noise_precision_from_residual(y.len(), residual)
}

/// `M / residual`, clamped; a zero residual maps to `LAMBDA_MAX`.
pub(crate) fn noise_precision_from_residual(m: usize, residual: f64) -> Result<f64> {
    if residual.is_nan() || residual < 0.0 {
        return Err(contract(format!(
            "residual second moment is invalid: {residual}"
        )));
    }
    if residual == 0.0 {
        return Ok(LAMBDA_MAX);
    }
    Ok((m as f64 / residual).clamp(LAMBDA_MIN, LAMBDA_MAX))
}

pub(crate) fn max_abs_change(old: &DVector<Complex64>, new: &DVector<Complex64>) -> f64 {
    old.iter()
        .zip(new.iter())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max)
}

/// Step-wise exact BP-MF solver.
#[derive(Clone, Debug)]
pub struct BpmfSolver<'a> {
    problem: &'a Problem,
    epsilon: f64,
    eta: f64,
    state: SolverState,
    grid: EdgeMessageGrid,
    iteration: usize,
}

impl<'a> BpmfSolver<'a> {
    pub fn new(problem: &'a Problem, cfg: &RunConfig) -> Result<Self> {
        let (state, grid) = init_state(problem, cfg)?;
        Ok(Self {
            problem,
            epsilon: cfg.epsilon,
            eta: cfg.eta,
            state,
            grid,
            iteration: 0,
        })
    }

    pub fn state(&self) -> &SolverState {
        &self.state
    }

    pub fn grid(&self) -> &EdgeMessageGrid {
        &self.grid
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Runs one full iteration of the schedule.
    pub fn step(&mut self) -> Result<()> {
        let problem = self.problem;
        let state = &mut self.state;
        let grid = &mut self.grid;

        msg_delta_to_alpha(state, grid, problem);

        for l in 0..grid.cols {
            let q = match combine_q(grid, l) {
                Ok(q) => q,
                Err(SblError::NoInformation) => GaussianMsg::FLAT,
                Err(e) => return Err(e),
            };
            state.q[l] = q;
            let first = update_alpha_belief(q, state.gamma_hat[l])?;
            state.gamma_hat[l] = update_gamma(first, self.epsilon, self.eta)?;
            state.alpha[l] = update_alpha_belief(q, state.gamma_hat[l])?;
        }

        msg_alpha_to_delta(state, grid);

        for n in 0..grid.rows {
            state.p[n] = msg_delta_to_h(grid, problem, n);
        }
        for n in 0..grid.rows {
            state.h[n] = update_h_belief(problem.y[n], state.lambda_hat, state.p[n])?;
        }
        state.lambda_hat = update_lambda(&problem.y, &state.h)?;

        self.iteration += 1;
        Ok(())
    }
}

/// Runs the exact BP-MF solver for `cfg.iterations` iterations (or until
/// the optional early-stop tolerance is met).
pub fn run_bpmf(problem: &Problem, cfg: &RunConfig) -> Result<IterationTrace> {
    cfg.validate()?;
    let mut solver = BpmfSolver::new(problem, cfg)?;
    let mut trace = IterationTrace::new(Algorithm::Bpmf, problem.l_cols());
    let mut previous = solver.state().alpha_mean();
    for _ in 0..cfg.iterations {
        let start = Instant::now();
        solver.step()?;
        let elapsed = start.elapsed();
        let alpha = solver.state().alpha_mean();
        let change = max_abs_change(&previous, &alpha);
        trace.record(problem, alpha.clone(), solver.state().lambda_hat, elapsed);
        if cfg.stop_tolerance.is_some_and(|tol| change < tol) {
            break;
        }
        previous = alpha;
    }
    Ok(trace)
}
