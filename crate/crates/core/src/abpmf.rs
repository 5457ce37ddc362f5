//! Approximate BP-MF sparse Bayesian learning.
//!
//! For large `M` and `L` the per-edge messages of the exact solver are
//! replaced by first-order expansions around the coefficient beliefs. Only
//! `O(M + L)` quantities are stored: the scaled residuals `s_n`, the
//! constraint → `h_n` messages `(p̂_n, ν_p_n)` and the column products
//! `(q̂_l, ν_q_l)`. Every step is a dense matrix-vector product, which makes
//! the recursion coincide with the linear steps of GAMP.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::bpmf::{
    initial_lambda, max_abs_change, update_alpha_belief, update_gamma, update_h_belief,
    update_lambda, SolverState,
};
use crate::error::{contract, Result};
use crate::gaussian::GaussianMsg;
use crate::problem::{Problem, RunConfig};
use crate::trace::{Algorithm, IterationTrace};

/// Floor on `1/λ̂ + ν_p_n` wherever it is a denominator.
pub const DENOMINATOR_FLOOR: f64 = 1e-15;

/// Scaled residuals `s_n = (y_n − p̂_n) / (1/λ̂ + ν_p_n)`, current and from
/// the previous iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualState {
    pub s: DVector<Complex64>,
    pub s_prev: DVector<Complex64>,
}

impl ResidualState {
    pub fn zeros(m: usize) -> Self {
        Self {
            s: DVector::zeros(m),
            s_prev: DVector::zeros(m),
        }
    }
}

/// Elementwise `|Φ_nl|²`.
pub fn abs_squared(phi: &DMatrix<Complex64>) -> DMatrix<f64> {
    phi.map(|z| z.norm_sqr())
}

/// Approximate column products:
/// `ν_q_l = (Σ_n |Φ_nl|² / (1/λ̂ + ν_p_n))⁻¹` and
/// `q̂_l = α̂_l + ν_q_l Σ_n Φ*_nl s_n`.
///
/// A column with no energy yields a flat `q_l`.
pub fn approx_q(
    phi: &DMatrix<Complex64>,
    phi_abs2: &DMatrix<f64>,
    alpha_mean: &DVector<Complex64>,
    s: &DVector<Complex64>,
    p_var: &DVector<f64>,
    lambda_hat: f64,
) -> Vec<GaussianMsg> {
    let inv_denom = inverse_denominators(p_var, lambda_hat);
    let precision = phi_abs2.tr_mul(&inv_denom);
    let correlation = phi.ad_mul(s);
    q_from_sums(alpha_mean, precision.as_slice(), correlation.as_slice())
}

fn inverse_denominators(p_var: &DVector<f64>, lambda_hat: f64) -> DVector<f64> {
    let noise_var = 1.0 / lambda_hat;
    p_var.map(|v| 1.0 / (noise_var + v).max(DENOMINATOR_FLOOR))
}

fn q_from_sums(
    alpha_mean: &DVector<Complex64>,
    precision: &[f64],
    correlation: &[Complex64],
) -> Vec<GaussianMsg> {
    (0..precision.len())
        .map(|l| {
            let prec = precision[l];
            if prec > 0.0 && prec.is_finite() {
                GaussianMsg::from_precision_or_flat(alpha_mean[l] + correlation[l] / prec, prec)
            } else {
                GaussianMsg::FLAT
            }
        })
        .collect()
}

/// `Φ` split into real arrays, stored both column-major (`M × L`) and
/// row-major, so that products with `Φ` and `Φᴴ` are both unit-stride
/// axpy loops.
#[derive(Clone, Debug)]
pub(crate) struct SplitDictionary {
    m: usize,
    l: usize,
    col_re: Vec<f64>,
    col_im: Vec<f64>,
    col_abs2: Vec<f64>,
    row_re: Vec<f64>,
    row_im: Vec<f64>,
    row_abs2: Vec<f64>,
}

impl SplitDictionary {
    pub(crate) fn new(phi: &DMatrix<Complex64>) -> Self {
        let (m, l) = phi.shape();
        let col_re: Vec<f64> = phi.iter().map(|z| z.re).collect();
        let col_im: Vec<f64> = phi.iter().map(|z| z.im).collect();
        let col_abs2: Vec<f64> = phi.iter().map(|z| z.norm_sqr()).collect();
        let transpose = |src: &[f64]| {
            let mut out = vec![0.0; m * l];
            for j in 0..l {
                for n in 0..m {
                    out[n * l + j] = src[j * m + n];
                }
            }
            out
        };
        Self {
            m,
            l,
            row_re: transpose(&col_re),
            row_im: transpose(&col_im),
            row_abs2: transpose(&col_abs2),
            col_re,
            col_im,
            col_abs2,
        }
    }

    /// Per column `l`: `Σ_n |Φ_nl|² w_n` and `Σ_n Φ*_nl s_n`.
    pub(crate) fn column_sums(
        &self,
        weights: &[f64],
        s: &[Complex64],
    ) -> (Vec<f64>, Vec<Complex64>) {
        let l = self.l;
        let mut prec = vec![0.0; l];
        let (mut re, mut im) = (vec![0.0; l], vec![0.0; l]);
        for n in 0..self.m {
            let (w, sr, si) = (weights[n], s[n].re, s[n].im);
            let row = n * l..(n + 1) * l;
            let (ar, ai, a2) = (
                &self.row_re[row.clone()],
                &self.row_im[row.clone()],
                &self.row_abs2[row],
            );
            for j in 0..l {
                prec[j] += a2[j] * w;
                re[j] += ar[j] * sr + ai[j] * si;
                im[j] += ar[j] * si - ai[j] * sr;
            }
        }
        let corr = re
            .into_iter()
            .zip(im)
            .map(|(r, i)| Complex64::new(r, i))
            .collect();
        (prec, corr)
    }

    /// Per row `n`: `Σ_l Φ_nl x_l` and `Σ_l |Φ_nl|² v_l`.
    pub(crate) fn row_sums(
        &self,
        x: &DVector<Complex64>,
        v: &DVector<f64>,
    ) -> (DVector<Complex64>, DVector<f64>) {
        let m = self.m;
        let mut var = vec![0.0; m];
        let (mut re, mut im) = (vec![0.0; m], vec![0.0; m]);
        for j in 0..self.l {
            let (xr, xi, vj) = (x[j].re, x[j].im, v[j]);
            let col = j * m..(j + 1) * m;
            let (ar, ai, a2) = (
                &self.col_re[col.clone()],
                &self.col_im[col.clone()],
                &self.col_abs2[col],
            );
            for n in 0..m {
                var[n] += a2[n] * vj;
                re[n] += ar[n] * xr - ai[n] * xi;
                im[n] += ar[n] * xi + ai[n] * xr;
            }
        }
        let mean = DVector::from_fn(m, |n, _| Complex64::new(re[n], im[n]));
        (mean, DVector::from_vec(var))
    }
}

/// `s_n = (y_n − p̂_n) / max(1/λ̂ + ν_p_n, DENOMINATOR_FLOOR)`.
pub fn compute_s(
    y: &DVector<Complex64>,
    p_mean: &DVector<Complex64>,
    p_var: &DVector<f64>,
    lambda_hat: f64,
) -> Result<DVector<Complex64>> {
    if !(lambda_hat > 0.0) {
        return Err(contract(format!(
            "noise precision must be positive, got {lambda_hat}"
        )));
    }
    if y.len() != p_mean.len() || y.len() != p_var.len() {
        return Err(contract("length mismatch between y and p"));
    }
    let noise_var = 1.0 / lambda_hat;
    Ok(DVector::from_fn(y.len(), |n, _| {
        (y[n] - p_mean[n]) / (noise_var + p_var[n]).max(DENOMINATOR_FLOOR)
    }))
}

/// Approximate constraint → `h_n` messages:
/// `ν_p_n = Σ_l |Φ_nl|² ν_α_l` and `p̂_n = Σ_l Φ_nl α̂_l − s_prev,n ν_p_n`.
pub fn approx_p(
    phi: &DMatrix<Complex64>,
    phi_abs2: &DMatrix<f64>,
    alpha_mean: &DVector<Complex64>,
    alpha_var: &DVector<f64>,
    s_prev: &DVector<Complex64>,
) -> (DVector<Complex64>, DVector<f64>) {
    let p_var = phi_abs2 * alpha_var;
    let mut p_mean = phi * alpha_mean;
    for n in 0..p_mean.len() {
        p_mean[n] -= s_prev[n] * p_var[n];
    }
    (p_mean, p_var)
}

fn gaussians(mean: &DVector<Complex64>, var: &DVector<f64>) -> Vec<GaussianMsg> {
    mean.iter()
        .zip(var.iter())
        .map(|(m, v)| GaussianMsg::from_precision_or_flat(*m, 1.0 / v))
        .collect()
}

/// Step-wise approximate BP-MF solver.
#[derive(Clone, Debug)]
pub struct AbpmfSolver<'a> {
    problem: &'a Problem,
    dict: SplitDictionary,
    epsilon: f64,
    eta: f64,
    damping: f64,
    freeze_gamma: bool,
    freeze_lambda: bool,
    state: SolverState,
    p_mean: DVector<Complex64>,
    p_var: DVector<f64>,
    residual: ResidualState,
    iteration: usize,
}

impl<'a> AbpmfSolver<'a> {
    /// Starts from `s = 0`, `α̂ = 0`, `ν_α = 1`, `γ̂ = 1`,
    /// `ν_p_n = Σ_l |Φ_nl|²` and `λ̂₀ = M / ‖y‖²`.
    pub fn new(problem: &'a Problem, cfg: &RunConfig) -> Result<Self> {
        let lambda_hat = initial_lambda(problem)?;
        let (m, l) = (problem.m_rows(), problem.l_cols());
        let dict = SplitDictionary::new(&problem.phi);
        let residual = ResidualState::zeros(m);
        let alpha_mean = DVector::zeros(l);
        let alpha_var = DVector::from_element(l, 1.0);
        let (p_mean, p_var) = dict.row_sums(&alpha_mean, &alpha_var);
        let p = gaussians(&p_mean, &p_var);
        let h = p
            .iter()
            .zip(problem.y.iter())
            .map(|(p, y)| update_h_belief(*y, lambda_hat, *p))
            .collect::<Result<Vec<_>>>()?;
        let state = SolverState {
            alpha: gaussians(&alpha_mean, &alpha_var),
            gamma_hat: vec![1.0; l],
            q: vec![GaussianMsg::FLAT; l],
            p,
            h,
            lambda_hat,
        };
        Ok(Self {
            problem,
            dict,
            epsilon: cfg.epsilon,
            eta: cfg.eta,
            damping: cfg.damping,
            freeze_gamma: false,
            freeze_lambda: false,
            state,
            p_mean,
            p_var,
            residual,
            iteration: 0,
        })
    }

    /// Keeps `γ̂` and/or `λ̂` at their current values in later steps.
    pub fn freeze_hyperparameters(&mut self, gamma: bool, lambda: bool) {
        self.freeze_gamma = gamma;
        self.freeze_lambda = lambda;
    }

    /// Replaces the recursion state. `p` is taken from `state.p`.
    pub fn set_state(&mut self, state: SolverState, residual: ResidualState) -> Result<()> {
        let (m, l) = (self.problem.m_rows(), self.problem.l_cols());
        if state.alpha.len() != l
            || state.gamma_hat.len() != l
            || state.p.len() != m
            || residual.s.len() != m
        {
            return Err(contract("state dimensions do not match the problem"));
        }
        self.p_mean = DVector::from_iterator(m, state.p.iter().map(|p| p.mean()));
        self.p_var = DVector::from_iterator(m, state.p.iter().map(|p| p.variance()));
        self.state = state;
        self.residual = residual;
        Ok(())
    }

    pub fn state(&self) -> &SolverState {
        &self.state
    }

    pub fn residual(&self) -> &ResidualState {
        &self.residual
    }

    pub fn p_mean(&self) -> &DVector<Complex64> {
        &self.p_mean
    }

    pub fn p_var(&self) -> &DVector<f64> {
        &self.p_var
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn step(&mut self) -> Result<()> {
        let problem = self.problem;
        let state = &mut self.state;

        let alpha_prev = state.alpha_mean();
        let inv_denom = inverse_denominators(&self.p_var, state.lambda_hat);
        let (precision, correlation) = self
            .dict
            .column_sums(inv_denom.as_slice(), self.residual.s.as_slice());
        state.q = q_from_sums(&alpha_prev, &precision, &correlation);

        for l in 0..state.alpha.len() {
            let q = state.q[l];
            if !self.freeze_gamma {
                let first = update_alpha_belief(q, state.gamma_hat[l])?;
                state.gamma_hat[l] = update_gamma(first, self.epsilon, self.eta)?;
            }
            state.alpha[l] = update_alpha_belief(q, state.gamma_hat[l])?;
        }

        let alpha_mean = state.alpha_mean();
        let alpha_var = state.alpha_var();
        let rho = self.damping;
        let (mut p_mean, mut p_var) = self.dict.row_sums(&alpha_mean, &alpha_var);
        if rho < 1.0 {
            p_var = p_var * rho + &self.p_var * (1.0 - rho);
        }
        for n in 0..p_mean.len() {
            p_mean[n] -= self.residual.s[n] * p_var[n];
        }

        let mut s = compute_s(&problem.y, &p_mean, &p_var, state.lambda_hat)?;
        if rho < 1.0 {
            s = s * Complex64::new(rho, 0.0) + &self.residual.s * Complex64::new(1.0 - rho, 0.0);
        }
        self.residual.s_prev = std::mem::replace(&mut self.residual.s, s);

        state.p = gaussians(&p_mean, &p_var);
        for n in 0..state.h.len() {
            state.h[n] = update_h_belief(problem.y[n], state.lambda_hat, state.p[n])?;
        }
        if !self.freeze_lambda {
            state.lambda_hat = update_lambda(&problem.y, &state.h)?;
        }
        self.p_mean = p_mean;
        self.p_var = p_var;
        self.iteration += 1;
        Ok(())
    }
}

/// Runs the approximate BP-MF solver.
pub fn run_abpmf(problem: &Problem, cfg: &RunConfig) -> Result<IterationTrace> {
    cfg.validate()?;
    let mut solver = AbpmfSolver::new(problem, cfg)?;
    let mut trace = IterationTrace::new(Algorithm::Abpmf, problem.l_cols());
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
