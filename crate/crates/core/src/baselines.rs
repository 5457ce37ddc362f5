//! Mean-field SBL baselines on the conventional factor graph.
//!
//! Both use the same Gaussian prior with Gamma hyperprior on each
//! coefficient precision and the same `1/λ` prior on the noise precision as
//! the BP-MF solvers. They differ in how the coefficient belief factorizes:
//!
//! * vector form: one joint Gaussian `CN(μ, Σ)` with
//!   `Σ = (λ̂ ΦᴴΦ + diag(γ̂))⁻¹`, `μ = λ̂ Σ Φᴴ y`, an `L × L` inversion per
//!   iteration;
//! * scalar form: one Gaussian per coefficient, visited in order with a
//!   running residual, `O(M L)` per sweep.
//!
//! In both, `γ̂` and `λ̂` are refreshed once per iteration after the
//! coefficient update.

use std::time::Instant;

use log::warn;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::bpmf::{initial_lambda, max_abs_change, noise_precision_from_residual, update_gamma};
use crate::error::{contract, Result, SblError};
use crate::gaussian::GaussianMsg;
use crate::problem::{Problem, RunConfig};
use crate::trace::{Algorithm, IterationTrace};

/// Diagonal loading applied when the system matrix is not numerically
/// positive definite.
pub const SINGULAR_REGULARIZATION: f64 = 1e-12;

/// Joint posterior covariance `Σ` of the vector-form baseline.
#[derive(Clone, Debug)]
pub struct PosteriorCovariance {
    pub sigma: DMatrix<Complex64>,
}

impl PosteriorCovariance {
    pub fn diagonal(&self) -> DVector<f64> {
        self.sigma.diagonal().map(|z| z.re)
    }

    /// Largest `|Σ_ij − conj(Σ_ji)|`.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.sigma.nrows();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..=i {
                worst = worst.max((self.sigma[(i, j)] - self.sigma[(j, i)].conj()).norm());
            }
        }
        worst
    }
}

/// Gaussian posterior of the coefficients for fixed `γ̂`, `λ̂`, given the
/// Gram matrix `ΦᴴΦ` and `Φᴴy`.
pub fn vector_posterior(
    gram: &DMatrix<Complex64>,
    phi_h_y: &DVector<Complex64>,
    gamma_hat: &[f64],
    lambda_hat: f64,
) -> Result<(DVector<Complex64>, PosteriorCovariance)> {
    let l = gram.nrows();
    if gamma_hat.len() != l || phi_h_y.len() != l {
        return Err(contract("dimension mismatch in vector posterior"));
    }
    let mut system = gram * Complex64::new(lambda_hat, 0.0);
    for (i, g) in gamma_hat.iter().enumerate() {
        system[(i, i)] += g;
    }
    let chol = match system.clone().cholesky() {
        Some(chol) => chol,
        None => {
            warn!("posterior system matrix is not positive definite; regularizing the diagonal");
            for i in 0..l {
                system[(i, i)] += SINGULAR_REGULARIZATION;
            }
            system.cholesky().ok_or_else(|| {
                SblError::DegenerateInput("posterior system matrix is singular".into())
            })?
        }
    };
    let sigma = chol.inverse();
    let mean = &sigma * phi_h_y * Complex64::new(lambda_hat, 0.0);
    Ok((mean, PosteriorCovariance { sigma }))
}

/// Step-wise vector-form mean-field solver.
#[derive(Clone, Debug)]
pub struct MfVectorSolver<'a> {
    problem: &'a Problem,
    gram: DMatrix<Complex64>,
    phi_h_y: DVector<Complex64>,
    epsilon: f64,
    eta: f64,
    pub gamma_hat: Vec<f64>,
    pub lambda_hat: f64,
    mean: DVector<Complex64>,
    covariance: Option<PosteriorCovariance>,
}

impl<'a> MfVectorSolver<'a> {
    pub fn new(problem: &'a Problem, cfg: &RunConfig) -> Result<Self> {
        let lambda_hat = initial_lambda(problem)?;
        let l = problem.l_cols();
        Ok(Self {
            problem,
            gram: problem.phi.ad_mul(&problem.phi),
            phi_h_y: problem.phi.ad_mul(&problem.y),
            epsilon: cfg.epsilon,
            eta: cfg.eta,
            gamma_hat: vec![1.0; l],
            lambda_hat,
            mean: DVector::zeros(l),
            covariance: None,
        })
    }

    pub fn mean(&self) -> &DVector<Complex64> {
        &self.mean
    }

    pub fn covariance(&self) -> Option<&PosteriorCovariance> {
        self.covariance.as_ref()
    }

    pub fn step(&mut self) -> Result<()> {
        let (mean, cov) =
            vector_posterior(&self.gram, &self.phi_h_y, &self.gamma_hat, self.lambda_hat)?;
        let diag = cov.diagonal();
        for l in 0..mean.len() {
            let belief = GaussianMsg::new(mean[l], diag[l].max(0.0))?;
            self.gamma_hat[l] = update_gamma(belief, self.epsilon, self.eta)?;
        }
        // E‖y − Φα‖² = ‖y − Φμ‖² + tr(Σ ΦᴴΦ).
        let residual = &self.problem.y - &self.problem.phi * &mean;
        let trace: f64 = cov
            .sigma
            .iter()
            .zip(self.gram.transpose().iter())
            .map(|(s, g)| (s * g).re)
            .sum();
        self.lambda_hat = noise_precision_from_residual(
            self.problem.m_rows(),
            residual.norm_squared() + trace.max(0.0),
        )?;
        self.mean = mean;
        self.covariance = Some(cov);
        Ok(())
    }
}

/// One in-order sweep of scalar mean-field updates with `γ̂`, `λ̂` held
/// fixed. `residual` must equal `y − Φ mean` on entry and is kept in sync.
pub fn scalar_sweep(
    phi: &DMatrix<Complex64>,
    column_power: &[f64],
    gamma_hat: &[f64],
    lambda_hat: f64,
    mean: &mut DVector<Complex64>,
    var: &mut DVector<f64>,
    residual: &mut DVector<Complex64>,
) {
    for l in 0..phi.ncols() {
        let column = phi.column(l);
        let nu = 1.0 / (lambda_hat * column_power[l] + gamma_hat[l]);
        let old = mean[l];
        let new = (column.dotc(residual) + old * column_power[l]) * (nu * lambda_hat);
        let delta = new - old;
        if delta != Complex64::new(0.0, 0.0) {
            residual.axpy(-delta, &column, Complex64::new(1.0, 0.0));
        }
        mean[l] = new;
        var[l] = nu;
    }
}

/// Step-wise scalar-form mean-field solver.
#[derive(Clone, Debug)]
pub struct MfScalarSolver<'a> {
    problem: &'a Problem,
    column_power: Vec<f64>,
    epsilon: f64,
    eta: f64,
    pub gamma_hat: Vec<f64>,
    pub lambda_hat: f64,
    mean: DVector<Complex64>,
    var: DVector<f64>,
    residual: DVector<Complex64>,
}

impl<'a> MfScalarSolver<'a> {
    pub fn new(problem: &'a Problem, cfg: &RunConfig) -> Result<Self> {
        let lambda_hat = initial_lambda(problem)?;
        let l = problem.l_cols();
        let column_power = (0..l)
            .map(|c| problem.phi.column(c).norm_squared())
            .collect();
        Ok(Self {
            problem,
            column_power,
            epsilon: cfg.epsilon,
            eta: cfg.eta,
            gamma_hat: vec![1.0; l],
            lambda_hat,
            mean: DVector::zeros(l),
            var: DVector::from_element(l, 1.0),
            residual: problem.y.clone(),
        })
    }

    pub fn mean(&self) -> &DVector<Complex64> {
        &self.mean
    }

    pub fn var(&self) -> &DVector<f64> {
        &self.var
    }

    pub fn step(&mut self) -> Result<()> {
        scalar_sweep(
            &self.problem.phi,
            &self.column_power,
            &self.gamma_hat,
            self.lambda_hat,
            &mut self.mean,
            &mut self.var,
            &mut self.residual,
        );
        for l in 0..self.mean.len() {
            let belief = GaussianMsg::new(self.mean[l], self.var[l])?;
            self.gamma_hat[l] = update_gamma(belief, self.epsilon, self.eta)?;
        }
        let spread: f64 = self
            .column_power
            .iter()
            .zip(self.var.iter())
            .map(|(c, v)| c * v)
            .sum();
        self.lambda_hat = noise_precision_from_residual(
            self.problem.m_rows(),
            self.residual.norm_squared() + spread,
        )?;
        Ok(())
    }
}

pub fn run_mf_vector(problem: &Problem, cfg: &RunConfig) -> Result<IterationTrace> {
    cfg.validate()?;
    let mut solver = MfVectorSolver::new(problem, cfg)?;
    let mut trace = IterationTrace::new(Algorithm::MfVector, problem.l_cols());
    let mut previous = solver.mean().clone();
    for _ in 0..cfg.iterations {
        let start = Instant::now();
        solver.step()?;
        let elapsed = start.elapsed();
        let alpha = solver.mean().clone();
        let change = max_abs_change(&previous, &alpha);
        trace.record(problem, alpha.clone(), solver.lambda_hat, elapsed);
        if cfg.stop_tolerance.is_some_and(|tol| change < tol) {
            break;
        }
        previous = alpha;
    }
    Ok(trace)
}

pub fn run_mf_scalar(problem: &Problem, cfg: &RunConfig) -> Result<IterationTrace> {
    cfg.validate()?;
    let mut solver = MfScalarSolver::new(problem, cfg)?;
    let mut trace = IterationTrace::new(Algorithm::MfScalar, problem.l_cols());
    let mut previous = solver.mean().clone();
    for _ in 0..cfg.iterations {
        let start = Instant::now();
        solver.step()?;
        let elapsed = start.elapsed();
        let alpha = solver.mean().clone();
        let change = max_abs_change(&previous, &alpha);
        trace.record(problem, alpha.clone(), solver.lambda_hat, elapsed);
        if cfg.stop_tolerance.is_some_and(|tol| change < tol) {
            break;
        }
        previous = alpha;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::generate_problem;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn scalar_closed_form() {
        let gram = DMatrix::from_element(1, 1, c(1.0, 0.0));
        let phi_h_y = DVector::from_element(1, c(2.0, 0.0));
        let (mean, cov) = vector_posterior(&gram, &phi_h_y, &[1.0], 1.0).unwrap();
        assert!((cov.sigma[(0, 0)] - c(0.5, 0.0)).norm() < 1e-15);
        assert!((mean[0] - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn huge_prior_precision_shrinks_to_zero() {
        let cfg = RunConfig {
            m_rows: 10,
            l_cols: 15,
            k_sparsity: 4,
            ..RunConfig::default()
        };
        let p = generate_problem(&cfg, 0).unwrap();
        let gram = p.phi.ad_mul(&p.phi);
        let phy = p.phi.ad_mul(&p.y);
        let (mean, cov) = vector_posterior(&gram, &phy, &[1e12; 15], 1.0).unwrap();
        assert!(mean.norm() < 1e-9);
        assert!(cov.hermitian_defect() < 1e-12);
    }

    #[test]
    fn posterior_covariance_is_hermitian_with_positive_diagonal() {
        let cfg = RunConfig {
            m_rows: 20,
            l_cols: 30,
            k_sparsity: 5,
            ..RunConfig::default()
        };
        let p = generate_problem(&cfg, 1).unwrap();
        let mut solver = MfVectorSolver::new(&p, &cfg).unwrap();
        for _ in 0..5 {
            solver.step().unwrap();
        }
        let cov = solver.covariance().unwrap();
        assert!(cov.hermitian_defect() < 1e-12 * cov.sigma.norm());
        assert!(cov.diagonal().iter().all(|d| *d > 0.0));
    }

    #[test]
    fn sweep_on_orthogonal_columns_matches_vector_posterior() {
        // Columns of a scaled unitary DFT matrix are orthogonal.
        let n = 8;
        let phi = DMatrix::from_fn(n, n, |r, k| {
            let angle = -2.0 * std::f64::consts::PI * (r * k) as f64 / n as f64;
            Complex64::from_polar(0.7, angle)
        });
        let y = DVector::from_fn(n, |i, _| c(i as f64 - 3.0, 0.5 * i as f64));
        let gamma: Vec<f64> = (0..n).map(|i| 0.3 + i as f64).collect();
        let lambda = 2.5;

        let (expected, cov) =
            vector_posterior(&phi.ad_mul(&phi), &phi.ad_mul(&y), &gamma, lambda).unwrap();

        let power: Vec<f64> = (0..n).map(|l| phi.column(l).norm_squared()).collect();
        let mut mean = DVector::zeros(n);
        let mut var = DVector::from_element(n, 1.0);
        let mut residual = y.clone();
        scalar_sweep(
            &phi,
            &power,
            &gamma,
            lambda,
            &mut mean,
            &mut var,
            &mut residual,
        );

        assert!((&mean - &expected).norm() < 1e-8);
        for l in 0..n {
            assert!((var[l] - cov.sigma[(l, l)].re).abs() < 1e-12);
        }
        assert!((&residual - (&y - &phi * &mean)).norm() < 1e-12);
    }

    #[test]
    fn both_baselines_recover_an_easy_problem() {
        let cfg = RunConfig {
            m_rows: 30,
            l_cols: 40,
            k_sparsity: 3,
            snr_db: 30.0,
            ..RunConfig::default()
        };
        let p = generate_problem(&cfg, 2).unwrap();
        let v = run_mf_vector(&p, &cfg).unwrap();
        let s = run_mf_scalar(&p, &cfg).unwrap();
        assert_eq!(v.rows.len(), 20);
        assert!(
            v.final_nmse_db().unwrap() < -15.0,
            "{:?}",
            v.final_nmse_db()
        );
        assert!(
            s.final_nmse_db().unwrap() < -15.0,
            "{:?}",
            s.final_nmse_db()
        );
    }
}
