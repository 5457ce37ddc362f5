use nalgebra::linalg::Schur;
use proptest::prelude::*;

use sbl_core::baselines::{scalar_sweep, vector_posterior};
use sbl_core::bpmf::{msg_delta_to_h, LAMBDA_MAX, LAMBDA_MIN};
use sbl_core::harness::run_paired_trials;
use sbl_core::oracles::belief_consistency_check;
use sbl_core::problem::trial_rng;
use sbl_core::{
    gaussian_divide, gaussian_product, generate_problem, run_algorithm, Algorithm, BpmfSolver,
    Complex64, DMatrix, DVector, EdgeMessageGrid, GaussianMsg, Problem, RunConfig,
};

fn message() -> impl Strategy<Value = GaussianMsg> {
    (-100.0..100.0f64, -100.0..100.0f64, -4.0..4.0f64)
        .prop_map(|(re, im, lv)| GaussianMsg::new(Complex64::new(re, im), 10f64.powf(lv)).unwrap())
}

fn same(a: GaussianMsg, b: GaussianMsg, tol: f64) -> bool {
    let scale = a.mean().norm().max(b.mean().norm()).max(1.0);
    (a.precision() - b.precision()).abs() <= tol * a.precision().max(b.precision())
        && (a.mean() - b.mean()).norm() <= tol * scale
}

proptest! {
    #[test]
    fn product_is_commutative(a in message(), b in message()) {
        let ab = gaussian_product(&[a, b]).unwrap();
        let ba = gaussian_product(&[b, a]).unwrap();
        prop_assert!(same(ab, ba, 1e-12));
    }

    #[test]
    fn product_is_associative(a in message(), b in message(), c in message()) {
        let left = gaussian_product(&[gaussian_product(&[a, b]).unwrap(), c]).unwrap();
        let right = gaussian_product(&[a, gaussian_product(&[b, c]).unwrap()]).unwrap();
        prop_assert!(same(left, right, 1e-12), "{:?} vs {:?}", left, right);
    }

    #[test]
    fn divide_undoes_product(a in message(), b in message()) {
        prop_assume!((a.precision() - b.precision()).abs() > 1e-6 * a.precision().max(b.precision()));
        prop_assume!(b.precision() < 1e3 * a.precision());
        let back = gaussian_divide(gaussian_product(&[a, b]).unwrap(), b).unwrap();
        prop_assert!(same(back, a, 1e-10), "{:?} vs {:?}", back, a);
    }

    #[test]
    fn product_variance_is_below_every_input(msgs in proptest::collection::vec(message(), 1..6)) {
        let prod = gaussian_product(&msgs).unwrap();
        for m in &msgs {
            prop_assert!(prod.variance() <= m.variance() * (1.0 + 1e-12));
        }
    }
}

fn random_problem(m: usize, l: usize, k: usize, snr_db: f64, seed: u64) -> (Problem, RunConfig) {
    let cfg = RunConfig {
        m_rows: m,
        l_cols: l,
        k_sparsity: k,
        snr_db,
        seed,
        ..RunConfig::default()
    };
    (generate_problem(&cfg, 0).unwrap(), cfg)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn bpmf_bookkeeping_holds_every_iteration(
        m in 3usize..12,
        l in 3usize..16,
        k in 1usize..3,
        snr in 0.0..30.0f64,
        seed in any::<u64>(),
    ) {
        let (problem, cfg) = random_problem(m, l, k.min(l), snr, seed);
        let mut solver = BpmfSolver::new(&problem, &cfg).unwrap();
        for _ in 0..15 {
            solver.step().unwrap();
            let report = belief_consistency_check(solver.state(), solver.grid());
            prop_assert!(report.max_deviation() < 1e-10, "{:?}", report);
            let lambda = solver.state().lambda_hat;
            prop_assert!((LAMBDA_MIN..=LAMBDA_MAX).contains(&lambda));
            prop_assert!(solver.state().p.iter().all(|p| p.variance() >= 0.0));
        }
    }

    #[test]
    fn constraint_message_variance_is_monotone_in_edge_variances(
        seed in any::<u64>(),
        bump in 1e-3..10.0f64,
        row in 0usize..4,
        col in 0usize..5,
    ) {
        let (problem, _) = random_problem(4, 5, 2, 10.0, seed);
        let mut rng = trial_rng(seed, 1);
        let mut grid = EdgeMessageGrid::new(&problem);
        for n in 0..4 {
            for j in 0..5 {
                let v = 0.1 + rand::Rng::random::<f64>(&mut rng);
                grid.set_alpha_to_delta(n, j, GaussianMsg::new(Complex64::new(v, -v), v).unwrap());
            }
        }
        let before = msg_delta_to_h(&grid, &problem, row);
        let edge = grid.alpha_to_delta(row, col);
        grid.set_alpha_to_delta(row, col, GaussianMsg::new(edge.mean(), edge.variance() + bump).unwrap());
        let after = msg_delta_to_h(&grid, &problem, row);
        prop_assert!(before.variance() >= 0.0);
        prop_assert!(after.variance() >= before.variance());
    }

}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn scalar_sweeps_reach_the_vector_posterior(
        l in 1usize..9,
        extra_rows in 0usize..6,
        seed in any::<u64>(),
        lambda in 0.1..10.0f64,
    ) {
        let case = SweepCase::new(l + extra_rows, l, seed, lambda);
        prop_assume!(case.radius <= 0.8);
        let rel = case.deviation_after(100);
        prop_assert!(rel < 1e-6, "relative deviation {rel}");
    }

    #[test]
    fn scalar_sweeps_share_the_vector_fixed_point(
        m in 1usize..10,
        l in 1usize..9,
        seed in any::<u64>(),
        lambda in 0.1..10.0f64,
    ) {
        let case = SweepCase::new(m, l, seed, lambda);
        prop_assert!(case.radius < 1.0, "spectral radius {}", case.radius);
        let sweeps = (1e-10f64.ln() / case.radius.max(1e-3).ln()).ceil() as usize + 10;
        prop_assume!(sweeps <= 200_000);
        let rel = case.deviation_after(sweeps);
        prop_assert!(rel < 1e-6, "relative deviation {rel} after {sweeps} sweeps");
    }
}

/// Coordinate sweeps against the joint posterior with fixed `γ` and `λ`.
/// `radius` is the spectral radius of the Gauss-Seidel iteration matrix of
/// `λ ΦᴴΦ + diag(γ)`.
struct SweepCase {
    problem: Problem,
    gamma: Vec<f64>,
    lambda: f64,
    exact: DVector<Complex64>,
    radius: f64,
}

impl SweepCase {
    fn new(m: usize, l: usize, seed: u64, lambda: f64) -> Self {
        let (problem, _) = random_problem(m, l, 1, 10.0, seed);
        let mut rng = trial_rng(seed, 2);
        let gamma: Vec<f64> = (0..l)
            .map(|_| 0.1 + 5.0 * rand::Rng::random::<f64>(&mut rng))
            .collect();
        let phi = &problem.phi;
        let gram = phi.adjoint() * phi;
        let (exact, _) = vector_posterior(&gram, &phi.ad_mul(&problem.y), &gamma, lambda).unwrap();

        let a = gram * Complex64::from(lambda)
            + DMatrix::from_diagonal(&DVector::from_iterator(
                l,
                gamma.iter().map(|&g| Complex64::from(g)),
            ));
        let lower = a.lower_triangle();
        let upper = a - &lower;
        let iteration = -lower.try_inverse().unwrap() * upper;
        let radius = Schur::new(iteration)
            .eigenvalues()
            .unwrap()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        Self {
            problem,
            gamma,
            lambda,
            exact,
            radius,
        }
    }

    fn deviation_after(&self, sweeps: usize) -> f64 {
        let phi = &self.problem.phi;
        let l = phi.ncols();
        let power: Vec<f64> = (0..l).map(|j| phi.column(j).norm_squared()).collect();
        let mut mean = DVector::zeros(l);
        let mut var = DVector::from_element(l, 1.0);
        let mut residual = self.problem.y.clone();
        for _ in 0..sweeps {
            scalar_sweep(
                phi,
                &power,
                &self.gamma,
                self.lambda,
                &mut mean,
                &mut var,
                &mut residual,
            );
        }
        (&mean - &self.exact).norm() / self.exact.norm().max(1e-300)
    }
}

#[test]
fn dictionary_entries_have_unit_variance() {
    let cfg = RunConfig {
        m_rows: 100,
        l_cols: 100,
        k_sparsity: 5,
        ..RunConfig::default()
    };
    let problem = generate_problem(&cfg, 3).unwrap();
    let power = problem.phi.iter().map(|z| z.norm_sqr()).sum::<f64>() / 1e4;
    assert!((power - 1.0).abs() < 0.05, "empirical variance {power}");
}

#[test]
fn noise_power_matches_the_noise_precision() {
    let cfg = RunConfig {
        m_rows: 50,
        l_cols: 80,
        k_sparsity: 8,
        snr_db: 10.0,
        ..RunConfig::default()
    };
    let mut total = 0.0;
    let mut lambda = 0.0;
    for trial in 0..100 {
        let p = generate_problem(&cfg, trial).unwrap();
        total += (&p.y - &p.phi * &p.alpha_true).norm_squared() / cfg.m_rows as f64;
        lambda = p.lambda_true.unwrap();
    }
    let empirical = total / 100.0;
    assert!(
        (empirical * lambda - 1.0).abs() < 0.1,
        "noise power {empirical}, expected {}",
        1.0 / lambda
    );
}

#[test]
fn paired_trials_share_one_problem() {
    let cfg = RunConfig {
        m_rows: 12,
        l_cols: 20,
        k_sparsity: 3,
        trials: 4,
        iterations: 5,
        ..RunConfig::default()
    };
    let traces = run_paired_trials(&cfg, &Algorithm::ALL).unwrap();
    assert_eq!(traces.len(), 16);
    for trace in &traces {
        let problem = generate_problem(&cfg, trace.trial).unwrap();
        let alone = run_algorithm(trace.algorithm, &problem, &cfg).unwrap();
        assert_eq!(alone.alpha_estimate, trace.alpha_estimate);
    }
}

#[test]
fn mf_vector_covariance_matches_a_direct_inverse() {
    let (problem, _) = random_problem(6, 5, 2, 15.0, 11);
    let gamma = [0.5, 1.0, 2.0, 4.0, 8.0];
    let phi = &problem.phi;
    let gram = phi.adjoint() * phi;
    let (_, cov) = vector_posterior(&gram, &phi.ad_mul(&problem.y), &gamma, 3.0).unwrap();
    let mut system: DMatrix<Complex64> = &gram * Complex64::new(3.0, 0.0);
    for (i, g) in gamma.iter().enumerate() {
        system[(i, i)] += g;
    }
    let inv = system.try_inverse().unwrap();
    assert!((cov.sigma - inv).norm() < 1e-12);
}
