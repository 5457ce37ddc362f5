use sbl_core::abpmf::{abs_squared, approx_p, approx_q};
use sbl_core::harness::{emit_csv, sweep_snr, Timing, CSV_HEADER};
use sbl_core::oracles::{approximation_gap, support_oracle};
use sbl_core::problem::{read_problem, write_problem};
use sbl_core::{
    generate_problem, nmse_db, run_abpmf, run_bpmf, run_mf_scalar, run_mf_vector, AbpmfSolver,
    Algorithm, DVector, RunConfig,
};

#[test]
fn approximations_are_close_at_full_size() {
    let cfg = RunConfig::default();
    let problem = generate_problem(&cfg, 7).unwrap();
    let gap = approximation_gap(&problem, &cfg, 10).unwrap();
    assert!(gap.max() < 0.05, "{gap:?}");
}

#[test]
fn single_column_gap_is_reported() {
    let cfg = RunConfig {
        m_rows: 4,
        l_cols: 1,
        k_sparsity: 1,
        ..RunConfig::default()
    };
    let problem = generate_problem(&cfg, 0).unwrap();
    let gap = approximation_gap(&problem, &cfg, 3).unwrap();
    assert!(gap.max().is_finite());
    assert!(gap.max() > 0.0);
}

#[test]
fn solver_products_match_the_reference_formulas() {
    let cfg = RunConfig {
        m_rows: 30,
        l_cols: 70,
        k_sparsity: 5,
        ..RunConfig::default()
    };
    let problem = generate_problem(&cfg, 2).unwrap();
    let mut solver = AbpmfSolver::new(&problem, &cfg).unwrap();
    for _ in 0..3 {
        solver.step().unwrap();
    }
    let alpha = solver.state().alpha_mean();
    let s = solver.residual().s.clone();
    let p_var = solver.p_var().clone();
    let lambda = solver.state().lambda_hat;
    let abs2 = abs_squared(&problem.phi);
    let expected_q = approx_q(&problem.phi, &abs2, &alpha, &s, &p_var, lambda);

    solver.freeze_hyperparameters(true, true);
    let before = solver.state().clone();
    let s_before = solver.residual().s.clone();
    solver.step().unwrap();
    for (got, want) in solver.state().q.iter().zip(&expected_q) {
        assert!((got.mean() - want.mean()).norm() < 1e-12 * (1.0 + want.mean().norm()));
        assert!((got.variance() - want.variance()).abs() < 1e-12 * want.variance());
    }
    let (p_mean, p_var) = approx_p(
        &problem.phi,
        &abs2,
        &solver.state().alpha_mean(),
        &solver.state().alpha_var(),
        &s_before,
    );
    assert!((&p_mean - solver.p_mean()).norm() < 1e-12 * p_mean.norm());
    assert!((&p_var - solver.p_var()).norm() < 1e-12 * p_var.norm());
    assert_eq!(before.gamma_hat, solver.state().gamma_hat);
}

#[test]
fn every_solver_recovers_an_easy_instance() {
    let cfg = RunConfig {
        m_rows: 40,
        l_cols: 60,
        k_sparsity: 4,
        snr_db: 30.0,
        ..RunConfig::default()
    };
    let problem = generate_problem(&cfg, 5).unwrap();
    let floor = nmse_db(&support_oracle(&problem).unwrap(), &problem.alpha_true).unwrap();
    for trace in [
        run_bpmf(&problem, &cfg).unwrap(),
        run_abpmf(&problem, &cfg).unwrap(),
        run_mf_vector(&problem, &cfg).unwrap(),
        run_mf_scalar(&problem, &cfg).unwrap(),
    ] {
        let nmse = trace.final_nmse_db().unwrap();
        assert_eq!(trace.rows.len(), 20);
        assert!(
            nmse < -15.0 && nmse > floor - 1.0,
            "{} {nmse} (floor {floor})",
            trace.algorithm
        );
    }
}

#[test]
fn problem_files_round_trip_through_disk() {
    let cfg = RunConfig {
        m_rows: 6,
        l_cols: 9,
        k_sparsity: 2,
        ..RunConfig::default()
    };
    let problem = generate_problem(&cfg, 1).unwrap();
    let dir = std::env::temp_dir().join(format!("sbl-core-roundtrip-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("problem.txt");
    let mut file = std::fs::File::create(&path).unwrap();
    write_problem(&problem, &mut file).unwrap();
    drop(file);
    let back = read_problem(std::io::BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
    assert_eq!(back.phi, problem.phi);
    assert_eq!(back.y, problem.y);
    assert_eq!(back.alpha_true, problem.alpha_true);
    assert_eq!(back.lambda_true, None);
    let a = run_bpmf(&problem, &cfg).unwrap();
    let b = run_bpmf(&back, &cfg).unwrap();
    assert_eq!(a.alpha_estimate, b.alpha_estimate);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn csv_reruns_are_byte_identical_without_timing() {
    let cfg = RunConfig {
        m_rows: 10,
        l_cols: 16,
        k_sparsity: 2,
        trials: 3,
        iterations: 4,
        ..RunConfig::default()
    };
    let dir = std::env::temp_dir().join(format!("sbl-core-csv-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let (a, b) = (dir.join("a.csv"), dir.join("b.csv"));
    for path in [&a, &b] {
        let result = sweep_snr(&cfg, &[5.0, 15.0], &Algorithm::ALL).unwrap();
        emit_csv(&result, path, Timing::Omitted).unwrap();
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
    assert_eq!(text.lines().count(), 1 + 4 * 2 * 3 * 4);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn zero_truth_is_skipped_not_fatal() {
    let cfg = RunConfig {
        m_rows: 10,
        l_cols: 16,
        k_sparsity: 0,
        trials: 2,
        iterations: 3,
        ..RunConfig::default()
    };
    let result = sweep_snr(&cfg, &[10.0], &Algorithm::ALL).unwrap();
    for stats in &result.points[0].stats {
        assert_eq!(stats.trials, 0);
        assert_eq!(stats.skipped, 2);
        assert!(stats.mean_nmse_db.is_none());
    }
    let estimate: &DVector<_> = &result.runs[0].trace.alpha_estimate;
    assert_eq!(estimate.len(), 16);
}
