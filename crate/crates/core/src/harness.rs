//! Monte Carlo experiment runner.
//!
//! Every axis point runs `cfg.trials` independent problems; each problem is
//! generated once and handed to every enabled algorithm, so comparisons are
//! paired. Trials run in parallel and are reassembled in trial order, so the
//! results do not depend on scheduling.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::abpmf::run_abpmf;
use crate::baselines::{run_mf_scalar, run_mf_vector};
use crate::bpmf::run_bpmf;
use crate::error::Result;
use crate::problem::{generate_problem, Problem, RunConfig};
use crate::trace::{Algorithm, IterationTrace};

pub const CSV_HEADER: &str =
    "algorithm,axis,axis_value,trial,iteration,nmse_db,mse_abs,lambda_hat,wall_ms";

/// Runs one algorithm on one problem.
pub fn run_algorithm(
    algorithm: Algorithm,
    problem: &Problem,
    cfg: &RunConfig,
) -> Result<IterationTrace> {
    match algorithm {
        Algorithm::Bpmf => run_bpmf(problem, cfg),
        Algorithm::Abpmf => run_abpmf(problem, cfg),
        Algorithm::MfVector => run_mf_vector(problem, cfg),
        Algorithm::MfScalar => run_mf_scalar(problem, cfg),
    }
}

/// The swept quantity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    SnrDb,
    K,
    Iteration,
}

impl Axis {
    pub fn label(&self) -> &'static str {
        match self {
            Axis::SnrDb => "snr_db",
            Axis::K => "k",
            Axis::Iteration => "iteration",
        }
    }
}

/// One solver run at one axis point.
#[derive(Clone, Debug)]
pub struct TrialRun {
    pub axis_value: f64,
    pub trace: IterationTrace,
}

/// Aggregated NMSE of one algorithm at one axis point.
#[derive(Clone, Debug, PartialEq)]
pub struct AlgorithmStats {
    pub algorithm: Algorithm,
    /// Mean of the per-trial NMSE values in dB; `None` if every trial was
    /// skipped.
    pub mean_nmse_db: Option<f64>,
    /// Standard error of that mean.
    pub std_error_db: Option<f64>,
    /// Trials with a defined NMSE.
    pub trials: usize,
    /// Trials whose NMSE was undefined (all-zero ground truth).
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub axis_value: f64,
    pub stats: Vec<AlgorithmStats>,
}

impl SweepPoint {
    pub fn stats_for(&self, algorithm: Algorithm) -> Option<&AlgorithmStats> {
        self.stats.iter().find(|s| s.algorithm == algorithm)
    }

    pub fn mean_nmse_db(&self, algorithm: Algorithm) -> Option<f64> {
        self.stats_for(algorithm).and_then(|s| s.mean_nmse_db)
    }
}

/// Aggregated curves plus the per-trial traces behind them.
#[derive(Clone, Debug)]
pub struct SweepResult {
    pub axis: Axis,
    pub trials: usize,
    pub algorithms: Vec<Algorithm>,
    pub points: Vec<SweepPoint>,
    /// Ordered by (algorithm, axis value, trial).
    pub runs: Vec<TrialRun>,
}

impl SweepResult {
    pub fn empty(axis: Axis) -> Self {
        Self {
            axis,
            trials: 0,
            algorithms: Vec::new(),
            points: Vec::new(),
            runs: Vec::new(),
        }
    }

    pub fn point(&self, axis_value: f64) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.axis_value == axis_value)
    }

    pub fn runs_for(
        &self,
        algorithm: Algorithm,
        axis_value: f64,
    ) -> impl Iterator<Item = &TrialRun> {
        self.runs
            .iter()
            .filter(move |r| r.trace.algorithm == algorithm && r.axis_value == axis_value)
    }
}

fn aggregate(
    algorithm: Algorithm,
    values: impl IntoIterator<Item = Option<f64>>,
) -> AlgorithmStats {
    let mut defined = Vec::new();
    let mut skipped = 0;
    for v in values {
        match v {
            Some(v) => defined.push(v),
            None => skipped += 1,
        }
    }
    let n = defined.len();
    let (mean, se) = if n == 0 {
        (None, None)
    } else {
        let mean = defined.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = defined.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        (Some(mean), Some(se))
    };
    AlgorithmStats {
        algorithm,
        mean_nmse_db: mean,
        std_error_db: se,
        trials: n,
        skipped,
    }
}

/// Runs `cfg.trials` paired trials of every algorithm at one configuration.
/// Returns one trace per (algorithm, trial), algorithm-major.
pub fn run_paired_trials(cfg: &RunConfig, algorithms: &[Algorithm]) -> Result<Vec<IterationTrace>> {
    cfg.validate()?;
    let per_trial: Vec<Vec<IterationTrace>> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|trial| {
            let problem = generate_problem(cfg, trial)?;
            algorithms
                .iter()
                .map(|&alg| {
                    let mut trace = run_algorithm(alg, &problem, cfg)?;
                    trace.trial = trial;
                    Ok(trace)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = Vec::with_capacity(cfg.trials * algorithms.len());
    for a in 0..algorithms.len() {
        for traces in &per_trial {
            out.push(traces[a].clone());
        }
    }
    Ok(out)
}

fn sorted_algorithms(algorithms: &[Algorithm]) -> Vec<Algorithm> {
    let mut algs = algorithms.to_vec();
    algs.sort();
    algs.dedup();
    algs
}

fn sweep<T: Copy>(
    cfg: &RunConfig,
    axis: Axis,
    values: &[T],
    algorithms: &[Algorithm],
    apply: impl Fn(&mut RunConfig, T) -> f64,
) -> Result<SweepResult> {
    let algorithms = sorted_algorithms(algorithms);
    let mut points = Vec::with_capacity(values.len());
    let mut runs = Vec::new();
    for &v in values {
        let mut point_cfg = cfg.clone();
        let axis_value = apply(&mut point_cfg, v);
        let traces = run_paired_trials(&point_cfg, &algorithms)?;
        let stats = algorithms
            .iter()
            .map(|&alg| {
                aggregate(
                    alg,
                    traces
                        .iter()
                        .filter(|t| t.algorithm == alg)
                        .map(|t| t.final_nmse_db()),
                )
            })
            .collect();
        points.push(SweepPoint { axis_value, stats });
        runs.extend(
            traces
                .into_iter()
                .map(|trace| TrialRun { axis_value, trace }),
        );
    }
    runs.sort_by(|a, b| {
        a.trace
            .algorithm
            .cmp(&b.trace.algorithm)
            .then(a.axis_value.total_cmp(&b.axis_value))
            .then(a.trace.trial.cmp(&b.trace.trial))
    });
    Ok(SweepResult {
        axis,
        trials: cfg.trials,
        algorithms,
        points,
        runs,
    })
}

/// NMSE versus SNR at fixed `cfg.k_sparsity`.
pub fn sweep_snr(
    cfg: &RunConfig,
    snr_list: &[f64],
    algorithms: &[Algorithm],
) -> Result<SweepResult> {
    sweep(cfg, Axis::SnrDb, snr_list, algorithms, |c, snr| {
        c.snr_db = snr;
        snr
    })
}

/// NMSE versus the number of nonzeros at fixed `cfg.snr_db`.
pub fn sweep_k(cfg: &RunConfig, k_list: &[usize], algorithms: &[Algorithm]) -> Result<SweepResult> {
    sweep(cfg, Axis::K, k_list, algorithms, |c, k| {
        c.k_sparsity = k;
        k as f64
    })
}

/// NMSE versus iteration index at `cfg`. Each point aggregates the
/// per-trial NMSE after that iteration.
pub fn trace_convergence(cfg: &RunConfig, algorithms: &[Algorithm]) -> Result<SweepResult> {
    let algorithms = sorted_algorithms(algorithms);
    let traces = run_paired_trials(cfg, &algorithms)?;
    Ok(convergence_from_traces(cfg.trials, cfg.snr_db, traces))
}

/// Groups finished traces into an iteration-axis result. Points run up to
/// the longest trace.
pub fn convergence_from_traces(
    trials: usize,
    snr_db: f64,
    traces: Vec<IterationTrace>,
) -> SweepResult {
    let algorithms = sorted_algorithms(&traces.iter().map(|t| t.algorithm).collect::<Vec<_>>());
    let iterations = traces.iter().map(|t| t.rows.len()).max().unwrap_or(0);
    let points = (1..=iterations)
        .map(|it| SweepPoint {
            axis_value: it as f64,
            stats: algorithms
                .iter()
                .map(|&alg| {
                    aggregate(
                        alg,
                        traces.iter().filter(|t| t.algorithm == alg).map(|t| {
                            // Early-stopped runs hold their last value.
                            t.rows.get(it - 1).or(t.rows.last()).and_then(|r| r.nmse_db)
                        }),
                    )
                })
                .collect(),
        })
        .collect();
    SweepResult {
        axis: Axis::Iteration,
        trials,
        algorithms,
        points,
        runs: traces
            .into_iter()
            .map(|trace| TrialRun {
                axis_value: snr_db,
                trace,
            })
            .collect(),
    }
}

/// Whether measured wall times are written to the CSV. Omitting them makes
/// the file a pure function of the configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Timing {
    Measured,
    Omitted,
}

/// 17 significant digits: enough to round-trip any `f64`.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

fn format_axis_value(axis: Axis, v: f64) -> String {
    match axis {
        Axis::SnrDb => format_float(v),
        Axis::K | Axis::Iteration => format!("{}", v as i64),
    }
}

/// Writes one row per (algorithm, axis value, trial, iteration).
pub fn write_csv<W: Write>(result: &SweepResult, out: &mut W, timing: Timing) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for run in &result.runs {
        for row in &run.trace.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                run.trace.algorithm.label(),
                result.axis.label(),
                // For convergence traces the axis value of a row is its iteration.
                match result.axis {
                    Axis::Iteration => row.iteration.to_string(),
                    axis => format_axis_value(axis, run.axis_value),
                },
                run.trace.trial,
                row.iteration,
                row.nmse_db.map(format_float).unwrap_or_default(),
                format_float(row.mse_abs),
                format_float(row.lambda_hat),
                match timing {
                    Timing::Measured => format_float(row.wall_ms),
                    Timing::Omitted => String::new(),
                },
            )?;
        }
    }
    Ok(())
}

pub fn emit_csv(result: &SweepResult, path: &Path, timing: Timing) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_csv(result, &mut out, timing)?;
    out.flush()?;
    Ok(())
}

/// Writes the aggregated curves: one row per (axis value, algorithm).
pub fn write_summary<W: Write>(result: &SweepResult, out: &mut W) -> Result<()> {
    writeln!(
        out,
        "axis,axis_value,algorithm,mean_nmse_db,std_error_db,trials,skipped"
    )?;
    for point in &result.points {
        for s in &point.stats {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                result.axis.label(),
                format_axis_value(result.axis, point.axis_value),
                s.algorithm.label(),
                s.mean_nmse_db.map(format_float).unwrap_or_default(),
                s.std_error_db.map(format_float).unwrap_or_default(),
                s.trials,
                s.skipped
            )?;
        }
    }
    Ok(())
}
