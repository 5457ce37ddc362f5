//! `sbl`: problem generation, single runs and Monte Carlo sweeps.

mod config;

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::ConfigFile;
use sbl_core::harness::{
    convergence_from_traces, sweep_k, sweep_snr, trace_convergence, write_csv, write_summary,
    Timing,
};
use sbl_core::oracles::{approximation_gap, belief_consistency_check, support_oracle};
use sbl_core::problem::{read_problem, write_problem};
use sbl_core::{
    generate_problem, nmse_db, run_algorithm, Algorithm, BpmfSolver, Problem, Result, RunConfig,
    SblError, SweepResult,
};

#[derive(Parser, Debug)]
#[command(
    name = "sbl",
    version,
    about = "Sparse Bayesian learning with BP/mean-field message passing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write one synthetic problem instance.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        snr: Option<f64>,
        /// Trial index selecting the random stream.
        #[arg(long, default_value_t = 0)]
        trial: u64,
    },
    /// Run one algorithm on a problem file and print its per-iteration trace.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_algorithm)]
        alg: Algorithm,
        #[arg(long)]
        problem: PathBuf,
        /// Append an oracle report.
        #[arg(long)]
        check: bool,
    },
    /// NMSE versus SNR.
    SweepSnr {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        k: Option<usize>,
        /// `start:stop:step` in dB, or a comma-separated list.
        #[arg(long, default_value = "0:30:2")]
        snr: String,
        #[arg(long, value_parser = parse_algorithm, value_delimiter = ',')]
        alg: Vec<Algorithm>,
    },
    /// NMSE versus the number of nonzero coefficients.
    SweepK {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        snr: Option<f64>,
        /// `start:stop:step`, or a comma-separated list.
        #[arg(long, default_value = "5:40:5")]
        k: String,
        #[arg(long, value_parser = parse_algorithm, value_delimiter = ',')]
        alg: Vec<Algorithm>,
    },
    /// NMSE versus iteration index.
    Trace {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        snr: Option<f64>,
        #[arg(long, value_parser = parse_algorithm, value_delimiter = ',')]
        alg: Vec<Algorithm>,
    },
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// `key = value` file; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    /// Damping of the approximate solver, in (0, 1].
    #[arg(long)]
    damping: Option<f64>,
    /// Output file (stdout if absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Leave `wall_ms` empty so reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
}

fn parse_algorithm(s: &str) -> std::result::Result<Algorithm, String> {
    s.parse().map_err(|e: SblError| e.to_string())
}

/// Parses `start:stop:step` or `a,b,c`.
fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = |msg: String| SblError::InvalidConfig(msg);
    let parse = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|e| bad(format!("bad number {t:?}: {e}")))
    };
    let parts: Vec<&str> = s.split(':').collect();
    let values = match parts.as_slice() {
        [start, stop, step] => {
            let (start, stop, step) = (parse(start)?, parse(stop)?, parse(step)?);
            if !(step > 0.0) || stop < start {
                return Err(bad(format!("range {s:?} needs step > 0 and stop >= start")));
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
            (0..count).map(|i| start + i as f64 * step).collect()
        }
        [_] => s.split(',').map(parse).collect::<Result<Vec<_>>>()?,
        _ => {
            return Err(bad(format!(
                "expected start:stop:step or a list, got {s:?}"
            )))
        }
    };
    if values.is_empty() {
        return Err(bad("empty grid".into()));
    }
    Ok(values)
}

fn parse_k_grid(s: &str) -> Result<Vec<usize>> {
    parse_grid(s)?
        .into_iter()
        .map(|v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(SblError::InvalidConfig(format!(
                    "K must be a non-negative integer, got {v}"
                )))
            }
        })
        .collect()
}

struct Settings {
    cfg: RunConfig,
    out: Option<PathBuf>,
    timing: Timing,
}

fn resolve(common: &Common, k: Option<usize>, snr: Option<f64>) -> Result<Settings> {
    let file = match &common.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let mut cfg = RunConfig::default();
    macro_rules! layer {
        ($field:ident, $key:literal, $flag:expr) => {
            if let Some(v) = file.get($key)? {
                cfg.$field = v;
            }
            if let Some(v) = $flag {
                cfg.$field = v;
            }
        };
    }
    layer!(m_rows, "m", common.m);
    layer!(l_cols, "l", common.l);
    layer!(k_sparsity, "k", k);
    layer!(snr_db, "snr", snr);
    layer!(iterations, "iters", common.iters);
    layer!(trials, "trials", common.trials);
    layer!(seed, "seed", common.seed);
    layer!(epsilon, "epsilon", common.epsilon);
    layer!(eta, "eta", common.eta);
    layer!(damping, "damping", common.damping);
    let out = common
        .out
        .clone()
        .or_else(|| file.raw("out").map(PathBuf::from));
    let no_timing = common.no_timing || file.get::<bool>("no-timing")?.unwrap_or(false);
    Ok(Settings {
        cfg,
        out,
        timing: if no_timing {
            Timing::Omitted
        } else {
            Timing::Measured
        },
    })
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn algorithms_or_all(algs: Vec<Algorithm>) -> Vec<Algorithm> {
    if algs.is_empty() {
        Algorithm::ALL.to_vec()
    } else {
        algs
    }
}

/// Full trace to `--out` (or stdout); with `--out`, the summary goes to stdout.
fn emit(result: &SweepResult, settings: &Settings) -> Result<()> {
    let mut out = open_output(settings.out.as_deref())?;
    write_csv(result, &mut out, settings.timing)?;
    out.flush()?;
    if settings.out.is_some() {
        let stdout = io::stdout();
        let mut lock = stdout.lock();
        write_summary(result, &mut lock)?;
    }
    Ok(())
}

fn check_report(alg: Algorithm, problem: &Problem, cfg: &RunConfig) -> Result<Vec<String>> {
    let mut lines = vec!["# oracle report".to_string()];
    match support_oracle(problem).and_then(|est| nmse_db(&est, &problem.alpha_true)) {
        Ok(floor) => lines.push(format!("# support_oracle_nmse_db = {floor:.6}")),
        Err(e) => lines.push(format!("# support_oracle_nmse_db = n/a ({e})")),
    }
    match alg {
        Algorithm::Bpmf => {
            let mut solver = BpmfSolver::new(problem, cfg)?;
            let (mut worst, mut skipped) = (0.0f64, 0);
            for _ in 0..cfg.iterations {
                solver.step()?;
                let report = belief_consistency_check(solver.state(), solver.grid());
                worst = worst.max(report.max_deviation());
                skipped = skipped.max(report.columns_skipped);
            }
            lines.push(format!("# belief_consistency_max_deviation = {worst:.3e}"));
            lines.push(format!("# belief_consistency_columns_skipped = {skipped}"));
        }
        Algorithm::Abpmf => {
            let gap = approximation_gap(problem, cfg, cfg.iterations)?;
            lines.push(format!(
                "# approximation_gap q_mean = {:.3e}, q_var = {:.3e}, p_mean = {:.3e}, p_var = {:.3e}",
                gap.q_mean, gap.q_var, gap.p_mean, gap.p_var
            ));
        }
        Algorithm::MfVector | Algorithm::MfScalar => {}
    }
    Ok(lines)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            common,
            k,
            snr,
            trial,
        } => {
            let settings = resolve(&common, k, snr)?;
            let problem = generate_problem(&settings.cfg, trial)?;
            let mut out = open_output(settings.out.as_deref())?;
            write_problem(&problem, &mut out)?;
            out.flush()?;
        }
        Command::Run {
            common,
            alg,
            problem,
            check,
        } => {
            let problem = read_problem(BufReader::new(File::open(&problem)?))?;
            let mut settings = resolve(&common, Some(problem.k_sparsity), None)?;
            settings.cfg.m_rows = problem.m_rows();
            settings.cfg.l_cols = problem.l_cols();
            settings.cfg.trials = 1;
            let trace = run_algorithm(alg, &problem, &settings.cfg)?;
            let result = convergence_from_traces(1, settings.cfg.snr_db, vec![trace]);
            let mut out = open_output(settings.out.as_deref())?;
            write_csv(&result, &mut out, settings.timing)?;
            if check {
                for line in check_report(alg, &problem, &settings.cfg)? {
                    writeln!(out, "{line}")?;
                }
            }
            out.flush()?;
        }
        Command::SweepSnr {
            common,
            k,
            snr,
            alg,
        } => {
            let settings = resolve(&common, k, None)?;
            let result = sweep_snr(&settings.cfg, &parse_grid(&snr)?, &algorithms_or_all(alg))?;
            emit(&result, &settings)?;
        }
        Command::SweepK {
            common,
            snr,
            k,
            alg,
        } => {
            let settings = resolve(&common, None, snr)?;
            let k_list = parse_k_grid(&k)?;
            if let Some(&too_big) = k_list.iter().find(|&&k| k > settings.cfg.l_cols) {
                return Err(SblError::InvalidConfig(format!(
                    "K = {too_big} exceeds L = {}",
                    settings.cfg.l_cols
                )));
            }
            let result = sweep_k(&settings.cfg, &k_list, &algorithms_or_all(alg))?;
            emit(&result, &settings)?;
        }
        Command::Trace {
            common,
            k,
            snr,
            alg,
        } => {
            let settings = resolve(&common, k, snr)?;
            let result = trace_convergence(&settings.cfg, &algorithms_or_all(alg))?;
            emit(&result, &settings)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(parse_grid("0:30:2").unwrap().len(), 16);
        assert_eq!(
            parse_grid("0:1:0.25").unwrap(),
            vec![0.0, 0.25, 0.5, 0.75, 1.0]
        );
        assert_eq!(parse_grid("3, 7,11").unwrap(), vec![3.0, 7.0, 11.0]);
        assert!(parse_grid("5:0:1").is_err());
        assert!(parse_grid("0:5:0").is_err());
        assert!(parse_grid("1:2").is_err());
        assert_eq!(parse_k_grid("10:40:10").unwrap(), vec![10, 20, 30, 40]);
        assert!(parse_k_grid("2.5").is_err());
    }

    #[test]
    fn flags_override_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "m = 40\nl = 80\niters = 7\nno-timing = true\n").unwrap();
        let common = Common {
            config: Some(path),
            m: Some(30),
            l: None,
            iters: None,
            trials: None,
            seed: None,
            epsilon: None,
            eta: None,
            damping: None,
            out: None,
            no_timing: false,
        };
        let s = resolve(&common, Some(3), None).unwrap();
        assert_eq!(
            (
                s.cfg.m_rows,
                s.cfg.l_cols,
                s.cfg.iterations,
                s.cfg.k_sparsity
            ),
            (30, 80, 7, 3)
        );
        assert_eq!(s.timing, Timing::Omitted);
    }
}
