//! Synthetic compressed-sensing problems and recovery metrics.
//!
//! A problem is `y = Φ α + ω` with an `M × L` dictionary `Φ` of i.i.d.
//! unit-variance circular complex Gaussian entries, a `K`-sparse `α` whose
//! nonzeros are also unit-variance complex Gaussian, and white noise of
//! precision `λ`.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SblError};

/// NMSE reported for an exact recovery.
pub const NMSE_FLOOR_DB: f64 = -300.0;

/// Experiment parameters shared by problem generation, the solvers and the
/// Monte Carlo harness.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Measurements (rows of the dictionary).
    pub m_rows: usize,
    /// Signal length (columns of the dictionary).
    pub l_cols: usize,
    /// Number of nonzero coefficients.
    pub k_sparsity: usize,
    pub snr_db: f64,
    pub iterations: usize,
    pub trials: usize,
    pub seed: u64,
    /// Gamma hyperprior shape on each coefficient precision.
    pub epsilon: f64,
    /// Gamma hyperprior rate on each coefficient precision.
    pub eta: f64,
    /// Damping applied to the approximate solver's residual and `ν_p`
    /// updates; `1.0` disables it.
    pub damping: f64,
    /// Stop early once the largest change of the coefficient means in an
    /// iteration drops below this value.
    pub stop_tolerance: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            m_rows: 100,
            l_cols: 200,
            k_sparsity: 26,
            snr_db: 14.0,
            iterations: 20,
            trials: 200,
            seed: 1,
            epsilon: 1e-10,
            eta: 1e-10,
            damping: 1.0,
            stop_tolerance: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SblError::InvalidConfig(msg));
        if self.m_rows == 0 || self.l_cols == 0 {
            return bad(format!(
                "dimensions must be positive (m={}, l={})",
                self.m_rows, self.l_cols
            ));
        }
        if self.k_sparsity > self.l_cols {
            return bad(format!(
                "k ({}) exceeds the number of columns ({})",
                self.k_sparsity, self.l_cols
            ));
        }
        if self.iterations == 0 {
            return bad("iterations must be >= 1".into());
        }
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if !self.snr_db.is_finite() {
            return bad(format!("snr must be finite, got {}", self.snr_db));
        }
        if !(self.epsilon >= 0.0 && self.eta >= 0.0) {
            return bad(format!(
                "hyperprior parameters must be >= 0 (epsilon={}, eta={})",
                self.epsilon, self.eta
            ));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return bad(format!("damping must lie in (0, 1], got {}", self.damping));
        }
        Ok(())
    }
}

/// One realization of the measurement model.
#[derive(Clone, Debug, PartialEq)]
pub struct Problem {
    pub phi: DMatrix<Complex64>,
    pub y: DVector<Complex64>,
    pub alpha_true: DVector<Complex64>,
    /// Noise precision used to draw `y`. Unknown for problems read back from
    /// a dump file, which does not record it.
    pub lambda_true: Option<f64>,
    pub k_sparsity: usize,
    pub seed: u64,
}

impl Problem {
    pub fn m_rows(&self) -> usize {
        self.phi.nrows()
    }

    pub fn l_cols(&self) -> usize {
        self.phi.ncols()
    }

    /// Indices of the nonzero entries of `alpha_true`.
    pub fn support(&self) -> Vec<usize> {
        self.alpha_true
            .iter()
            .enumerate()
            .filter(|(_, a)| **a != Complex64::new(0.0, 0.0))
            .map(|(i, _)| i)
            .collect()
    }

    /// Builds a problem from explicit data, checking shapes.
    pub fn from_parts(
        phi: DMatrix<Complex64>,
        y: DVector<Complex64>,
        alpha_true: DVector<Complex64>,
        lambda_true: Option<f64>,
    ) -> Result<Self> {
        if phi.nrows() != y.len() || phi.ncols() != alpha_true.len() {
            return Err(SblError::ContractViolation(format!(
                "shape mismatch: phi {}x{}, y {}, alpha {}",
                phi.nrows(),
                phi.ncols(),
                y.len(),
                alpha_true.len()
            )));
        }
        let k_sparsity = alpha_true
            .iter()
            .filter(|a| **a != Complex64::new(0.0, 0.0))
            .count();
        Ok(Self {
            phi,
            y,
            alpha_true,
            lambda_true,
            k_sparsity,
            seed: 0,
        })
    }
}

/// Independent random stream for one Monte Carlo trial.
pub fn trial_rng(seed: u64, trial_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial_index);
    rng
}

/// Draws from `CN(0, variance)`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let scale = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(scale * re, scale * im)
}

/// Noise precision giving the requested per-measurement SNR when the signal
/// has `k` unit-variance nonzeros seen through unit-variance dictionary rows.
pub fn snr_to_lambda(snr_db: f64, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(SblError::DegenerateInput(
            "SNR is undefined for an all-zero signal".into(),
        ));
    }
    Ok(10f64.powf(snr_db / 10.0) / k as f64)
}

/// Generates trial `trial_index` of the experiment described by `cfg`.
///
/// The dictionary is drawn first, then the support, the coefficients and the
/// noise, all from the trial's own stream. Problems for the same
/// `(seed, trial_index)` therefore share `Φ` across SNR points.
pub fn generate_problem(cfg: &RunConfig, trial_index: u64) -> Result<Problem> {
    cfg.validate()?;
    let (m, l, k) = (cfg.m_rows, cfg.l_cols, cfg.k_sparsity);
    // An empty support has no signal power; reference the noise to unit power.
    let lambda_true = snr_to_lambda(cfg.snr_db, k.max(1))?;

    let mut rng = trial_rng(cfg.seed, trial_index);
    let phi = DMatrix::from_fn(m, l, |_, _| complex_normal(&mut rng, 1.0));

    let mut support = index::sample(&mut rng, l, k).into_vec();
    support.sort_unstable();
    let mut alpha_true = DVector::zeros(l);
    for &i in &support {
        let mut a = complex_normal(&mut rng, 1.0);
        // Probability zero, but the support size is part of the contract.
        while a == Complex64::new(0.0, 0.0) {
            a = complex_normal(&mut rng, 1.0);
        }
        alpha_true[i] = a;
    }

    let noise = DVector::from_fn(m, |_, _| complex_normal(&mut rng, 1.0 / lambda_true));
    let y = &phi * &alpha_true + noise;

    Ok(Problem {
        phi,
        y,
        alpha_true,
        lambda_true: Some(lambda_true),
        k_sparsity: k,
        seed: cfg.seed,
    })
}

/// Normalized squared error `‖estimate − truth‖² / ‖truth‖²` in dB, floored
/// at [`NMSE_FLOOR_DB`].
pub fn nmse_db(estimate: &DVector<Complex64>, truth: &DVector<Complex64>) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(SblError::ContractViolation(format!(
            "length mismatch: {} vs {}",
            estimate.len(),
            truth.len()
        )));
    }
    let power = truth.norm_squared();
    if power == 0.0 {
        return Err(SblError::DegenerateInput(
            "NMSE is undefined for a zero truth vector".into(),
        ));
    }
    let err = (estimate - truth).norm_squared();
    if err == 0.0 {
        return Ok(NMSE_FLOOR_DB);
    }
    Ok((10.0 * (err / power).log10()).max(NMSE_FLOOR_DB))
}

/// Absolute squared error per coefficient, `‖estimate − truth‖² / L`.
pub fn mse_abs(estimate: &DVector<Complex64>, truth: &DVector<Complex64>) -> f64 {
    (estimate - truth).norm_squared() / truth.len().max(1) as f64
}

fn write_complex<W: Write>(out: &mut W, z: Complex64) -> std::io::Result<()> {
    writeln!(out, "{:.16e},{:.16e}", z.re, z.im)
}

/// Writes the text dump: a `M L K seed` header, then `Φ` row-major, `y`
/// and `alpha_true`, one `re,im` element per line.
pub fn write_problem<W: Write>(problem: &Problem, out: &mut W) -> Result<()> {
    let (m, l) = (problem.m_rows(), problem.l_cols());
    writeln!(out, "{} {} {} {}", m, l, problem.k_sparsity, problem.seed)?;
    for n in 0..m {
        for c in 0..l {
            write_complex(out, problem.phi[(n, c)])?;
        }
    }
    for z in problem.y.iter().chain(problem.alpha_true.iter()) {
        write_complex(out, *z)?;
    }
    Ok(())
}

/// Parses the format produced by [`write_problem`].
pub fn read_problem<R: BufRead>(input: R) -> Result<Problem> {
    let mut lines = input
        .lines()
        .enumerate()
        .map(|(i, line)| (i + 1, line))
        .filter(|(_, line)| !matches!(line, Ok(s) if s.trim().is_empty()));

    let parse_err = |line: usize, message: String| SblError::Parse { line, message };

    let (line_no, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header".into()))?;
    let header = header?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 {
        return Err(parse_err(
            line_no,
            format!("expected `M L K seed`, got `{header}`"),
        ));
    }
    let int = |s: &str| {
        s.parse::<u64>()
            .map_err(|e| parse_err(line_no, format!("bad header field `{s}`: {e}")))
    };
    let (m, l, k, seed) = (
        int(fields[0])? as usize,
        int(fields[1])? as usize,
        int(fields[2])? as usize,
        int(fields[3])?,
    );

    let mut next_complex = || -> Result<Complex64> {
        let (line_no, line) = lines
            .next()
            .ok_or_else(|| parse_err(0, "unexpected end of file".into()))?;
        let line = line?;
        let (re, im) = line
            .trim()
            .split_once(',')
            .ok_or_else(|| parse_err(line_no, format!("expected `re,im`, got `{line}`")))?;
        let re: f64 = re
            .trim()
            .parse()
            .map_err(|e| parse_err(line_no, format!("bad real part: {e}")))?;
        let im: f64 = im
            .trim()
            .parse()
            .map_err(|e| parse_err(line_no, format!("bad imaginary part: {e}")))?;
        Ok(Complex64::new(re, im))
    };

    let mut phi = DMatrix::zeros(m, l);
    for n in 0..m {
        for c in 0..l {
            phi[(n, c)] = next_complex()?;
        }
    }
    let mut y = DVector::zeros(m);
    for n in 0..m {
        y[n] = next_complex()?;
    }
    let mut alpha_true = DVector::zeros(l);
    for c in 0..l {
        alpha_true[c] = next_complex()?;
    }

    let mut problem = Problem::from_parts(phi, y, alpha_true, None)?;
    if problem.k_sparsity != k {
        return Err(parse_err(
            line_no,
            format!(
                "header declares K={k} but alpha has {} nonzeros",
                problem.k_sparsity
            ),
        ));
    }
    problem.seed = seed;
    Ok(problem)
}
