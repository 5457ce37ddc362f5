//! Complex circular Gaussian and Gamma message algebra.
//!
//! Messages are stored as `(mean, precision)`. A flat message has zero
//! precision and carries no information; a point mass has infinite
//! precision. Products and quotients are formed in precision /
//! precision-weighted-mean coordinates.

use std::fmt;
use std::ops::Mul;

use num_complex::Complex64;

use crate::error::{contract, Result, SblError};

/// Quotients whose precision falls below this fraction of the numerator
/// precision are treated as flat.
const DIVIDE_RELATIVE_FLOOR: f64 = 1e-14;

/// A complex circular Gaussian `CN(x; mean, variance)` used as a message or
/// a belief.
#[derive(Clone, Copy, PartialEq)]
pub struct GaussianMsg {
    mean: Complex64,
    precision: f64,
}

impl GaussianMsg {
    /// The uninformative message (infinite variance).
    pub const FLAT: GaussianMsg = GaussianMsg {
        mean: Complex64::new(0.0, 0.0),
        precision: 0.0,
    };

    /// Builds `CN(mean, variance)`. An infinite variance yields [`GaussianMsg::FLAT`];
    /// a zero variance yields a point mass.
    pub fn new(mean: Complex64, variance: f64) -> Result<Self> {
        if variance.is_nan() || variance < 0.0 {
            return Err(contract(format!("variance must be >= 0, got {variance}")));
        }
        if !(mean.re.is_finite() && mean.im.is_finite()) {
            return Err(contract(format!("mean must be finite, got {mean}")));
        }
        if variance.is_infinite() {
            return Ok(Self::FLAT);
        }
        Ok(Self {
            mean,
            precision: 1.0 / variance,
        })
    }

    pub fn from_precision(mean: Complex64, precision: f64) -> Result<Self> {
        if precision.is_nan() || precision < 0.0 {
            return Err(contract(format!("precision must be >= 0, got {precision}")));
        }
        if precision == 0.0 {
            return Ok(Self::FLAT);
        }
        if !(mean.re.is_finite() && mean.im.is_finite()) {
            return Err(contract(format!("mean must be finite, got {mean}")));
        }
        Ok(Self { mean, precision })
    }

    /// Hot-path constructor for the solvers. Non-positive or NaN precision
    /// collapses to flat.
    #[inline]
    pub(crate) fn from_precision_or_flat(mean: Complex64, precision: f64) -> Self {
        if precision > 0.0 {
            Self { mean, precision }
        } else {
            Self::FLAT
        }
    }

    /// Builds a message from precision and precision-weighted mean.
    #[inline]
    pub(crate) fn from_natural(weighted_mean: Complex64, precision: f64) -> Self {
        if precision > 0.0 && precision.is_finite() {
            Self {
                mean: weighted_mean / precision,
                precision,
            }
        } else {
            Self::FLAT
        }
    }

    #[inline]
    pub fn is_flat(&self) -> bool {
        self.precision == 0.0
    }

    #[inline]
    pub fn mean(&self) -> Complex64 {
        self.mean
    }

    /// Variance; `f64::INFINITY` for a flat message.
    #[inline]
    pub fn variance(&self) -> f64 {
        1.0 / self.precision
    }

    #[inline]
    pub fn precision(&self) -> f64 {
        self.precision
    }

    /// `precision * mean`, zero for a flat message.
    #[inline]
    pub fn weighted_mean(&self) -> Complex64 {
        if self.is_flat() {
            Complex64::new(0.0, 0.0)
        } else {
            self.mean * self.precision
        }
    }
}

impl fmt::Debug for GaussianMsg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_flat() {
            write!(f, "CN(flat)")
        } else {
            write!(f, "CN({}, {})", self.mean, self.variance())
        }
    }
}

/// Pairwise product. Flat operands are the identity; a point mass absorbs
/// any finite-precision operand.
impl Mul for GaussianMsg {
    type Output = GaussianMsg;

    fn mul(self, rhs: GaussianMsg) -> GaussianMsg {
        if rhs.is_flat() {
            return self;
        }
        if self.is_flat() {
            return rhs;
        }
        if self.precision.is_infinite() {
            return self;
        }
        if rhs.precision.is_infinite() {
            return rhs;
        }
        let precision = self.precision + rhs.precision;
        let mean = (self.mean * self.precision + rhs.mean * rhs.precision) / precision;
        GaussianMsg { mean, precision }
    }
}

/// Normalized product of Gaussian messages.
///
/// Precisions add; the mean is the precision-weighted average of the
/// non-flat members. Fails with [`SblError::NoInformation`] if the list is
/// empty or every member is flat.
pub fn gaussian_product(msgs: &[GaussianMsg]) -> Result<GaussianMsg> {
    let mut precision = 0.0;
    let mut weighted = Complex64::new(0.0, 0.0);
    for m in msgs.iter().filter(|m| !m.is_flat()) {
        if m.precision.is_infinite() {
            return Ok(*m);
        }
        precision += m.precision;
        weighted += m.mean * m.precision;
    }
    if precision == 0.0 {
        return Err(SblError::NoInformation);
    }
    Ok(GaussianMsg {
        mean: weighted / precision,
        precision,
    })
}

/// Quotient `belief / msg`, i.e. the belief with `msg` removed.
///
/// A non-positive resulting precision (including self-division) yields
/// [`GaussianMsg::FLAT`]. Dividing by a flat message is a no-op.
pub fn gaussian_divide(belief: GaussianMsg, msg: GaussianMsg) -> Result<GaussianMsg> {
    if belief.is_flat() {
        return Err(contract("cannot divide a flat belief"));
    }
    Ok(divide_or_flat(belief, msg))
}

#[inline]
pub(crate) fn divide_or_flat(belief: GaussianMsg, msg: GaussianMsg) -> GaussianMsg {
    if msg.is_flat() || (belief.precision.is_infinite() && msg.precision.is_finite()) {
        return belief;
    }
    let precision = belief.precision - msg.precision;
    if !(precision > belief.precision * DIVIDE_RELATIVE_FLOOR) || !precision.is_finite() {
        return GaussianMsg::FLAT;
    }
    let weighted = belief.mean * belief.precision - msg.mean * msg.precision;
    GaussianMsg {
        mean: weighted / precision,
        precision,
    }
}

/// `E|x|^2 = |mean|^2 + variance`.
pub fn second_moment(m: GaussianMsg) -> Result<f64> {
    if m.is_flat() {
        return Err(contract("second moment of a flat message is undefined"));
    }
    Ok(m.mean.norm_sqr() + m.variance())
}

/// Gamma distribution with shape/rate parameterization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaBelief {
    shape: f64,
    rate: f64,
}

impl GammaBelief {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite()) {
            return Err(contract(format!(
                "gamma shape must be positive, got {shape}"
            )));
        }
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(contract(format!("gamma rate must be positive, got {rate}")));
        }
        Ok(Self { shape, rate })
    }

    /// Belief on a precision `γ` after combining the hyperprior
    /// `Ga(γ; epsilon, eta)` with the mean-field message
    /// `γ exp(-γ E|α|²)` from a zero-mean Gaussian factor.
    pub fn precision_posterior(epsilon: f64, eta: f64, second_moment: f64) -> Result<Self> {
        Self::new(epsilon + 1.0, eta + second_moment)
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cn(re: f64, im: f64, var: f64) -> GaussianMsg {
        GaussianMsg::new(Complex64::new(re, im), var).unwrap()
    }

    fn close(a: GaussianMsg, b: GaussianMsg, tol: f64) -> bool {
        (a.mean() - b.mean()).norm() <= tol * (1.0 + b.mean().norm())
            && (a.variance() - b.variance()).abs() <= tol * b.variance()
    }

    #[test]
    fn product_examples() {
        let p = gaussian_product(&[cn(0.0, 0.0, 1.0), cn(0.0, 0.0, 1.0)]).unwrap();
        assert!(close(p, cn(0.0, 0.0, 0.5), 1e-15));

        let p = gaussian_product(&[cn(2.0, 0.0, 1.0)]).unwrap();
        assert_eq!(p, cn(2.0, 0.0, 1.0));

        let p = gaussian_product(&[cn(1.0, 0.0, 1.0), cn(3.0, 0.0, 0.5)]).unwrap();
        assert!(close(p, cn(7.0 / 3.0, 0.0, 1.0 / 3.0), 1e-15));
    }

    #[test]
    fn product_skips_flat_and_rejects_all_flat() {
        let a = cn(1.0, -1.0, 2.0);
        assert_eq!(gaussian_product(&[GaussianMsg::FLAT, a]).unwrap(), a);
        assert!(matches!(
            gaussian_product(&[GaussianMsg::FLAT, GaussianMsg::FLAT]),
            Err(SblError::NoInformation)
        ));
        assert!(matches!(
            gaussian_product(&[]),
            Err(SblError::NoInformation)
        ));
        assert_eq!(a * GaussianMsg::FLAT, a);
        assert_eq!(GaussianMsg::FLAT * a, a);
    }

    #[test]
    fn negative_variance_is_rejected() {
        assert!(matches!(
            GaussianMsg::new(Complex64::new(0.0, 0.0), -1.0),
            Err(SblError::ContractViolation(_))
        ));
        assert!(GaussianMsg::new(Complex64::new(0.0, 0.0), f64::NAN).is_err());
        assert!(GaussianMsg::from_precision(Complex64::new(0.0, 0.0), -2.0).is_err());
    }

    #[test]
    fn divide_examples() {
        let q = gaussian_divide(cn(7.0 / 3.0, 0.0, 1.0 / 3.0), cn(1.0, 0.0, 1.0)).unwrap();
        assert!(close(q, cn(3.0, 0.0, 0.5), 1e-14));

        let b = cn(0.3, 0.2, 1.7);
        assert_eq!(gaussian_divide(b, GaussianMsg::FLAT).unwrap(), b);

        let unit = cn(0.0, 0.0, 1.0);
        assert!(gaussian_divide(unit, unit).unwrap().is_flat());
    }

    #[test]
    fn divide_negative_precision_is_flat() {
        // The removed message is more informative than the belief.
        let q = gaussian_divide(cn(0.0, 0.0, 1.0), cn(1.0, 0.0, 0.5)).unwrap();
        assert!(q.is_flat());
        assert!(gaussian_divide(GaussianMsg::FLAT, cn(0.0, 0.0, 1.0)).is_err());
    }

    #[test]
    fn second_moment_examples() {
        assert_eq!(second_moment(cn(0.0, 0.0, 1.0)).unwrap(), 1.0);
        assert_eq!(second_moment(cn(3.0, 0.0, 0.0)).unwrap(), 9.0);
        assert!((second_moment(cn(1.0, 1.0, 2.0)).unwrap() - 4.0).abs() < 1e-15);
        assert!(second_moment(GaussianMsg::FLAT).is_err());
    }

    #[test]
    fn point_mass_dominates_product() {
        let point = cn(3.0, 0.0, 0.0);
        let p = gaussian_product(&[cn(0.0, 0.0, 1.0), point]).unwrap();
        assert_eq!(p.mean(), Complex64::new(3.0, 0.0));
        assert_eq!(p.variance(), 0.0);
    }

    #[test]
    fn gamma_belief() {
        let g = GammaBelief::precision_posterior(1.0, 1.0, 1.0).unwrap();
        assert_eq!(g.shape(), 2.0);
        assert_eq!(g.rate(), 2.0);
        assert_eq!(g.mean(), 1.0);
        assert!(GammaBelief::new(0.0, 1.0).is_err());
        assert!(GammaBelief::new(1.0, 0.0).is_err());
    }
}
