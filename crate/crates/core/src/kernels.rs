//! Stationary covariance functions, their spatial gradients, and the reverting
//! maps that turn an occupancy value back into metric distance.
//!
//! Every kernel here is isotropic, so it is a scalar profile `k(r)` of the
//! separation `r = |a - b|`. The reverting map is the inverse of that profile.

use crate::error::{Error, Result};

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Relative floor on occupancy; caps the distance reported in the far field.
pub const OCCUPANCY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    Matern12,
    Matern32,
    SquaredExponential,
}

impl KernelFamily {
    pub(crate) fn code(self) -> u8 {
        match self {
            KernelFamily::Matern12 => 0,
            KernelFamily::Matern32 => 1,
            KernelFamily::SquaredExponential => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(KernelFamily::Matern12),
            1 => Some(KernelFamily::Matern32),
            2 => Some(KernelFamily::SquaredExponential),
            _ => None,
        }
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "matern12" | "exponential" => Ok(KernelFamily::Matern12),
            "matern32" => Ok(KernelFamily::Matern32),
            "se" | "rbf" | "squared-exponential" | "squaredexponential" => Ok(KernelFamily::SquaredExponential),
            other => Err(Error::InvalidParameter(format!("unknown kernel family {other:?}"))),
        }
    }
}

/// Kernel hyperparameters.
///
/// `logpis_rate` is the decay rate used by the logarithmic transform. For the
/// Matérn family it is tied to the length scale so that the far-field decay of
/// the kernel is `exp(-rate * r)`: `l = 1/rate` for Matern12 and
/// `l = sqrt(3)/rate` for Matern32.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub length_scale: f64,
    pub signal_variance: f64,
    pub logpis_rate: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, length_scale: f64, signal_variance: f64) -> Result<Self> {
        let logpis_rate = match family {
            KernelFamily::Matern32 => SQRT3 / length_scale,
            _ => 1.0 / length_scale,
        };
        let spec = Self {
            family,
            length_scale,
            signal_variance,
            logpis_rate,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A unit-variance Matérn kernel whose length scale is derived from `rate`.
    pub fn from_rate(family: KernelFamily, rate: f64) -> Result<Self> {
        let length_scale = match family {
            KernelFamily::Matern12 => 1.0 / rate,
            KernelFamily::Matern32 => SQRT3 / rate,
            KernelFamily::SquaredExponential => {
                return Err(Error::InvalidParameter(
                    "the logarithmic transform needs a Matern kernel".into(),
                ))
            }
        };
        let spec = Self {
            family,
            length_scale,
            signal_variance: 1.0,
            logpis_rate: rate,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.length_scale) {
            return Err(Error::InvalidParameter(format!(
                "length scale must be positive, got {}",
                self.length_scale
            )));
        }
        if !ok(self.signal_variance) {
            return Err(Error::InvalidParameter(format!(
                "signal variance must be positive, got {}",
                self.signal_variance
            )));
        }
        if !ok(self.logpis_rate) {
            return Err(Error::InvalidParameter(format!(
                "log-GPIS rate must be positive, got {}",
                self.logpis_rate
            )));
        }
        Ok(())
    }

    /// Smallest occupancy fed to the reverting map.
    #[inline]
    pub fn occupancy_floor(&self) -> f64 {
        OCCUPANCY_FLOOR * self.signal_variance
    }

    /// Covariance as a function of separation.
    #[inline]
    pub fn profile(&self, r: f64) -> f64 {
        let l = self.length_scale;
        let s2 = self.signal_variance;
        match self.family {
            KernelFamily::Matern12 => s2 * (-r / l).exp(),
            KernelFamily::Matern32 => {
                let s = SQRT3 * r / l;
                s2 * (1.0 + s) * (-s).exp()
            }
            KernelFamily::SquaredExponential => s2 * (-0.5 * r * r / (l * l)).exp(),
        }
    }

    /// `k'(r) / r`, the factor that turns `a - b` into the gradient w.r.t. `a`.
    /// Zero at `r == 0` for every family (Matern12 by convention).
    #[inline]
    fn radial_factor(&self, r: f64) -> f64 {
        let l = self.length_scale;
        let s2 = self.signal_variance;
        match self.family {
            KernelFamily::Matern12 => {
                if r == 0.0 {
                    0.0
                } else {
                    -s2 * (-r / l).exp() / (l * r)
                }
            }
            KernelFamily::Matern32 => {
                let s = SQRT3 * r / l;
                -3.0 * s2 * (-s).exp() / (l * l)
            }
            KernelFamily::SquaredExponential => -s2 * (-0.5 * r * r / (l * l)).exp() / (l * l),
        }
    }

    /// `k(a, b)`.
    pub fn covariance(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        check_pair(a, b)?;
        Ok(self.covariance_unchecked(a, b))
    }

    #[inline]
    pub(crate) fn covariance_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        self.profile(crate::cloud::dist(a, b))
    }

    /// Gradient of `k(a, b)` with respect to `a`.
    pub fn covariance_grad(&self, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
        check_pair(a, b)?;
        let mut g = vec![0.0; a.len()];
        self.accumulate_grad(a, b, 1.0, &mut g);
        Ok(g)
    }

    /// Adds `weight * grad_a k(a, b)` into `out` and returns `k(a, b)`.
    #[inline]
    pub(crate) fn accumulate_grad(&self, a: &[f64], b: &[f64], weight: f64, out: &mut [f64]) -> f64 {
        let r = crate::cloud::dist(a, b);
        let f = weight * self.radial_factor(r);
        for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
            *o += f * (x - y);
        }
        self.profile(r)
    }

    /// Inverts the kernel profile: occupancy to `(distance, d distance / d occupancy)`.
    ///
    /// Occupancy at or above the signal variance maps to `(0, 0)`. Occupancy
    /// below the floor is raised to the floor first.
    pub fn reverting_distance(&self, occupancy: f64) -> (f64, f64) {
        let s2 = self.signal_variance;
        if occupancy >= s2 {
            return (0.0, 0.0);
        }
        let o = occupancy.max(self.occupancy_floor());
        let u = o / s2;
        let l = self.length_scale;
        match self.family {
            KernelFamily::Matern12 => (-l * ln_unit(u), -l / o),
            KernelFamily::SquaredExponential => {
                let q = -2.0 * ln_unit(u);
                if q <= 0.0 {
                    return (0.0, 0.0);
                }
                let root = q.sqrt();
                (l * root, -l / (o * root))
            }
            KernelFamily::Matern32 => {
                let t = invert_matern32(u);
                if t <= 0.0 {
                    return (0.0, 0.0);
                }
                let du_dt = -t * (-t).exp();
                (l * t / SQRT3, l / (SQRT3 * du_dt * s2))
            }
        }
    }
}

/// `ln u` with extra care near `u = 1`, where the reverting maps are most sensitive.
#[inline]
fn ln_unit(u: f64) -> f64 {
    if u > 0.5 {
        (u - 1.0).ln_1p()
    } else {
        u.ln()
    }
}

/// Solves `(1 + t) exp(-t) = u` for `t >= 0`, `u` in `(0, 1)`.
///
/// Newton from `sqrt(-2 ln u)` inside a shrinking bracket on `[0, 50]`; any
/// iterate leaving the bracket is replaced by the bisection midpoint.
fn invert_matern32(u: f64) -> f64 {
    let (mut lo, mut hi) = (0.0_f64, 50.0_f64);
    let mut t = (-2.0 * ln_unit(u)).sqrt().clamp(lo, hi);
    for _ in 0..50 {
        let e = (-t).exp();
        let g = (1.0 + t) * e - u;
        if g == 0.0 {
            return t;
        }
        // g is decreasing in t
        if g > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let dg = -t * e;
        let mut next = if dg != 0.0 { t - g / dg } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() < 1e-12 {
            return next;
        }
        t = next;
    }
    t
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    crate::error::check_dim(a.len())?;
    if a.iter().chain(b).any(|c| !c.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}
