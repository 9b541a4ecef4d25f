//! Distance fields built on a fitted occupancy GP.
//!
//! Two transforms map the GP posterior mean `m(q)` to metric distance:
//!
//! * **Log-GPIS**: `d = -ln(m / sigma^2) / rate`, `grad d = -grad m / (rate * m)`.
//! * **Reverting**: `d = revert(m)` (inverse kernel profile),
//!   `grad d = revert'(m) * grad m`.
//!
//! Fields are unsigned: `d >= 0` everywhere.

use rayon::prelude::*;

use crate::cloud::{norm, PointCloud};
use crate::error::{Error, Result};
use crate::gp::{GpModel, Moments};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::oracle::median_nn_spacing;

/// Default observation noise variance for surface samples.
pub const DEFAULT_NOISE_VARIANCE: f64 = 1e-4;

/// Length scale of the default reverting kernel, in units of median sample spacing.
pub const REVERTING_SPACING_FACTOR: f64 = 4.0;

/// Rate of the default Log-GPIS kernel, in units of inverse median sample spacing.
pub const LOG_GPIS_SPACING_RATE: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FieldVariant {
    LogGpis,
    Reverting,
}

impl std::str::FromStr for FieldVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "loggpis" | "log-gpis" | "log" => Ok(FieldVariant::LogGpis),
            "reverting" | "revert" => Ok(FieldVariant::Reverting),
            other => Err(Error::InvalidParameter(format!("unknown field variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldConfig {
    pub variant: FieldVariant,
    pub kernel: KernelSpec,
    pub noise_variance: f64,
    pub uncertainty_beta: f64,
}

impl FieldConfig {
    pub fn reverting(kernel: KernelSpec) -> Self {
        Self {
            variant: FieldVariant::Reverting,
            kernel,
            noise_variance: DEFAULT_NOISE_VARIANCE,
            uncertainty_beta: 1.0,
        }
    }

    /// Log-GPIS over a unit-variance Matérn kernel with decay `rate` (1/m).
    pub fn log_gpis(family: KernelFamily, rate: f64) -> Result<Self> {
        Ok(Self {
            variant: FieldVariant::LogGpis,
            kernel: KernelSpec::from_rate(family, rate)?,
            noise_variance: DEFAULT_NOISE_VARIANCE,
            uncertainty_beta: 1.0,
        })
    }

    pub fn with_noise(mut self, noise_variance: f64) -> Self {
        self.noise_variance = noise_variance;
        self
    }

    /// Hyperparameters adapted to the sampling density of `cloud`.
    ///
    /// Reverting: squared-exponential kernel with `l = 4 s`, where `s` is the
    /// median nearest-neighbour spacing. Log-GPIS: Matern12 with
    /// `rate = LOG_GPIS_SPACING_RATE / s`.
    pub fn from_cloud(cloud: &PointCloud, variant: FieldVariant) -> Result<Self> {
        let spacing = median_nn_spacing(cloud).ok_or_else(|| {
            Error::InvalidParameter("need at least two distinct points to pick a length scale".into())
        })?;
        match variant {
            FieldVariant::Reverting => Ok(Self::reverting(KernelSpec::new(
                KernelFamily::SquaredExponential,
                REVERTING_SPACING_FACTOR * spacing,
                1.0,
            )?)),
            FieldVariant::LogGpis => Self::log_gpis(KernelFamily::Matern12, LOG_GPIS_SPACING_RATE / spacing),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if !(self.noise_variance.is_finite() && self.noise_variance >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise variance must be non-negative, got {}",
                self.noise_variance
            )));
        }
        if !(self.uncertainty_beta.is_finite() && self.uncertainty_beta >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "uncertainty beta must be non-negative, got {}",
                self.uncertainty_beta
            )));
        }
        if self.variant == FieldVariant::LogGpis {
            let k = &self.kernel;
            let tied = match k.family {
                KernelFamily::Matern12 => k.length_scale * k.logpis_rate,
                KernelFamily::Matern32 => k.length_scale * k.logpis_rate / 3f64.sqrt(),
                KernelFamily::SquaredExponential => {
                    return Err(Error::InvalidParameter(
                        "log-GPIS needs a Matern12 or Matern32 kernel".into(),
                    ))
                }
            };
            if (tied - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter(
                    "log-GPIS length scale must be tied to the rate".into(),
                ));
            }
        }
        Ok(())
    }

    /// Smallest occupancy passed through the distance transform.
    ///
    /// The reverting maps use the kernel floor. The logarithm stays accurate
    /// far below it, so Log-GPIS only guards against `ln 0`.
    pub fn occupancy_floor(&self) -> f64 {
        match self.variant {
            FieldVariant::Reverting => self.kernel.occupancy_floor(),
            FieldVariant::LogGpis => f64::MIN_POSITIVE * self.kernel.signal_variance,
        }
    }

    /// Occupancy to `(distance, d distance / d occupancy)`. Occupancy at or above
    /// the signal variance is the surface; below the floor it is raised to the floor.
    pub fn occupancy_to_distance(&self, occupancy: f64) -> (f64, f64) {
        match self.variant {
            FieldVariant::Reverting => self.kernel.reverting_distance(occupancy),
            FieldVariant::LogGpis => {
                let s2 = self.kernel.signal_variance;
                if occupancy >= s2 {
                    return (0.0, 0.0);
                }
                let o = occupancy.max(self.occupancy_floor());
                let rate = self.kernel.logpis_rate;
                (-(o / s2).ln() / rate, -1.0 / (rate * o))
            }
        }
    }

    /// Distance and the uncapped distance gradient. The gradient is `None`
    /// where it is undefined: vanishing mean gradient, a Matern12 training
    /// point, or a saturated transform.
    pub fn distance_gradient(&self, m: &Moments) -> (f64, Option<Vec<f64>>) {
        let s2 = self.kernel.signal_variance;
        let floor = self.occupancy_floor();
        let (distance, slope) = self.occupancy_to_distance(m.mean.clamp(floor, s2));
        let defined = norm(&m.gradient) >= 1e-12
            && !(self.kernel.family == KernelFamily::Matern12 && m.on_training_point)
            && m.mean > floor
            && m.mean < s2;
        if !defined {
            return (distance, None);
        }
        let gradient: Vec<f64> = m.gradient.iter().map(|g| slope * g).collect();
        let gnorm = norm(&gradient);
        let gradient = (gnorm.is_finite() && gnorm > 0.0).then_some(gradient);
        (distance, gradient)
    }

    /// Turns GP posterior moments into a field sample.
    pub(crate) fn sample(&self, m: &Moments) -> FieldSample {
        let s2 = self.kernel.signal_variance;
        let floor = self.occupancy_floor();
        let occupancy = m.mean.clamp(floor, s2);
        let (distance, gradient) = self.distance_gradient(m);
        let (gradient, normal, valid_gradient) = match gradient {
            Some(g) if norm(&g) < 10.0 => {
                let gnorm = norm(&g);
                let normal = g.iter().map(|x| -x / gnorm).collect();
                (g, normal, true)
            }
            _ => (vec![0.0; m.gradient.len()], vec![0.0; m.gradient.len()], false),
        };

        let spread = self.uncertainty_beta * m.variance.sqrt();
        let near = self.occupancy_to_distance((occupancy + spread).clamp(floor, s2)).0;
        let far = self.occupancy_to_distance((occupancy - spread).clamp(floor, s2)).0;
        FieldSample {
            distance,
            gradient,
            normal,
            occupancy,
            uncertainty: 0.5 * (far - near).abs(),
            valid_gradient,
        }
    }
}

/// Everything a query returns at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    /// Unsigned distance to the surface (m).
    pub distance: f64,
    /// Direction of increasing distance. Zero when `valid_gradient` is false.
    pub gradient: Vec<f64>,
    /// Unit vector toward the surface, `-gradient / |gradient|`. Zero when
    /// `valid_gradient` is false.
    pub normal: Vec<f64>,
    /// Posterior occupancy clamped to `[floor, sigma^2]`.
    pub occupancy: f64,
    /// Half-width of the distance interval spanned by `occupancy +- beta * std` (m).
    pub uncertainty: f64,
    pub valid_gradient: bool,
}

/// Anything that answers distance queries: a single field or a submap grid.
pub trait DistanceField: Sync {
    fn dim(&self) -> usize;

    fn sample(&self, q: &[f64]) -> Result<FieldSample>;

    /// Distance with its gradient, without the magnitude cap applied to
    /// [`FieldSample::gradient`]. Steep gradients right at the surface are
    /// kept; undefined ones are `None`.
    fn distance_gradient(&self, q: &[f64]) -> Result<(f64, Option<Vec<f64>>)>;

    fn distance(&self, q: &[f64]) -> Result<f64> {
        Ok(self.sample(q)?.distance)
    }
}

/// A distance field over one fitted GP. Immutable after [`Field::build`].
#[derive(Debug, Clone)]
pub struct Field {
    config: FieldConfig,
    model: GpModel,
}

impl Field {
    /// Fits the occupancy GP with every surface sample observed at 1.
    pub fn build(cloud: &PointCloud, config: FieldConfig) -> Result<Self> {
        config.validate()?;
        if cloud.is_empty() {
            return Err(Error::Empty("point cloud"));
        }
        let targets = vec![1.0; cloud.len()];
        let model = GpModel::fit(cloud, &targets, config.kernel, config.noise_variance)?;
        Ok(Self { config, model })
    }

    /// Builds with hyperparameters picked by [`FieldConfig::from_cloud`].
    pub fn build_default(cloud: &PointCloud, variant: FieldVariant) -> Result<Self> {
        Self::build(cloud, FieldConfig::from_cloud(cloud, variant)?)
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn model(&self) -> &GpModel {
        &self.model
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// Training points after deduplication.
    pub fn points(&self) -> &PointCloud {
        self.model.inputs()
    }

    pub fn moments(&self, q: &[f64]) -> Result<Moments> {
        self.model.moments(q)
    }

    pub fn query(&self, q: &[f64]) -> Result<FieldSample> {
        Ok(self.config.sample(&self.model.moments(q)?))
    }

    /// Element-wise [`Field::query`], evaluated in parallel, order preserved.
    pub fn query_batch<Q: AsRef<[f64]> + Sync>(&self, qs: &[Q]) -> Result<Vec<FieldSample>> {
        qs.par_iter()
            .enumerate()
            .map(|(i, q)| self.query(q.as_ref()).map_err(|e| e.at_index(i)))
            .collect()
    }

    /// Distance only, skipping the gradient and variance.
    pub fn distance(&self, q: &[f64]) -> Result<f64> {
        let m = self.model.predict_mean(q)?;
        let s2 = self.config.kernel.signal_variance;
        Ok(self
            .config
            .occupancy_to_distance(m.clamp(self.config.occupancy_floor(), s2))
            .0)
    }

    pub fn distance_batch<Q: AsRef<[f64]> + Sync>(&self, qs: &[Q]) -> Result<Vec<f64>> {
        qs.par_iter()
            .enumerate()
            .map(|(i, q)| self.distance(q.as_ref()).map_err(|e| e.at_index(i)))
            .collect()
    }
}

impl DistanceField for Field {
    fn dim(&self) -> usize {
        Field::dim(self)
    }

    fn sample(&self, q: &[f64]) -> Result<FieldSample> {
        self.query(q)
    }

    fn distance_gradient(&self, q: &[f64]) -> Result<(f64, Option<Vec<f64>>)> {
        Ok(self.config.distance_gradient(&self.model.moments(q)?))
    }

    fn distance(&self, q: &[f64]) -> Result<f64> {
        Field::distance(self, q)
    }
}
