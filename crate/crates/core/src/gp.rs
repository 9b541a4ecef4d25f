//! Exact Gaussian-process regression on occupancy observations.

use nalgebra::{DMatrix, DVector};

use crate::cloud::{dist2, PointCloud};
use crate::error::{check_point, Error, Result};
use crate::kernels::KernelSpec;

/// Jitter added to the Gram diagonal, relative to the signal variance.
/// Tried in order until the Cholesky factorization succeeds.
pub const JITTER_SCHEDULE: [f64; 4] = [0.0, 1e-8, 1e-6, 1e-4];

/// Points closer than this are treated as duplicates during `fit`.
pub const DEDUP_RADIUS: f64 = 1e-9;

/// A fitted exact GP. Immutable once built.
#[derive(Debug, Clone)]
pub struct GpModel {
    inputs: PointCloud,
    targets: Vec<f64>,
    kernel: KernelSpec,
    noise_variance: f64,
    jitter: f64,
    chol_l: DMatrix<f64>,
    alpha: DVector<f64>,
}

/// Posterior quantities at a single query point.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub gradient: Vec<f64>,
    pub variance: f64,
    /// The query coincides exactly with a training input.
    pub on_training_point: bool,
}

impl GpModel {
    /// Fits the model. Near-duplicate inputs (within [`DEDUP_RADIUS`]) are
    /// dropped, keeping the first occurrence and its target.
    pub fn fit(points: &PointCloud, targets: &[f64], kernel: KernelSpec, noise_variance: f64) -> Result<Self> {
        kernel.validate()?;
        if points.is_empty() {
            return Err(Error::Empty("training points"));
        }
        if points.len() != targets.len() {
            return Err(Error::InvalidParameter(format!(
                "{} points but {} targets",
                points.len(),
                targets.len()
            )));
        }
        if !(noise_variance.is_finite() && noise_variance >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise variance must be non-negative, got {noise_variance}"
            )));
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite);
        }

        let (inputs, targets) = dedup(points, targets);
        let n = inputs.len();
        let mut gram = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            let xi = inputs.point(i);
            for j in 0..i {
                let k = kernel.covariance_unchecked(xi, inputs.point(j));
                gram[(i, j)] = k;
                gram[(j, i)] = k;
            }
            gram[(i, i)] = kernel.signal_variance + noise_variance;
        }

        let y = DVector::from_column_slice(&targets);
        for rel in JITTER_SCHEDULE {
            let jitter = rel * kernel.signal_variance;
            let mut m = gram.clone();
            for i in 0..n {
                m[(i, i)] += jitter;
            }
            if let Some(chol) = m.cholesky() {
                let alpha = chol.solve(&y);
                if alpha.iter().all(|a| a.is_finite()) {
                    return Ok(Self {
                        inputs,
                        targets,
                        kernel,
                        noise_variance,
                        jitter,
                        chol_l: chol.unpack(),
                        alpha,
                    });
                }
            }
        }
        Err(Error::NotPositiveDefinite)
    }

    pub fn dim(&self) -> usize {
        self.inputs.dim()
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &PointCloud {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    /// Diagonal jitter that made the factorization succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Lower Cholesky factor of `K + (noise + jitter) I`.
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol_l
    }

    /// `m(q) = k(q, X) alpha`.
    pub fn predict_mean(&self, q: &[f64]) -> Result<f64> {
        check_point(q, self.dim())?;
        Ok(self.mean_unchecked(q))
    }

    pub(crate) fn mean_unchecked(&self, q: &[f64]) -> f64 {
        self.inputs
            .iter()
            .zip(self.alpha.iter())
            .map(|(x, a)| a * self.kernel.covariance_unchecked(q, x))
            .sum()
    }

    pub fn predict_mean_and_grad(&self, q: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_point(q, self.dim())?;
        let mut grad = vec![0.0; q.len()];
        let mut mean = 0.0;
        for (x, a) in self.inputs.iter().zip(self.alpha.iter()) {
            mean += a * self.kernel.accumulate_grad(q, x, *a, &mut grad);
        }
        Ok((mean, grad))
    }

    /// Posterior variance, clamped to `[0, signal_variance]`.
    pub fn predict_variance(&self, q: &[f64]) -> Result<f64> {
        check_point(q, self.dim())?;
        let kq = DVector::from_iterator(
            self.len(),
            self.inputs.iter().map(|x| self.kernel.covariance_unchecked(q, x)),
        );
        Ok(self.variance_from_kernel_vector(kq))
    }

    fn variance_from_kernel_vector(&self, kq: DVector<f64>) -> f64 {
        let v = self
            .chol_l
            .solve_lower_triangular(&kq)
            .expect("cholesky factor has a positive diagonal");
        (self.kernel.signal_variance - v.norm_squared()).clamp(0.0, self.kernel.signal_variance)
    }

    /// Mean, mean gradient and variance in a single pass over the training set.
    pub fn moments(&self, q: &[f64]) -> Result<Moments> {
        check_point(q, self.dim())?;
        let mut gradient = vec![0.0; q.len()];
        let mut mean = 0.0;
        let mut on_training_point = false;
        let mut kq = DVector::zeros(self.len());
        for (i, (x, a)) in self.inputs.iter().zip(self.alpha.iter()).enumerate() {
            let k = self.kernel.accumulate_grad(q, x, *a, &mut gradient);
            kq[i] = k;
            mean += a * k;
            on_training_point |= dist2(q, x) == 0.0;
        }
        let variance = self.variance_from_kernel_vector(kq);
        Ok(Moments {
            mean,
            gradient,
            variance,
            on_training_point,
        })
    }
}

fn dedup(points: &PointCloud, targets: &[f64]) -> (PointCloud, Vec<f64>) {
    let r2 = DEDUP_RADIUS * DEDUP_RADIUS;
    let mut kept: Vec<usize> = Vec::with_capacity(points.len());
    for i in 0..points.len() {
        let p = points.point(i);
        if kept.iter().all(|&j| dist2(p, points.point(j)) > r2) {
            kept.push(i);
        }
    }
    let mut flat = Vec::with_capacity(kept.len() * points.dim());
    for &i in &kept {
        flat.extend_from_slice(points.point(i));
    }
    let cloud = PointCloud::from_flat(points.dim(), flat).expect("subset of a valid cloud");
    (cloud, kept.iter().map(|&i| targets[i]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelFamily;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn se(l: f64) -> KernelSpec {
        KernelSpec::new(KernelFamily::SquaredExponential, l, 1.0).unwrap()
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> PointCloud {
        let flat = (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        PointCloud::from_flat(dim, flat).unwrap()
    }

    #[test]
    fn single_point_alpha() {
        let cloud = PointCloud::from_points(2, &[[0.0, 0.0]]).unwrap();
        let m = GpModel::fit(&cloud, &[1.0], se(1.0), 0.0).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.jitter(), 0.0);
        assert_eq!(m.alpha()[0], 1.0);
        let at_p = m.predict_mean(&[0.0, 0.0]).unwrap();
        assert!((at_p - 1.0).abs() < 1e-9);
        let r: f64 = 0.7;
        let expected = (-0.5 * r * r).exp();
        assert_relative_eq!(m.predict_mean(&[0.0, r]).unwrap(), expected, max_relative = 1e-14);
    }

    #[test]
    fn duplicates_are_dropped() {
        let cloud = PointCloud::from_points(2, &[[1.0, 1.0], [1.0, 1.0 + 1e-12], [2.0, 1.0]]).unwrap();
        let m = GpModel::fit(&cloud, &[1.0, 5.0, 1.0], se(1.0), 0.0).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.targets(), &[1.0, 1.0]);
        let twin = PointCloud::from_points(3, &[[0.0; 3], [0.0; 3]]).unwrap();
        assert_eq!(GpModel::fit(&twin, &[1.0, 1.0], se(1.0), 0.0).unwrap().len(), 1);
    }

    #[test]
    fn fit_errors() {
        let empty = PointCloud::new(2).unwrap();
        assert!(matches!(GpModel::fit(&empty, &[], se(1.0), 0.0), Err(Error::Empty(_))));
        let one = PointCloud::from_points(2, &[[0.0, 0.0]]).unwrap();
        assert!(GpModel::fit(&one, &[1.0, 1.0], se(1.0), 0.0).is_err());
        assert!(GpModel::fit(&one, &[1.0], se(1.0), -1.0).is_err());
        let m = GpModel::fit(&one, &[1.0], se(1.0), 0.0).unwrap();
        assert!(matches!(
            m.predict_mean(&[0.0; 3]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(m.predict_variance(&[0.0]).is_err());
    }

    #[test]
    fn cholesky_reconstructs_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let cloud = random_cloud(&mut rng, 100, 3);
        let k = se(0.4);
        let m = GpModel::fit(&cloud, &vec![1.0; 100], k, 1e-4).unwrap();
        let l = m.cholesky_factor();
        let rebuilt = l * l.transpose();
        let n = m.len();
        let gram = DMatrix::from_fn(n, n, |i, j| {
            k.covariance(m.inputs().point(i), m.inputs().point(j)).unwrap()
                + if i == j { 1e-4 + m.jitter() } else { 0.0 }
        });
        let rel = (&rebuilt - &gram).norm() / gram.norm();
        assert!(rel < 1e-10, "residual {rel}");
    }

    #[test]
    fn interpolates_noise_free_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cloud = random_cloud(&mut rng, 40, 2);
        let targets: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..2.0)).collect();
        for family in [
            KernelFamily::Matern12,
            KernelFamily::Matern32,
            KernelFamily::SquaredExponential,
        ] {
            let k = KernelSpec::new(family, 0.1, 1.0).unwrap();
            let m = GpModel::fit(&cloud, &targets, k, 0.0).unwrap();
            for (p, t) in cloud.iter().zip(&targets) {
                assert!((m.predict_mean(p).unwrap() - t).abs() < 1e-6);
                assert!(m.predict_variance(p).unwrap() < 1e-6);
            }
        }
    }

    #[test]
    fn mean_is_linear_and_variance_target_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cloud = random_cloud(&mut rng, 50, 3);
        let y: Vec<f64> = (0..50).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y2: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        let k = KernelSpec::new(KernelFamily::Matern32, 0.5, 1.0).unwrap();
        let a = GpModel::fit(&cloud, &y, k, 1e-4).unwrap();
        let b = GpModel::fit(&cloud, &y2, k, 1e-4).unwrap();
        let c = GpModel::fit(&cloud, &vec![0.0; 50], k, 1e-4).unwrap();
        for _ in 0..30 {
            let q: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let ma = a.predict_mean(&q).unwrap();
            assert_relative_eq!(
                b.predict_mean(&q).unwrap(),
                2.0 * ma,
                epsilon = 1e-12,
                max_relative = 1e-10
            );
            assert_eq!(c.predict_mean(&q).unwrap(), 0.0);
            assert_eq!(
                a.predict_variance(&q).unwrap().to_bits(),
                b.predict_variance(&q).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn symmetric_pair() {
        let cloud = PointCloud::from_points(2, &[[-1.0, 0.0], [1.0, 0.0]]).unwrap();
        let m = GpModel::fit(&cloud, &[1.0, 1.0], se(0.8), 0.0).unwrap();
        let (_, g) = m.predict_mean_and_grad(&[0.0, 0.0]).unwrap();
        assert!(g[0].abs() < 1e-15);
        for q in [[0.3, 0.2], [0.9, -0.4]] {
            let mirrored = [-q[0], q[1]];
            assert_relative_eq!(
                m.predict_mean(&q).unwrap(),
                m.predict_mean(&mirrored).unwrap(),
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn gradient_points_toward_single_point() {
        let cloud = PointCloud::from_points(2, &[[0.0, 0.0]]).unwrap();
        let m = GpModel::fit(&cloud, &[1.0], se(1.0), 0.0).unwrap();
        let (_, g) = m.predict_mean_and_grad(&[1.5, 0.0]).unwrap();
        assert!(g[0] < 0.0 && g[1] == 0.0);
    }

    #[test]
    fn mean_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let cloud = random_cloud(&mut rng, 60, 3);
        for family in [
            KernelFamily::Matern12,
            KernelFamily::Matern32,
            KernelFamily::SquaredExponential,
        ] {
            let k = KernelSpec::new(family, 0.6, 1.0).unwrap();
            let m = GpModel::fit(&cloud, &vec![1.0; 60], k, 1e-4).unwrap();
            for _ in 0..50 {
                let q: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let (_, g) = m.predict_mean_and_grad(&q).unwrap();
                let fd: Vec<f64> = (0..3)
                    .map(|i| {
                        let mut qp = q.clone();
                        let mut qm = q.clone();
                        qp[i] += 1e-5;
                        qm[i] -= 1e-5;
                        (m.predict_mean(&qp).unwrap() - m.predict_mean(&qm).unwrap()) / 2e-5
                    })
                    .collect();
                let err: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let scale = crate::cloud::norm(&fd);
                assert!(err <= 1e-4 * scale + 1e-9, "{family:?}: {err} vs {scale}");
            }
        }
    }

    #[test]
    fn variance_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cloud = random_cloud(&mut rng, 30, 2);
        let k = se(0.2);
        let m = GpModel::fit(&cloud, &vec![1.0; 30], k, 0.0).unwrap();
        assert!((m.predict_variance(&[10.0, 10.0]).unwrap() - 1.0).abs() < 1e-6);
        assert!(m.predict_variance(cloud.point(3)).unwrap() < 1e-6);
        for _ in 0..100 {
            let q = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let v = m.predict_variance(&q).unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn moments_agree_with_individual_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cloud = random_cloud(&mut rng, 25, 3);
        let m = GpModel::fit(&cloud, &[1.0; 25], se(0.5), 1e-4).unwrap();
        let q = [0.1, -0.2, 0.3];
        let mo = m.moments(&q).unwrap();
        let (mean, grad) = m.predict_mean_and_grad(&q).unwrap();
        assert_relative_eq!(mo.mean, mean, max_relative = 1e-14);
        assert_eq!(mo.gradient, grad);
        assert_eq!(mo.variance, m.predict_variance(&q).unwrap());
        assert!(!mo.on_training_point);
        assert!(m.moments(cloud.point(0)).unwrap().on_training_point);
    }

    #[test]
    fn escalates_jitter_on_indefinite_gram() {
        // Two points 2e-9 apart survive dedup but make the noise-free SE Gram singular.
        let cloud = PointCloud::from_points(2, &[[0.0, 0.0], [2e-9, 0.0], [1e-3, 0.0]]).unwrap();
        let m = GpModel::fit(&cloud, &[1.0; 3], se(10.0), 0.0).unwrap();
        assert!(m.jitter() >= 1e-8);
        assert!(m.predict_mean(&[0.5e-3, 0.0]).unwrap().is_finite());
    }
}
