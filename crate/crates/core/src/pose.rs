//! Rigid transforms in 2D and 3D.
//!
//! Both dimensions share one representation: a 3x3 rotation and a 3-vector
//! translation. A 2D pose is a rotation about z with zero z translation.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    dim: usize,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

/// Number of tangent-space parameters for a pose in `dim` dimensions.
pub fn dof(dim: usize) -> usize {
    if dim == 2 {
        3
    } else {
        6
    }
}

impl Pose {
    pub fn identity(dim: usize) -> Self {
        assert!(dim == 2 || dim == 3, "pose dimension must be 2 or 3");
        Self {
            dim,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_2d(tx: f64, ty: f64, theta: f64) -> Self {
        Self {
            dim: 2,
            rotation: *Rotation3::from_axis_angle(&Vector3::z_axis(), theta).matrix(),
            translation: Vector3::new(tx, ty, 0.0),
        }
    }

    /// 3D pose from a translation and a rotation vector (axis times angle).
    pub fn from_translation_rotvec(t: [f64; 3], rotvec: [f64; 3]) -> Self {
        Self {
            dim: 3,
            rotation: *Rotation3::new(Vector3::from(rotvec)).matrix(),
            translation: Vector3::from(t),
        }
    }

    pub fn from_matrix(dim: usize, rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_dim(dim)?;
        let pose = Self {
            dim,
            rotation,
            translation,
        };
        if !pose.is_valid() {
            return Err(Error::InvalidParameter(
                "rotation is not a proper orthonormal matrix".into(),
            ));
        }
        Ok(pose)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn is_valid(&self) -> bool {
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm() < 1e-9;
        let planar = self.dim == 3
            || (self.translation.z == 0.0
                && self.rotation[(2, 2)] == 1.0
                && self.rotation[(0, 2)] == 0.0
                && self.rotation[(1, 2)] == 0.0);
        ortho && self.rotation.determinant() > 0.0 && planar
    }

    /// `R p + t`.
    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.apply_into(p, &mut out);
        out
    }

    pub fn apply_into(&self, p: &[f64], out: &mut [f64]) {
        debug_assert_eq!(p.len(), self.dim);
        let v = if self.dim == 2 {
            Vector3::new(p[0], p[1], 0.0)
        } else {
            Vector3::new(p[0], p[1], p[2])
        };
        let w = self.rotation * v + self.translation;
        out.copy_from_slice(&w.as_slice()[..self.dim]);
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        assert_eq!(self.dim, other.dim, "pose dimensions differ");
        Pose {
            dim: self.dim,
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            dim: self.dim,
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Exponential map. 2D: `xi = [rho_x, rho_y, theta]`; 3D: `xi = [rho; phi]`.
    pub fn exp(dim: usize, xi: &[f64]) -> Pose {
        assert_eq!(xi.len(), dof(dim), "tangent vector has the wrong length");
        if dim == 2 {
            let theta = xi[2];
            let (s, c) = theta.sin_cos();
            let (a, b) = if theta.abs() < 1e-6 {
                let t2 = theta * theta;
                (1.0 - t2 / 6.0, theta / 2.0 - theta * t2 / 24.0)
            } else {
                (s / theta, (1.0 - c) / theta)
            };
            Pose {
                dim,
                rotation: Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
                translation: Vector3::new(a * xi[0] - b * xi[1], b * xi[0] + a * xi[1], 0.0),
            }
        } else {
            let rho = Vector3::new(xi[0], xi[1], xi[2]);
            let phi = Vector3::new(xi[3], xi[4], xi[5]);
            let theta = phi.norm();
            let hat = phi.cross_matrix();
            let hat2 = hat * hat;
            let (b, c) = if theta < 1e-6 {
                let t2 = theta * theta;
                (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
            } else {
                let t2 = theta * theta;
                ((1.0 - theta.cos()) / t2, (theta - theta.sin()) / (t2 * theta))
            };
            let v = Matrix3::identity() + hat * b + hat2 * c;
            Pose {
                dim,
                rotation: *Rotation3::new(phi).matrix(),
                translation: v * rho,
            }
        }
    }

    /// Rotation angle in radians (signed about z for 2D poses, magnitude for 3D).
    pub fn angle(&self) -> f64 {
        if self.dim == 2 {
            self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
        } else {
            UnitQuaternion::from_matrix(&self.rotation).angle()
        }
    }

    /// `[qx, qy, qz, qw]` with `qw >= 0`.
    pub fn quaternion(&self) -> [f64; 4] {
        let q = if self.dim == 2 {
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), self.angle())
        } else {
            UnitQuaternion::from_matrix(&self.rotation)
        };
        let c = q.coords;
        let sign = if c.w < 0.0 { -1.0 } else { 1.0 };
        [sign * c.x, sign * c.y, sign * c.z, sign * c.w]
    }
}
