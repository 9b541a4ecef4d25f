//! Scan-to-map registration by damped Gauss-Newton on queried distances.
//!
//! The estimate is the map-from-scan pose `T`: applying it to scan points
//! moves them onto the zero level set of the field. Updates use the left
//! perturbation `T <- exp(xi) T`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::field::DistanceField;
use crate::pose::{dof, Pose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationOptions {
    /// Cap on accepted steps.
    pub max_iters: usize,
    /// Huber threshold on the distance residual (m).
    pub huber_delta: f64,
    pub initial_damping: f64,
    /// Stop once the update norm drops below this.
    pub step_tol: f64,
    pub min_residuals: usize,
}

impl Default for RegistrationOptions {
    fn default() -> Self {
        Self {
            max_iters: 50,
            huber_delta: 0.1,
            initial_damping: 1e-4,
            step_tol: 1e-8,
            min_residuals: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationReport {
    /// Map-from-scan pose.
    pub pose: Pose,
    pub iterations: usize,
    pub initial_rmse: f64,
    pub final_rmse: f64,
    /// The update norm fell below the step tolerance.
    pub converged: bool,
    /// Fraction of scan points with a defined gradient at the final pose.
    pub inlier_fraction: f64,
    /// Robust cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

/// Robust cost and its tangent-space gradient at one pose.
#[derive(Debug, Clone, PartialEq)]
pub struct CostEvaluation {
    pub cost: f64,
    pub gradient: Vec<f64>,
    pub rmse: f64,
    pub usable: usize,
}

struct Linearization {
    cost: f64,
    rmse: f64,
    usable: usize,
    hessian: DMatrix<f64>,
    gradient: DVector<f64>,
}

fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

fn huber_weight(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        1.0
    } else {
        delta / a
    }
}

/// Row of `d(d(T p))/d xi` for a transformed point `pw` with field gradient `g`.
fn jacobian_row(g: &[f64], pw: &[f64]) -> Vec<f64> {
    if pw.len() == 2 {
        vec![g[0], g[1], -g[0] * pw[1] + g[1] * pw[0]]
    } else {
        // d/dphi of (phi x pw) is -[pw]x, so the row is g^T [I, -[pw]x] = [g, pw x g]
        vec![
            g[0],
            g[1],
            g[2],
            pw[1] * g[2] - pw[2] * g[1],
            pw[2] * g[0] - pw[0] * g[2],
            pw[0] * g[1] - pw[1] * g[0],
        ]
    }
}

fn linearize<F: DistanceField + ?Sized>(
    field: &F,
    scan: &PointCloud,
    pose: &Pose,
    delta: f64,
) -> Result<Linearization> {
    let n = dof(scan.dim());
    let rows: Vec<(f64, Option<Vec<f64>>)> = (0..scan.len())
        .into_par_iter()
        .map(|i| {
            let pw = pose.apply(scan.point(i));
            let (d, g) = field.distance_gradient(&pw).map_err(|e| e.at_index(i))?;
            Ok((d, g.map(|g| jacobian_row(&g, &pw))))
        })
        .collect::<Result<_>>()?;

    let mut hessian = DMatrix::zeros(n, n);
    let mut gradient = DVector::zeros(n);
    let mut cost = 0.0;
    let mut sq = 0.0;
    let mut usable = 0;
    for (r, row) in &rows {
        cost += huber(*r, delta);
        sq += r * r;
        if let Some(row) = row {
            usable += 1;
            let w = huber_weight(*r, delta);
            let j = DVector::from_column_slice(row);
            hessian.ger(w, &j, &j, 1.0);
            gradient.axpy(w * r, &j, 1.0);
        }
    }
    Ok(Linearization {
        cost,
        rmse: (sq / rows.len() as f64).sqrt(),
        usable,
        hessian,
        gradient,
    })
}

fn robust_cost<F: DistanceField + ?Sized>(field: &F, scan: &PointCloud, pose: &Pose, delta: f64) -> Result<(f64, f64)> {
    let ds: Vec<f64> = (0..scan.len())
        .into_par_iter()
        .map(|i| field.distance(&pose.apply(scan.point(i))).map_err(|e| e.at_index(i)))
        .collect::<Result<_>>()?;
    let cost = ds.iter().map(|&r| huber(r, delta)).sum();
    let sq: f64 = ds.iter().map(|r| r * r).sum();
    Ok((cost, (sq / ds.len() as f64).sqrt()))
}

/// Huber cost of the scan at `pose` and its gradient with respect to a left
/// perturbation `exp(xi) pose` at `xi = 0`.
pub fn registration_cost<F: DistanceField + ?Sized>(
    field: &F,
    scan: &PointCloud,
    pose: &Pose,
    huber_delta: f64,
) -> Result<CostEvaluation> {
    check_inputs(field, scan, pose)?;
    let lin = linearize(field, scan, pose, huber_delta)?;
    Ok(CostEvaluation {
        cost: lin.cost,
        gradient: lin.gradient.as_slice().to_vec(),
        rmse: lin.rmse,
        usable: lin.usable,
    })
}

fn check_inputs<F: DistanceField + ?Sized>(field: &F, scan: &PointCloud, pose: &Pose) -> Result<()> {
    if scan.is_empty() {
        return Err(Error::Empty("scan"));
    }
    if scan.dim() != field.dim() {
        return Err(Error::DimensionMismatch {
            expected: field.dim(),
            got: scan.dim(),
        });
    }
    if pose.dim() != field.dim() {
        return Err(Error::DimensionMismatch {
            expected: field.dim(),
            got: pose.dim(),
        });
    }
    Ok(())
}

/// Aligns `scan` to `field`, starting from `init`.
pub fn register_scan<F: DistanceField + ?Sized>(
    field: &F,
    scan: &PointCloud,
    init: &Pose,
    opts: &RegistrationOptions,
) -> Result<RegistrationReport> {
    check_inputs(field, scan, init)?;
    let dim = scan.dim();
    let n = dof(dim);
    let delta = opts.huber_delta;

    let mut pose = *init;
    let mut lin = linearize(field, scan, &pose, delta)?;
    if lin.usable < opts.min_residuals {
        return Err(Error::InsufficientOverlap { usable: lin.usable });
    }
    let initial_rmse = lin.rmse;
    let mut cost_history = vec![lin.cost];
    let mut lambda = opts.initial_damping;
    let mut converged = false;
    let mut iterations = 0;

    // Each iteration raises the damping until a step lowers the cost or
    // becomes shorter than the tolerance.
    'outer: while iterations < opts.max_iters {
        iterations += 1;
        loop {
            let mut damped = lin.hessian.clone();
            for i in 0..n {
                damped[(i, i)] += lambda;
            }
            let step = match damped.cholesky() {
                Some(chol) => chol.solve(&(-&lin.gradient)),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            if step.norm() < opts.step_tol {
                converged = true;
                break 'outer;
            }
            let candidate = Pose::exp(dim, step.as_slice()).compose(&pose);
            let (cost, _) = robust_cost(field, scan, &candidate, delta)?;
            if cost <= lin.cost {
                let next = linearize(field, scan, &candidate, delta)?;
                if next.usable < opts.min_residuals {
                    return Err(Error::InsufficientOverlap { usable: next.usable });
                }
                pose = candidate;
                lin = next;
                cost_history.push(lin.cost);
                lambda = (lambda / 10.0).max(1e-12);
                break;
            }
            lambda *= 10.0;
        }
    }

    Ok(RegistrationReport {
        pose,
        iterations,
        initial_rmse,
        final_rmse: lin.rmse,
        converged,
        inlier_fraction: lin.usable as f64 / scan.len() as f64,
        cost_history,
    })
}

/// One trajectory line: `timestamp tx ty tz qx qy qz qw`.
pub fn trajectory_line(timestamp: f64, pose: &Pose) -> String {
    let t = pose.translation();
    let q = pose.quaternion();
    format!(
        "{} {} {} {} {} {} {} {}",
        timestamp, t.x, t.y, t.z, q[0], q[1], q[2], q[3]
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Field, FieldVariant};
    use crate::scenes;

    fn transform(cloud: &PointCloud, pose: &Pose) -> PointCloud {
        let pts: Vec<Vec<f64>> = cloud.iter().map(|p| pose.apply(p)).collect();
        PointCloud::from_points(cloud.dim(), &pts).unwrap()
    }

    #[test]
    fn huber_pieces_join_smoothly() {
        let d = 0.1;
        assert_eq!(huber(0.05, d), 0.5 * 0.05 * 0.05);
        assert!((huber(0.1 + 1e-12, d) - huber(0.1, d)).abs() < 1e-12);
        assert_eq!(huber_weight(0.4, d), 0.25);
        assert_eq!(huber(-0.3, d), huber(0.3, d));
    }

    #[test]
    fn jacobian_3d_matches_cross_product() {
        let g = [0.3, -0.4, 0.5];
        let pw = [1.0, 2.0, -1.0];
        let row = jacobian_row(&g, &pw);
        // finite difference of g . exp(phi) pw for small phi about each axis
        for k in 0..3 {
            let mut xi = [0.0; 6];
            xi[3 + k] = 1e-7;
            let moved = Pose::exp(3, &xi).apply(&pw);
            let fd: f64 = (0..3).map(|i| g[i] * (moved[i] - pw[i])).sum::<f64>() / 1e-7;
            assert!((fd - row[3 + k]).abs() < 1e-6, "axis {k}: {fd} vs {}", row[3 + k]);
        }
    }

    #[test]
    fn identity_is_a_fixed_point() {
        let cloud = scenes::circle(256, 1.0, [0.0, 0.0]);
        let field = Field::build_default(&cloud, FieldVariant::Reverting).unwrap();
        let report = register_scan(&field, &cloud, &Pose::identity(2), &RegistrationOptions::default()).unwrap();
        assert!(report.pose.translation().norm() < 1e-4);
        assert!(report.pose.angle().abs().to_degrees() < 0.01);
        assert!(report.converged);
    }

    #[test]
    fn recovers_known_offset_on_circle() {
        let cloud = scenes::circle(256, 1.0, [0.0, 0.0]);
        let field = Field::build_default(&cloud, FieldVariant::Reverting).unwrap();
        let truth = Pose::from_2d(0.1, -0.05, 5f64.to_radians());
        let scan = transform(&cloud, &truth.inverse());
        let report = register_scan(&field, &scan, &Pose::identity(2), &RegistrationOptions::default()).unwrap();
        // rotation about the centre is unobservable: the estimate may differ
        // from the truth only by such a rotation
        let residual = report.pose.compose(&truth.inverse());
        assert!(residual.translation().norm() < 5e-3, "{residual:?}");
        assert!(report.final_rmse <= report.initial_rmse);
    }

    #[test]
    fn symmetric_scene_converges_by_residual() {
        let cloud = scenes::circle(256, 1.0, [0.0, 0.0]);
        let field = Field::build_default(&cloud, FieldVariant::Reverting).unwrap();
        let report = register_scan(
            &field,
            &cloud,
            &Pose::from_2d(0.0, 0.0, 90f64.to_radians()),
            &RegistrationOptions::default(),
        )
        .unwrap();
        assert!(report.converged);
        assert!(report.final_rmse < 0.01);
        assert!((report.pose.angle().to_degrees() - 90.0).abs() < 5.0);
    }

    #[test]
    fn cost_history_is_monotone() {
        let cloud = scenes::l_shape(300, 1.0);
        let field = Field::build_default(&cloud, FieldVariant::Reverting).unwrap();
        let truth = Pose::from_2d(-0.15, 0.1, -8f64.to_radians());
        let scan = transform(&cloud, &truth.inverse());
        let report = register_scan(&field, &scan, &Pose::identity(2), &RegistrationOptions::default()).unwrap();
        assert!(report.cost_history.windows(2).all(|w| w[1] <= w[0]));
        assert!((0.0..=1.0).contains(&report.inlier_fraction));
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let cloud = scenes::l_shape(300, 1.0);
        let field = Field::build_default(&cloud, FieldVariant::Reverting).unwrap();
        let truth = Pose::from_2d(0.1, -0.05, 5f64.to_radians());
        let scan = transform(&cloud, &truth.inverse());
        let pose = Pose::identity(2);
        let eval = registration_cost(&field, &scan, &pose, 0.1).unwrap();
        let h = 1e-6;
        for k in 0..3 {
            let mut xi = [0.0; 3];
            xi[k] = h;
            let plus = robust_cost(&field, &scan, &Pose::exp(2, &xi).compose(&pose), 0.1)
                .unwrap()
                .0;
            xi[k] = -h;
            let minus = robust_cost(&field, &scan, &Pose::exp(2, &xi).compose(&pose), 0.1)
                .unwrap()
                .0;
            let fd = (plus - minus) / (2.0 * h);
            let rel = (fd - eval.gradient[k]).abs() / fd.abs().max(1e-12);
            assert!(rel < 1e-3, "component {k}: fd {fd} analytic {}", eval.gradient[k]);
        }
    }

    #[test]
    fn registers_in_3d() {
        let cloud = scenes::sphere(400, 1.0);
        let mut pts = cloud.to_vecs();
        // a flat floor breaks the rotational symmetry
        for i in 0..15 {
            for j in 0..15 {
                pts.push(vec![-1.4 + 0.2 * i as f64, -1.4 + 0.2 * j as f64, -1.2]);
            }
        }
        let cloud = PointCloud::from_points(3, &pts).unwrap();
        let field = Field::build_default(&cloud, FieldVariant::Reverting).unwrap();
        let truth = Pose::from_translation_rotvec([0.05, -0.03, 0.04], [0.0, 0.0, 0.02]);
        let scan = transform(&cloud, &truth.inverse());
        let report = register_scan(&field, &scan, &Pose::identity(3), &RegistrationOptions::default()).unwrap();
        assert!((report.pose.translation() - truth.translation()).norm() < 5e-3);
    }

    #[test]
    fn too_few_residuals_is_an_error() {
        let cloud = scenes::circle(64, 1.0, [0.0, 0.0]);
        let field = Field::build_default(&cloud, FieldVariant::Reverting).unwrap();
        let far = PointCloud::from_points(2, &[[100.0, 100.0]; 20]).unwrap();
        assert!(matches!(
            register_scan(&field, &far, &Pose::identity(2), &RegistrationOptions::default()),
            Err(Error::InsufficientOverlap { .. })
        ));
    }

    #[test]
    fn trajectory_line_format() {
        let line = trajectory_line(1.5, &Pose::from_2d(1.0, 2.0, 0.0));
        assert_eq!(line, "1.5 1 2 0 0 0 0 1");
    }
}
