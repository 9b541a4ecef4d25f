//! Surface-constrained pseudo points chosen with the distance field itself.

use crate::cloud::{dist2, PointCloud};
use crate::error::{check_point, Error, Result};
use crate::field::DistanceField;

pub const DEFAULT_SURFACE_TOL: f64 = 1e-3;
pub const DEFAULT_MAX_PROJECTION_ITERS: usize = 20;

const MAX_HALVINGS: usize = 30;

/// Accepted pseudo points together with their final residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoSet {
    pub points: PointCloud,
    pub spacing: f64,
    /// `|d|` at each accepted point.
    pub residuals: Vec<f64>,
    /// Candidates whose projection failed.
    pub rejected_projection: usize,
    /// Projected candidates dropped by the spacing rule or the budget.
    pub rejected_spacing: usize,
}

impl PseudoSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Newton-like descent `x <- x - d grad d / max(|grad d|^2, 1e-6)` onto the
/// zero level set. Steps that fail to reduce `|d|` are halved.
pub fn project_to_surface<F: DistanceField + ?Sized>(
    field: &F,
    x: &[f64],
    max_iters: usize,
    tol: f64,
) -> Result<Vec<f64>> {
    check_point(x, field.dim())?;
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidParameter("surface tolerance must be positive".into()));
    }
    let mut x = x.to_vec();
    let mut s = field.sample(&x)?;
    for _ in 0..max_iters {
        if s.distance.abs() < tol {
            return Ok(x);
        }
        if !s.valid_gradient {
            return Err(Error::StalledProjection {
                residual: s.distance.abs(),
            });
        }
        let g2: f64 = s.gradient.iter().map(|g| g * g).sum();
        let scale = s.distance / g2.max(1e-6);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = x
                .iter()
                .zip(&s.gradient)
                .map(|(xi, gi)| xi - step * scale * gi)
                .collect();
            let ts = field.sample(&trial)?;
            if ts.distance.abs() < s.distance.abs() {
                accepted = Some((trial, ts));
                break;
            }
            step *= 0.5;
        }
        let Some((nx, ns)) = accepted else {
            return Err(Error::StalledProjection {
                residual: s.distance.abs(),
            });
        };
        x = nx;
        s = ns;
    }
    if s.distance.abs() < tol {
        Ok(x)
    } else {
        Err(Error::NotConverged {
            residual: s.distance.abs(),
        })
    }
}

/// Projects each candidate onto the surface and greedily keeps, in input
/// order, those at least `spacing` away from every point kept so far.
pub fn select_pseudo_points<F: DistanceField + ?Sized, P: AsRef<[f64]>>(
    field: &F,
    candidates: &[P],
    spacing: f64,
    budget: usize,
) -> Result<PseudoSet> {
    select_pseudo_points_with(
        field,
        candidates,
        spacing,
        budget,
        DEFAULT_MAX_PROJECTION_ITERS,
        DEFAULT_SURFACE_TOL,
    )
}

pub fn select_pseudo_points_with<F: DistanceField + ?Sized, P: AsRef<[f64]>>(
    field: &F,
    candidates: &[P],
    spacing: f64,
    budget: usize,
    max_iters: usize,
    tol: f64,
) -> Result<PseudoSet> {
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(Error::InvalidParameter("spacing must be positive".into()));
    }
    if budget == 0 {
        return Err(Error::InvalidParameter("budget must be at least 1".into()));
    }
    let dim = field.dim();
    let mut points = PointCloud::new(dim)?;
    let mut residuals = Vec::new();
    let mut rejected_projection = 0;
    let mut rejected_spacing = 0;
    let s2 = spacing * spacing;
    for (i, c) in candidates.iter().enumerate() {
        let c = c.as_ref();
        check_point(c, dim).map_err(|e| e.at_index(i))?;
        if points.len() >= budget {
            rejected_spacing += 1;
            continue;
        }
        let p = match project_to_surface(field, c, max_iters, tol) {
            Ok(p) => p,
            Err(e) if e.is_numerical() => {
                rejected_projection += 1;
                continue;
            }
            Err(e) => return Err(e.at_index(i)),
        };
        if points.iter().any(|a| dist2(a, &p) < s2) {
            rejected_spacing += 1;
            continue;
        }
        residuals.push(field.distance(&p)?.abs());
        points.push(&p)?;
    }
    if points.is_empty() {
        return Err(Error::Empty("pseudo point set"));
    }
    Ok(PseudoSet {
        points,
        spacing,
        residuals,
        rejected_projection,
        rejected_spacing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Field, FieldConfig};
    use crate::kernels::{KernelFamily, KernelSpec};
    use crate::{cloud::norm, scenes};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn se_field(cloud: &PointCloud, l: f64) -> Field {
        let cfg =
            FieldConfig::reverting(KernelSpec::new(KernelFamily::SquaredExponential, l, 1.0).unwrap()).with_noise(0.0);
        Field::build(cloud, cfg).unwrap()
    }

    #[test]
    fn surface_point_is_a_fixed_point() {
        let field = se_field(&PointCloud::from_points(2, &[[0.0, 0.0]]).unwrap(), 1.0);
        assert_eq!(
            project_to_surface(&field, &[0.0, 0.0], 20, 1e-3).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn single_point_projects_along_the_ray() {
        let field = se_field(&PointCloud::from_points(2, &[[0.0, 0.0]]).unwrap(), 1.0);
        let p = project_to_surface(&field, &[2.0, 0.0], 20, 1e-3).unwrap();
        assert!(norm(&p) < 1e-3);
        assert!(p[1].abs() < 1e-12);
    }

    #[test]
    fn circle_seeds_converge() {
        let cloud = scenes::circle(256, 1.0, [0.0, 0.0]);
        let field = Field::build_default(&cloud, crate::FieldVariant::Reverting).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let r: f64 = rng.gen_range(0.6..1.4);
            let p = project_to_surface(&field, &[r * a.cos(), r * a.sin()], 20, 1e-3).unwrap();
            assert!(field.distance(&p).unwrap() < 1e-3);
            let oracle = crate::oracle::brute_force_edf(&cloud, &p).unwrap();
            assert!(oracle < 0.02, "oracle distance {oracle}");
            assert!((norm(&p) - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn stalls_on_flat_far_field() {
        let field = se_field(&PointCloud::from_points(2, &[[0.0, 0.0]]).unwrap(), 0.1);
        assert!(matches!(
            project_to_surface(&field, &[50.0, 0.0], 20, 1e-3),
            Err(Error::StalledProjection { .. })
        ));
    }

    #[test]
    fn one_candidate_gives_one_point() {
        let field = se_field(&PointCloud::from_points(2, &[[0.0, 0.0]]).unwrap(), 1.0);
        let set = select_pseudo_points(&field, &[[0.5, 0.5]], 0.1, 5).unwrap();
        assert_eq!(set.len(), 1);
    }

    #[test]
    fn spacing_rule_rejects_close_projection() {
        let cloud = PointCloud::from_points(2, &[[0.0, 0.0], [0.05, 0.0]]).unwrap();
        let field = se_field(&cloud, 0.02);
        let set = select_pseudo_points(&field, &[[0.0, 0.0], [0.05, 0.0]], 0.1, 5).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.rejected_spacing, 1);
    }

    #[test]
    fn circle_packing_bound() {
        let cloud = scenes::circle(256, 1.0, [0.0, 0.0]);
        let field = Field::build_default(&cloud, crate::FieldVariant::Reverting).unwrap();
        let candidates = scenes::circle(512, 1.0, [0.0, 0.0]).to_vecs();
        let set = select_pseudo_points(&field, &candidates, 0.2, 40).unwrap();
        assert!(set.len() <= 32, "{} points", set.len());
        assert!(set.len() >= 25);
        for (i, a) in set.points.iter().enumerate() {
            assert!(set.residuals[i] < 1e-3);
            for b in set.points.iter().skip(i + 1) {
                assert!(dist2(a, b).sqrt() >= 0.2);
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let field = se_field(&PointCloud::from_points(2, &[[0.0, 0.0]]).unwrap(), 1.0);
        assert!(select_pseudo_points(&field, &[[0.5, 0.5]], 0.0, 5).is_err());
        assert!(select_pseudo_points(&field, &[[0.5, 0.5]], 0.1, 0).is_err());
        let none: &[[f64; 2]] = &[];
        assert!(matches!(
            select_pseudo_points(&field, none, 0.1, 5),
            Err(Error::Empty(_))
        ));
    }
}
