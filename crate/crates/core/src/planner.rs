//! Gradient-based trajectory optimisation against a distance field.
//!
//! The cost is a finite-difference smoothness term plus a hinge-squared
//! obstacle term that is active within the safety margin:
//!
//! `C = w_s sum |x[k+1] - 2 x[k] + x[k-1]|^2 + w_o sum max(eps - d(x[k]), 0)^2`
//!
//! The field gradient supplies the repulsive direction. Endpoints stay fixed.

use rayon::prelude::*;

use crate::cloud::dist;
use crate::error::{check_point, Error, Result};
use crate::field::DistanceField;

const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanConfig {
    pub num_waypoints: usize,
    /// Clearance below which the obstacle cost is active (m).
    pub safety_margin: f64,
    pub smoothness_weight: f64,
    pub obstacle_weight: f64,
    /// Initial gradient step, halved until the cost does not increase.
    pub step: f64,
    pub max_iters: usize,
    pub cost_tol: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            num_waypoints: 50,
            safety_margin: 0.2,
            smoothness_weight: 1.0,
            obstacle_weight: 10.0,
            step: 0.05,
            max_iters: 500,
            cost_tol: 1e-6,
        }
    }
}

impl PlanConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.num_waypoints < 3 {
            return Err(Error::InvalidParameter("a plan needs at least 3 waypoints".into()));
        }
        if !(positive(self.safety_margin)
            && positive(self.smoothness_weight)
            && positive(self.obstacle_weight)
            && positive(self.step)
            && positive(self.cost_tol))
        {
            return Err(Error::InvalidParameter(
                "planner weights, margin and step must be positive".into(),
            ));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub waypoints: Vec<Vec<f64>>,
}

impl Trajectory {
    /// `n` evenly spaced waypoints from `start` to `goal`, both included exactly.
    pub fn straight(start: &[f64], goal: &[f64], n: usize) -> Self {
        let mut waypoints: Vec<Vec<f64>> = (0..n)
            .map(|k| {
                let t = k as f64 / (n - 1) as f64;
                start.iter().zip(goal).map(|(a, b)| a + t * (b - a)).collect()
            })
            .collect();
        waypoints[0] = start.to_vec();
        waypoints[n - 1] = goal.to_vec();
        Self { waypoints }
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.waypoints.first().map_or(0, Vec::len)
    }

    pub fn length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| dist(&w[0], &w[1])).sum()
    }

    /// Waypoints followed by the midpoints of consecutive waypoints.
    pub fn check_points(&self) -> Vec<Vec<f64>> {
        let mids = self
            .waypoints
            .windows(2)
            .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| 0.5 * (a + b)).collect());
        self.waypoints.iter().cloned().chain(mids).collect()
    }

    pub fn reversed(&self) -> Self {
        Self {
            waypoints: self.waypoints.iter().rev().cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub trajectory: Trajectory,
    /// Total cost before the first step and after every accepted step.
    pub cost_history: Vec<f64>,
    pub iterations: usize,
}

fn smoothness(waypoints: &[Vec<f64>]) -> f64 {
    waypoints
        .windows(3)
        .map(|w| {
            (0..w[0].len())
                .map(|i| (w[2][i] - 2.0 * w[1][i] + w[0][i]).powi(2))
                .sum::<f64>()
        })
        .sum()
}

fn hinge(eps: f64, d: f64) -> f64 {
    if d < eps {
        (eps - d).powi(2)
    } else {
        0.0
    }
}

fn cost<F: DistanceField + ?Sized>(field: &F, waypoints: &[Vec<f64>], cfg: &PlanConfig) -> Result<f64> {
    let ds: Vec<f64> = waypoints.par_iter().map(|x| field.distance(x)).collect::<Result<_>>()?;
    let obstacle: f64 = ds.iter().map(|&d| hinge(cfg.safety_margin, d)).sum();
    Ok(cfg.smoothness_weight * smoothness(waypoints) + cfg.obstacle_weight * obstacle)
}

/// Cost and its gradient with respect to every waypoint (endpoint rows zero).
fn cost_and_gradient<F: DistanceField + ?Sized>(
    field: &F,
    waypoints: &[Vec<f64>],
    cfg: &PlanConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = waypoints.len();
    let dim = waypoints[0].len();
    let samples: Vec<_> = waypoints.par_iter().map(|x| field.sample(x)).collect::<Result<_>>()?;

    let mut grad = vec![vec![0.0; dim]; n];
    let mut obstacle = 0.0;
    for (k, s) in samples.iter().enumerate() {
        let eps = cfg.safety_margin;
        obstacle += hinge(eps, s.distance);
        if s.distance < eps && k > 0 && k + 1 < n {
            let scale = -2.0 * cfg.obstacle_weight * (eps - s.distance);
            for (g, dg) in grad[k].iter_mut().zip(&s.gradient) {
                *g += scale * dg;
            }
        }
    }
    for k in 1..n - 1 {
        for i in 0..dim {
            let a = waypoints[k + 1][i] - 2.0 * waypoints[k][i] + waypoints[k - 1][i];
            let a = 2.0 * cfg.smoothness_weight * a;
            if k > 1 {
                grad[k - 1][i] += a;
            }
            grad[k][i] -= 2.0 * a;
            if k + 2 < n {
                grad[k + 1][i] += a;
            }
        }
    }
    let total = cfg.smoothness_weight * smoothness(waypoints) + cfg.obstacle_weight * obstacle;
    Ok((total, grad))
}

/// Optimises a straight-line initial path from `start` to `goal`.
pub fn plan_path<F: DistanceField + ?Sized>(
    field: &F,
    start: &[f64],
    goal: &[f64],
    cfg: &PlanConfig,
) -> Result<PlanResult> {
    cfg.validate()?;
    let dim = field.dim();
    check_point(start, dim)?;
    check_point(goal, dim)?;
    if start == goal {
        return Err(Error::InvalidParameter("start and goal coincide".into()));
    }
    for p in [start, goal] {
        if field.distance(p)? < 0.5 * cfg.safety_margin {
            return Err(Error::EndpointInCollision);
        }
    }

    let mut waypoints = Trajectory::straight(start, goal, cfg.num_waypoints).waypoints;
    let (mut current, mut grad) = cost_and_gradient(field, &waypoints, cfg)?;
    let mut cost_history = vec![current];
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        iterations += 1;
        let mut eta = cfg.step;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<Vec<f64>> = waypoints
                .iter()
                .zip(&grad)
                .map(|(x, g)| x.iter().zip(g).map(|(xi, gi)| xi - eta * gi).collect())
                .collect();
            let c = cost(field, &trial, cfg)?;
            if c <= current {
                accepted = Some((trial, c));
                break;
            }
            eta *= 0.5;
        }
        let Some((trial, c)) = accepted else {
            break;
        };
        let decrease = current - c;
        waypoints = trial;
        waypoints[0] = start.to_vec();
        waypoints[cfg.num_waypoints - 1] = goal.to_vec();
        let (c, g) = cost_and_gradient(field, &waypoints, cfg)?;
        current = c;
        grad = g;
        cost_history.push(current);
        if decrease < cfg.cost_tol {
            break;
        }
    }

    Ok(PlanResult {
        trajectory: Trajectory { waypoints },
        cost_history,
        iterations,
    })
}

/// Smallest field distance over the waypoints and segment midpoints.
pub fn path_clearance<F: DistanceField + ?Sized>(field: &F, traj: &Trajectory) -> Result<f64> {
    if traj.len() < 2 {
        return Err(Error::InvalidParameter(
            "a trajectory needs at least 2 waypoints".into(),
        ));
    }
    let ds: Vec<f64> = traj
        .check_points()
        .par_iter()
        .map(|x| field.distance(x))
        .collect::<Result<_>>()?;
    Ok(ds.into_iter().fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::PointCloud;
    use crate::field::{Field, FieldVariant};
    use crate::oracle::brute_force_edf;
    use crate::scenes;

    fn disc(center: [f64; 2]) -> (PointCloud, Field) {
        let cloud = scenes::circle(128, 0.5, center);
        let field = Field::build_default(&cloud, FieldVariant::Reverting).unwrap();
        (cloud, field)
    }

    #[test]
    fn smoothness_gradient_matches_finite_differences() {
        let (_, field) = disc([0.0, 3.0]);
        let cfg = PlanConfig::default();
        let mut wp = Trajectory::straight(&[-1.0, 0.0], &[1.0, 0.0], 6).waypoints;
        wp[2][1] = 0.3;
        wp[3][0] += 0.1;
        let (c, g) = cost_and_gradient(&field, &wp, &cfg).unwrap();
        let h = 1e-6;
        for k in 1..5 {
            for i in 0..2 {
                let mut p = wp.clone();
                p[k][i] += h;
                let mut m = wp.clone();
                m[k][i] -= h;
                let fd = (cost(&field, &p, &cfg).unwrap() - cost(&field, &m, &cfg).unwrap()) / (2.0 * h);
                assert!((fd - g[k][i]).abs() < 1e-6, "k={k} i={i}: {fd} vs {}", g[k][i]);
            }
        }
        assert_eq!(c, cost(&field, &wp, &cfg).unwrap());
    }

    #[test]
    fn obstacle_gradient_matches_finite_differences() {
        let (_, field) = disc([0.0, 0.0]);
        let cfg = PlanConfig::default();
        let mut wp = Trajectory::straight(&[-1.5, 0.3], &[1.5, 0.3], 7).waypoints;
        wp[3][1] = 0.62;
        let (_, g) = cost_and_gradient(&field, &wp, &cfg).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let mut p = wp.clone();
            p[3][i] += h;
            let mut m = wp.clone();
            m[3][i] -= h;
            let fd = (cost(&field, &p, &cfg).unwrap() - cost(&field, &m, &cfg).unwrap()) / (2.0 * h);
            assert!(
                (fd - g[3][i]).abs() < 1e-4 * fd.abs().max(1.0),
                "i={i}: {fd} vs {}",
                g[3][i]
            );
        }
    }

    #[test]
    fn clear_straight_line_is_a_fixed_point() {
        let (_, field) = disc([0.0, 3.0]);
        let start = [-1.5, 0.0];
        let goal = [1.5, 0.0];
        let result = plan_path(&field, &start, &goal, &PlanConfig::default()).unwrap();
        let straight = Trajectory::straight(&start, &goal, 50);
        for (a, b) in result.trajectory.waypoints.iter().zip(&straight.waypoints) {
            assert!(dist(a, b) < 1e-12);
        }
    }

    #[test]
    fn three_waypoints_move_only_the_middle() {
        let (_, field) = disc([0.0, 0.25]);
        let cfg = PlanConfig {
            num_waypoints: 3,
            ..PlanConfig::default()
        };
        let start = [-1.5, 0.0];
        let goal = [1.5, 0.0];
        let result = plan_path(&field, &start, &goal, &cfg).unwrap();
        let wp = &result.trajectory.waypoints;
        assert_eq!(wp[0], start.to_vec());
        assert_eq!(wp[2], goal.to_vec());
    }

    #[test]
    fn offset_disc_is_avoided() {
        // the straight line passes 0.1 below the disc, inside the margin
        let (cloud, field) = disc([0.0, 0.6]);
        let start = [-1.5, 0.0];
        let goal = [1.5, 0.0];
        let result = plan_path(&field, &start, &goal, &PlanConfig::default()).unwrap();
        let traj = &result.trajectory;
        assert_eq!(traj.waypoints[0], start.to_vec());
        assert_eq!(traj.waypoints[49], goal.to_vec());
        assert!(result.cost_history.windows(2).all(|w| w[1] <= w[0]));
        let oracle = traj
            .check_points()
            .iter()
            .map(|p| brute_force_edf(&cloud, p).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!(oracle >= 0.18, "oracle clearance {oracle}");
    }

    #[test]
    fn endpoint_in_margin_is_rejected() {
        let (_, field) = disc([0.0, 0.0]);
        assert!(matches!(
            plan_path(&field, &[-0.5, 0.05], &[1.5, 0.0], &PlanConfig::default()),
            Err(Error::EndpointInCollision)
        ));
        assert!(plan_path(&field, &[1.5, 0.0], &[1.5, 0.0], &PlanConfig::default()).is_err());
    }

    #[test]
    fn clearance_properties() {
        let (cloud, field) = disc([0.0, 0.0]);
        let traj = Trajectory::straight(&[0.8, -1.0], &[0.8, 1.0], 11);
        let c = path_clearance(&field, &traj).unwrap();
        assert!((c - brute_force_edf(&cloud, &[0.8, 0.0]).unwrap()).abs() < 0.02);
        assert_eq!(c, path_clearance(&field, &traj.reversed()).unwrap());
        let through = Trajectory::straight(&[0.5, -1.0], &[0.5, 1.0], 11);
        assert!(path_clearance(&field, &through).unwrap() < 1e-3);
    }
}
