//! Exact nearest-sample distances used as ground truth.

use rayon::prelude::*;

use crate::cloud::{dist2, PointCloud};
use crate::error::{check_point, Error, Result};

/// Exact `min_i |q - p_i|` by a linear scan.
pub fn brute_force_edf(cloud: &PointCloud, q: &[f64]) -> Result<f64> {
    if cloud.is_empty() {
        return Err(Error::Empty("point cloud"));
    }
    check_point(q, cloud.dim())?;
    Ok(cloud.iter().map(|p| dist2(p, q)).fold(f64::INFINITY, f64::min).sqrt())
}

/// Median over points of the distance to their nearest other point.
/// Exact duplicates are skipped. Returns `None` for fewer than two distinct points.
pub fn median_nn_spacing(cloud: &PointCloud) -> Option<f64> {
    let n = cloud.len();
    let mut nn: Vec<f64> = (0..n)
        .into_par_iter()
        .filter_map(|i| {
            let p = cloud.point(i);
            let best = (0..n)
                .filter(|&j| j != i)
                .map(|j| dist2(p, cloud.point(j)))
                .filter(|&d| d > 0.0)
                .fold(f64::INFINITY, f64::min);
            best.is_finite().then(|| best.sqrt())
        })
        .collect();
    if nn.is_empty() {
        return None;
    }
    nn.sort_by(f64::total_cmp);
    let m = nn.len();
    Some(if m % 2 == 1 {
        nn[m / 2]
    } else {
        0.5 * (nn[m / 2 - 1] + nn[m / 2])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes;

    #[test]
    fn three_four_five() {
        let c = PointCloud::from_points(2, &[[0.0, 0.0]]).unwrap();
        assert_eq!(brute_force_edf(&c, &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(brute_force_edf(&c, &[0.0, 0.0]).unwrap(), 0.0);
        assert!(brute_force_edf(&PointCloud::new(2).unwrap(), &[0.0, 0.0]).is_err());
        assert!(brute_force_edf(&c, &[0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn discretized_circle() {
        let c = scenes::circle(256, 1.0, [0.0, 0.0]);
        let d = brute_force_edf(&c, &[2.0, 0.0]).unwrap();
        let half_spacing = std::f64::consts::PI / 256.0;
        assert!((d - 1.0).abs() <= half_spacing);
        let s = median_nn_spacing(&c).unwrap();
        assert!((s - 2.0 * (std::f64::consts::PI / 256.0).sin()).abs() < 1e-12);
    }

    #[test]
    fn spacing_needs_two_distinct_points() {
        let c = PointCloud::from_points(2, &[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert_eq!(median_nn_spacing(&c), None);
    }
}
