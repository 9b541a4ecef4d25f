//! Deterministic synthetic scenes used by tests, benchmarks and the CLI.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::PointCloud;

/// `n` points evenly spaced on a circle, the first at angle 0.
pub fn circle(n: usize, radius: f64, center: [f64; 2]) -> PointCloud {
    let flat = (0..n)
        .flat_map(|i| {
            let a = 2.0 * PI * i as f64 / n as f64;
            [center[0] + radius * a.cos(), center[1] + radius * a.sin()]
        })
        .collect();
    PointCloud::from_flat(2, flat).expect("finite")
}

/// `n` points on a sphere from a Fibonacci lattice.
pub fn sphere(n: usize, radius: f64) -> PointCloud {
    let golden = PI * (3.0 - 5f64.sqrt());
    let flat = (0..n)
        .flat_map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let rho = (1.0 - z * z).sqrt();
            let a = golden * i as f64;
            [radius * rho * a.cos(), radius * rho * a.sin(), radius * z]
        })
        .collect();
    PointCloud::from_flat(3, flat).expect("finite")
}

/// Two perpendicular walls meeting at the origin, along +x and +y.
pub fn l_shape(n: usize, length: f64) -> PointCloud {
    let per_wall = n / 2;
    let step = length / per_wall as f64;
    let mut flat = Vec::with_capacity(2 * n);
    for i in 0..per_wall {
        flat.extend_from_slice(&[(i as f64 + 0.5) * step, 0.0]);
    }
    for i in 0..n - per_wall {
        flat.extend_from_slice(&[0.0, (i as f64 + 0.5) * step]);
    }
    PointCloud::from_flat(2, flat).expect("finite")
}

/// Points drawn uniformly inside a ball (2D or 3D).
pub fn ball(n: usize, radius: f64, dim: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flat = Vec::with_capacity(n * dim);
    while flat.len() < n * dim {
        let p: Vec<f64> = (0..dim).map(|_| rng.gen_range(-radius..radius)).collect();
        if p.iter().map(|c| c * c).sum::<f64>() <= radius * radius {
            flat.extend(p);
        }
    }
    PointCloud::from_flat(dim, flat).expect("finite")
}

/// Adds isotropic Gaussian noise of standard deviation `sigma` to every coordinate.
pub fn jitter(cloud: &PointCloud, sigma: f64, seed: u64) -> PointCloud {
    use rand_distr::{Distribution, Normal};
    if sigma == 0.0 {
        return cloud.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    let flat = cloud.as_flat().iter().map(|c| c + normal.sample(&mut rng)).collect();
    PointCloud::from_flat(cloud.dim(), flat).expect("finite")
}
