//! Point clouds and small coordinate helpers shared by every module.

use crate::error::{check_dim, check_point, Error, Result};

/// An ordered set of 2D or 3D surface samples stored as a flat coordinate buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
    pub source: Option<String>,
}

impl PointCloud {
    pub fn new(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self {
            dim,
            coords: Vec::new(),
            source: None,
        })
    }

    /// Builds a cloud from a flat `x y [z] x y [z] ...` buffer.
    pub fn from_flat(dim: usize, coords: Vec<f64>) -> Result<Self> {
        check_dim(dim)?;
        if !coords.len().is_multiple_of(dim) {
            return Err(Error::InvalidParameter(format!(
                "flat buffer of length {} is not a multiple of dimension {dim}",
                coords.len()
            )));
        }
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinite.at_index(i / dim));
        }
        Ok(Self {
            dim,
            coords,
            source: None,
        })
    }

    pub fn from_points<P: AsRef<[f64]>>(dim: usize, points: &[P]) -> Result<Self> {
        let mut cloud = Self::new(dim)?;
        for (i, p) in points.iter().enumerate() {
            cloud.push(p.as_ref()).map_err(|e| e.at_index(i))?;
        }
        Ok(cloud)
    }

    pub fn push(&mut self, p: &[f64]) -> Result<()> {
        check_point(p, self.dim)?;
        self.coords.extend_from_slice(p);
        Ok(())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + Clone {
        self.coords.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.coords
    }

    pub fn to_vecs(&self) -> Vec<Vec<f64>> {
        self.iter().map(<[f64]>::to_vec).collect()
    }
}

#[inline]
pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist2(a, b).sqrt()
}

#[inline]
pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_dimension_and_nan() {
        assert!(PointCloud::new(4).is_err());
        let err = PointCloud::from_points(2, &[vec![0.0, 0.0], vec![f64::NAN, 1.0]]).unwrap_err();
        assert!(matches!(err, Error::InvalidPoint { index: 1, .. }));
        assert!(PointCloud::from_points(2, &[vec![0.0, 0.0, 1.0]]).is_err());
    }

    #[test]
    fn flat_layout() {
        let c = PointCloud::from_flat(3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.point(1), &[4.0, 5.0, 6.0]);
        assert!(PointCloud::from_flat(3, vec![1.0, 2.0]).is_err());
    }
}
