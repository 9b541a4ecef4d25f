//! Offset-shell extraction from an unsigned distance field.
//!
//! The field is sampled on a regular grid and the iso-level `d = tau` is
//! extracted with marching cubes (3D) or marching squares (2D). Because `d` is
//! unsigned, the result is a shell at offset `tau` around the surface: closed
//! surfaces produce an inner and an outer sheet.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::DistanceField;
use crate::mc_tables::{EDGE_TABLE, TRIANGLE_TABLE};

pub const MAX_GRID_CELLS: u128 = 100_000_000;

/// Axis-aligned sampling grid and iso level.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub cell: f64,
    pub iso: f64,
}

impl GridSpec {
    /// Grid with the iso level equal to the cell size.
    pub fn new(min: Vec<f64>, max: Vec<f64>, cell: f64) -> Self {
        Self {
            min,
            max,
            cell,
            iso: cell,
        }
    }

    pub fn with_iso(mut self, iso: f64) -> Self {
        self.iso = iso;
        self
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn validate(&self) -> Result<()> {
        crate::error::check_dim(self.min.len())?;
        if self.max.len() != self.min.len() {
            return Err(Error::DimensionMismatch {
                expected: self.min.len(),
                got: self.max.len(),
            });
        }
        if self.min.iter().chain(&self.max).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        if self.min.iter().zip(&self.max).any(|(a, b)| b <= a) {
            return Err(Error::InvalidParameter(
                "bounding box max must exceed min on every axis".into(),
            ));
        }
        if !(self.cell.is_finite() && self.cell > 0.0) {
            return Err(Error::InvalidParameter("cell size must be positive".into()));
        }
        if !(self.iso.is_finite() && self.iso > 0.0) {
            return Err(Error::InvalidParameter("iso level must be positive".into()));
        }
        let cells = self.cell_count();
        if cells > MAX_GRID_CELLS {
            return Err(Error::GridTooLarge { cells });
        }
        Ok(())
    }

    /// Grid nodes per axis; the last node may fall short of `max`.
    pub fn node_counts(&self) -> Vec<usize> {
        self.min
            .iter()
            .zip(&self.max)
            .map(|(a, b)| ((b - a) / self.cell + 1e-9).floor() as usize + 1)
            .collect()
    }

    fn cell_count(&self) -> u128 {
        self.min
            .iter()
            .zip(&self.max)
            .map(|(a, b)| ((b - a) / self.cell + 1e-9).floor().max(0.0) as u128)
            .product()
    }

    /// Node coordinates in raster order (x fastest).
    pub fn nodes(&self) -> Vec<Vec<f64>> {
        let counts = self.node_counts();
        let total: usize = counts.iter().product();
        (0..total)
            .map(|mut idx| {
                let mut p = Vec::with_capacity(counts.len());
                for (axis, &n) in counts.iter().enumerate() {
                    p.push(self.min[axis] + (idx % n) as f64 * self.cell);
                    idx /= n;
                }
                p
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Indices in range, no repeated index within a triangle, finite vertices.
    pub fn is_valid(&self) -> bool {
        let n = self.vertices.len();
        self.vertices.iter().all(|v| v.iter().all(|c| c.is_finite()))
            && self
                .triangles
                .iter()
                .all(|t| t.iter().all(|&i| i < n) && t[0] != t[1] && t[1] != t[2] && t[0] != t[2])
    }
}

/// A contour piece; closed loops repeat their first point at the end.
pub type Polyline = Vec<[f64; 2]>;

const CUBE_CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const CUBE_EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

fn sample_grid<F: DistanceField + ?Sized>(field: &F, grid: &GridSpec) -> Result<Vec<f64>> {
    let nodes = grid.nodes();
    nodes
        .par_iter()
        .enumerate()
        .map(|(i, q)| field.distance(q).map(|d| d - grid.iso).map_err(|e| e.at_index(i)))
        .collect()
}

fn interpolate(a: &[f64], b: &[f64], va: f64, vb: f64) -> Vec<f64> {
    let t = if va == vb {
        0.5
    } else {
        (va / (va - vb)).clamp(0.0, 1.0)
    };
    a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
}

fn check_field_dim<F: DistanceField + ?Sized>(field: &F, grid: &GridSpec, dim: usize) -> Result<()> {
    if field.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: field.dim(),
        });
    }
    if grid.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: grid.dim(),
        });
    }
    Ok(())
}

/// Marching cubes over `d - tau`. Vertices are shared between cells through
/// global edge ids; triangles are emitted in cell raster order.
pub fn extract_isosurface_3d<F: DistanceField + ?Sized>(field: &F, grid: &GridSpec) -> Result<TriangleMesh> {
    grid.validate()?;
    check_field_dim(field, grid, 3)?;
    let values = sample_grid(field, grid)?;
    let n = grid.node_counts();
    let node = |x: usize, y: usize, z: usize| x + n[0] * (y + n[1] * z);
    let position = |x: usize, y: usize, z: usize| {
        [
            grid.min[0] + x as f64 * grid.cell,
            grid.min[1] + y as f64 * grid.cell,
            grid.min[2] + z as f64 * grid.cell,
        ]
    };

    let mut mesh = TriangleMesh::default();
    let mut edge_vertex: HashMap<usize, usize> = HashMap::new();
    for z in 0..n[2] - 1 {
        for y in 0..n[1] - 1 {
            for x in 0..n[0] - 1 {
                let corners: Vec<[usize; 3]> = CUBE_CORNERS.iter().map(|c| [x + c[0], y + c[1], z + c[2]]).collect();
                let v: Vec<f64> = corners.iter().map(|c| values[node(c[0], c[1], c[2])]).collect();
                let case = (0..8).fold(0usize, |acc, i| acc | (usize::from(v[i] < 0.0) << i));
                if EDGE_TABLE[case] == 0 {
                    continue;
                }
                let mut local = [usize::MAX; 12];
                for (e, [a, b]) in CUBE_EDGES.iter().enumerate() {
                    if EDGE_TABLE[case] & (1 << e) == 0 {
                        continue;
                    }
                    let (ca, cb) = (corners[*a], corners[*b]);
                    let lo = if node(ca[0], ca[1], ca[2]) < node(cb[0], cb[1], cb[2]) {
                        ca
                    } else {
                        cb
                    };
                    let axis = (0..3).find(|&k| ca[k] != cb[k]).expect("edge spans one axis");
                    let id = 3 * node(lo[0], lo[1], lo[2]) + axis;
                    local[e] = *edge_vertex.entry(id).or_insert_with(|| {
                        let p = interpolate(
                            &position(ca[0], ca[1], ca[2]),
                            &position(cb[0], cb[1], cb[2]),
                            v[*a],
                            v[*b],
                        );
                        mesh.vertices.push([p[0], p[1], p[2]]);
                        mesh.vertices.len() - 1
                    });
                }
                for tri in TRIANGLE_TABLE[case].chunks_exact(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    let t = [local[tri[0] as usize], local[tri[1] as usize], local[tri[2] as usize]];
                    if t[0] != t[1] && t[1] != t[2] && t[0] != t[2] {
                        mesh.triangles.push(t);
                    }
                }
            }
        }
    }
    Ok(mesh)
}

/// Segments per marching-squares case as pairs of square edges
/// (0 bottom, 1 right, 2 top, 3 left). Saddles 5 and 10 are resolved separately.
const SQUARE_SEGMENTS: [&[[usize; 2]]; 16] = [
    &[],
    &[[3, 0]],
    &[[0, 1]],
    &[[3, 1]],
    &[[1, 2]],
    &[],
    &[[0, 2]],
    &[[3, 2]],
    &[[2, 3]],
    &[[0, 2]],
    &[],
    &[[1, 2]],
    &[[1, 3]],
    &[[0, 1]],
    &[[3, 0]],
    &[],
];

/// Marching squares over `d - tau`, with saddle cells resolved by sampling
/// the cell centre. Segments are chained into polylines.
pub fn extract_contour_2d<F: DistanceField + ?Sized>(field: &F, grid: &GridSpec) -> Result<Vec<Polyline>> {
    grid.validate()?;
    check_field_dim(field, grid, 2)?;
    let values = sample_grid(field, grid)?;
    let n = grid.node_counts();
    let node = |x: usize, y: usize| x + n[0] * y;
    let position = |x: usize, y: usize| [grid.min[0] + x as f64 * grid.cell, grid.min[1] + y as f64 * grid.cell];
    let square_corners = [[0, 0], [1, 0], [1, 1], [0, 1]];

    let mut vertices: Vec<[f64; 2]> = Vec::new();
    let mut edge_vertex: HashMap<usize, usize> = HashMap::new();
    let mut segments: Vec<[usize; 2]> = Vec::new();
    for y in 0..n[1] - 1 {
        for x in 0..n[0] - 1 {
            let corners: Vec<[usize; 2]> = square_corners.iter().map(|c| [x + c[0], y + c[1]]).collect();
            let v: Vec<f64> = corners.iter().map(|c| values[node(c[0], c[1])]).collect();
            let case = (0..4).fold(0usize, |acc, i| acc | (usize::from(v[i] < 0.0) << i));
            let pairs: Vec<[usize; 2]> = match case {
                5 | 10 => {
                    let c = position(x, y);
                    let centre = [c[0] + 0.5 * grid.cell, c[1] + 0.5 * grid.cell];
                    let inside = field.distance(&centre)? - grid.iso < 0.0;
                    // joined inside regions cut off the outside corners, and vice versa
                    if (case == 5) == inside {
                        vec![[0, 1], [2, 3]]
                    } else {
                        vec![[3, 0], [1, 2]]
                    }
                }
                _ => SQUARE_SEGMENTS[case].to_vec(),
            };
            for pair in pairs {
                let mut ends = [0; 2];
                for (slot, &e) in ends.iter_mut().zip(&pair) {
                    let (a, b) = (e, (e + 1) % 4);
                    let (ca, cb) = (corners[a], corners[b]);
                    let lo = if node(ca[0], ca[1]) < node(cb[0], cb[1]) {
                        ca
                    } else {
                        cb
                    };
                    let axis = usize::from(ca[1] != cb[1]);
                    let id = 2 * node(lo[0], lo[1]) + axis;
                    *slot = *edge_vertex.entry(id).or_insert_with(|| {
                        let p = interpolate(&position(ca[0], ca[1]), &position(cb[0], cb[1]), v[a], v[b]);
                        vertices.push([p[0], p[1]]);
                        vertices.len() - 1
                    });
                }
                if ends[0] != ends[1] {
                    segments.push(ends);
                }
            }
        }
    }
    Ok(chain_segments(&vertices, &segments))
}

/// Joins segments sharing endpoints. Open chains come first, each started
/// from its lowest-numbered free end; closed loops follow.
fn chain_segments(vertices: &[[f64; 2]], segments: &[[usize; 2]]) -> Vec<Polyline> {
    let mut incident: HashMap<usize, Vec<usize>> = HashMap::new();
    for (s, seg) in segments.iter().enumerate() {
        for &v in seg {
            incident.entry(v).or_default().push(s);
        }
    }
    let mut used = vec![false; segments.len()];
    let mut out = Vec::new();

    let walk = |start_seg: usize, start_vertex: usize, used: &mut Vec<bool>| -> Vec<usize> {
        let mut chain = vec![start_vertex];
        let mut seg = start_seg;
        let mut at = start_vertex;
        loop {
            used[seg] = true;
            let [a, b] = segments[seg];
            at = if a == at { b } else { a };
            chain.push(at);
            match incident[&at].iter().find(|&&s| !used[s]) {
                Some(&next) => seg = next,
                None => break,
            }
        }
        chain
    };

    let mut ends: Vec<usize> = incident
        .iter()
        .filter(|(_, segs)| segs.len() == 1)
        .map(|(&v, _)| v)
        .collect();
    ends.sort_unstable();
    for v in ends {
        let seg = incident[&v][0];
        if !used[seg] {
            let chain = walk(seg, v, &mut used);
            out.push(chain.iter().map(|&i| vertices[i]).collect());
        }
    }
    for s in 0..segments.len() {
        if !used[s] {
            let chain = walk(s, segments[s][0], &mut used);
            out.push(chain.iter().map(|&i| vertices[i]).collect());
        }
    }
    out
}

/// Total length of a polyline.
pub fn polyline_length(line: &Polyline) -> f64 {
    line.windows(2)
        .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
        .sum()
}
