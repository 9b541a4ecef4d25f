//! Block-partitioned store of conditionally independent GP submaps.
//!
//! Space is cut into half-open cubes `[k B, (k + 1) B)`. Each non-empty block
//! owns the points that fall inside it and lazily fits a [`Field`] on its own
//! points plus the halo points of neighbouring blocks within `m` of its
//! boundary. Queries fuse the occupancy moments of nearby blocks by precision
//! weighting before the distance transform is applied.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use once_cell::sync::OnceCell;
use rayon::prelude::*;

use crate::cloud::{dist2, PointCloud};
use crate::error::{check_dim, check_point, Error, Result};
use crate::field::{DistanceField, Field, FieldConfig, FieldSample};
use crate::gp::Moments;
use crate::pose::Pose;

/// Integer block coordinates; the z entry is 0 for 2D grids.
pub type BlockKey = [i64; 3];

type VoxelKey = [i64; 3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubmapParams {
    pub block_size: f64,
    pub halo_margin: f64,
    pub max_points_per_block: usize,
    pub downsample_resolution: f64,
}

impl SubmapParams {
    /// `B = 8 l`, `m = 2 l`, `N_max = 400`, `rho = l / 4` for length scale `l`.
    pub fn for_length_scale(l: f64) -> Self {
        Self {
            block_size: 8.0 * l,
            halo_margin: 2.0 * l,
            max_points_per_block: 400,
            downsample_resolution: l / 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.block_size) || !positive(self.downsample_resolution) {
            return Err(Error::InvalidParameter(
                "block size and downsample resolution must be positive".into(),
            ));
        }
        if !(self.halo_margin.is_finite() && self.halo_margin >= 0.0) {
            return Err(Error::InvalidParameter("halo margin must be non-negative".into()));
        }
        if self.max_points_per_block == 0 {
            return Err(Error::InvalidParameter(
                "max points per block must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of one [`SubmapGrid::insert_points`] call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InsertReport {
    pub inserted: usize,
    /// Points whose voxel was already occupied in their owner block.
    pub duplicates: usize,
    /// Points dropped because their owner block was full.
    pub overflow: usize,
    pub skipped_non_finite: usize,
    /// Blocks whose training set changed and will refit on the next query.
    pub dirty_blocks: usize,
}

#[derive(Debug, Default)]
struct Block {
    points: Vec<f64>,
    voxels: HashSet<VoxelKey>,
    field: OnceCell<Arc<Field>>,
}

impl Block {
    fn len(&self, dim: usize) -> usize {
        self.points.len() / dim
    }
}

#[derive(Debug)]
pub struct SubmapGrid {
    dim: usize,
    config: FieldConfig,
    params: SubmapParams,
    blocks: BTreeMap<BlockKey, Block>,
}

impl SubmapGrid {
    pub fn new(dim: usize, config: FieldConfig, params: SubmapParams) -> Result<Self> {
        check_dim(dim)?;
        config.validate()?;
        params.validate()?;
        Ok(Self {
            dim,
            config,
            params,
            blocks: BTreeMap::new(),
        })
    }

    /// A grid with the default block parameters for `config`'s length scale.
    pub fn with_defaults(dim: usize, config: FieldConfig) -> Result<Self> {
        Self::new(dim, config, SubmapParams::for_length_scale(config.kernel.length_scale))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn params(&self) -> &SubmapParams {
        &self.params
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_keys(&self) -> impl Iterator<Item = &BlockKey> {
        self.blocks.keys()
    }

    /// Points owned by a block (without halo).
    pub fn block_points(&self, key: &BlockKey) -> Option<PointCloud> {
        self.blocks
            .get(key)
            .map(|b| PointCloud::from_flat(self.dim, b.points.clone()).expect("stored points are finite"))
    }

    /// Total number of stored points over all blocks.
    pub fn point_count(&self) -> usize {
        self.blocks.values().map(|b| b.len(self.dim)).sum()
    }

    pub fn is_block_clean(&self, key: &BlockKey) -> bool {
        self.blocks.get(key).is_some_and(|b| b.field.get().is_some())
    }

    /// `floor(p_i / B)` per axis.
    pub fn block_of(&self, p: &[f64]) -> BlockKey {
        let mut key = [0; 3];
        for (k, c) in key.iter_mut().zip(p) {
            *k = (c / self.params.block_size).floor() as i64;
        }
        key
    }

    fn voxel_of(&self, p: &[f64]) -> VoxelKey {
        let mut key = [0; 3];
        for (k, c) in key.iter_mut().zip(p) {
            *k = (c / self.params.downsample_resolution).floor() as i64;
        }
        key
    }

    pub fn block_center(&self, key: &BlockKey) -> Vec<f64> {
        key[..self.dim]
            .iter()
            .map(|&k| (k as f64 + 0.5) * self.params.block_size)
            .collect()
    }

    /// Squared Euclidean distance from `p` to the closed box of block `key`.
    fn dist2_to_block(&self, key: &BlockKey, p: &[f64]) -> f64 {
        let b = self.params.block_size;
        p.iter()
            .zip(key)
            .map(|(&c, &k)| {
                let lo = k as f64 * b;
                let hi = lo + b;
                let d = if c < lo {
                    lo - c
                } else if c > hi {
                    c - hi
                } else {
                    0.0
                };
                d * d
            })
            .sum()
    }

    /// Keys of every block (present or not) whose halo region can contain `p`.
    fn halo_neighbourhood(&self, owner: &BlockKey) -> Vec<BlockKey> {
        let reach = (self.params.halo_margin / self.params.block_size).ceil() as i64;
        let zr = if self.dim == 3 { reach } else { 0 };
        let mut out = Vec::new();
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -zr..=zr {
                    out.push([owner[0] + dx, owner[1] + dy, owner[2] + dz]);
                }
            }
        }
        out
    }

    /// Transforms `cloud` by `pose` (sensor to world) and adds the points to
    /// their owner blocks. The first point per voxel of size `rho` is kept, and
    /// blocks never grow past `N_max`. Blocks whose own points or halo changed
    /// are marked dirty; they refit on the next query that touches them.
    pub fn insert_points(&mut self, cloud: &PointCloud, pose: &Pose) -> Result<InsertReport> {
        let mut report = InsertReport::default();
        if cloud.is_empty() {
            return Ok(report);
        }
        if cloud.dim() != self.dim || pose.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: cloud.dim(),
            });
        }

        let mut touched: BTreeSet<BlockKey> = BTreeSet::new();
        let mut world = vec![0.0; self.dim];
        for p in cloud.iter() {
            pose.apply_into(p, &mut world);
            if world.iter().any(|c| !c.is_finite()) {
                report.skipped_non_finite += 1;
                continue;
            }
            let key = self.block_of(&world);
            let voxel = self.voxel_of(&world);
            let n_max = self.params.max_points_per_block;
            let dim = self.dim;
            let block = self.blocks.entry(key).or_default();
            if block.voxels.contains(&voxel) {
                report.duplicates += 1;
                continue;
            }
            if block.len(dim) >= n_max {
                report.overflow += 1;
                continue;
            }
            block.voxels.insert(voxel);
            block.points.extend_from_slice(&world);
            report.inserted += 1;

            let m2 = self.params.halo_margin * self.params.halo_margin;
            for neighbour in self.halo_neighbourhood(&key) {
                if neighbour == key || self.dist2_to_block(&neighbour, &world) <= m2 {
                    touched.insert(neighbour);
                }
            }
        }
        // Blocks created but left empty (every point rejected) are dropped again.
        self.blocks.retain(|_, b| !b.points.is_empty());

        for key in &touched {
            if let Some(block) = self.blocks.get_mut(key) {
                block.field = OnceCell::new();
                report.dirty_blocks += 1;
            }
        }
        Ok(report)
    }

    /// Training set of a block: its own points, then halo points from
    /// neighbours in key order.
    pub fn training_points(&self, key: &BlockKey) -> Option<PointCloud> {
        let block = self.blocks.get(key)?;
        let mut flat = block.points.clone();
        let m2 = self.params.halo_margin * self.params.halo_margin;
        if self.params.halo_margin > 0.0 {
            for neighbour in self.halo_neighbourhood(key) {
                if &neighbour == key {
                    continue;
                }
                if let Some(other) = self.blocks.get(&neighbour) {
                    for p in other.points.chunks_exact(self.dim) {
                        if self.dist2_to_block(key, p) <= m2 {
                            flat.extend_from_slice(p);
                        }
                    }
                }
            }
        }
        Some(PointCloud::from_flat(self.dim, flat).expect("stored points are finite"))
    }

    /// The fitted field of a block, refitting it if dirty.
    pub fn block_field(&self, key: &BlockKey) -> Result<Option<Arc<Field>>> {
        let Some(block) = self.blocks.get(key) else {
            return Ok(None);
        };
        block
            .field
            .get_or_try_init(|| {
                let training = self.training_points(key).expect("block exists");
                Field::build(&training, self.config).map(Arc::new)
            })
            .cloned()
            .map(Some)
    }

    /// Fits every dirty block, in parallel.
    pub fn refit_all(&self) -> Result<()> {
        let keys: Vec<&BlockKey> = self.blocks.keys().collect();
        keys.par_iter().try_for_each(|k| self.block_field(k).map(|_| ()))
    }

    /// Blocks taking part in a query at `q`: every block whose centre lies
    /// within `B sqrt(dim)` of `q`, or else the single nearest block.
    pub fn fusion_members(&self, q: &[f64]) -> Vec<BlockKey> {
        let radius = self.params.block_size * (self.dim as f64).sqrt();
        let r2 = radius * radius;
        let mut members: Vec<BlockKey> = self
            .blocks
            .keys()
            .filter(|k| dist2(&self.block_center(k), q) <= r2)
            .copied()
            .collect();
        if members.is_empty() {
            let nearest = self
                .blocks
                .keys()
                .map(|k| (dist2(&self.block_center(k), q), *k))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, k)| k);
            members.extend(nearest);
        }
        members
    }

    /// Precision-weighted occupancy moments of the submaps near `q`.
    pub fn fused_moments(&self, q: &[f64]) -> Result<Moments> {
        if self.blocks.is_empty() {
            return Err(Error::Empty("submap grid"));
        }
        check_point(q, self.dim)?;
        let members = self.fusion_members(q);
        if let [only] = members.as_slice() {
            return self.block_field(only)?.expect("member exists").moments(q);
        }

        let mut weight_sum = 0.0;
        let mut mean = 0.0;
        let mut gradient = vec![0.0; self.dim];
        let mut on_training_point = false;
        for key in &members {
            let field = self.block_field(key)?.expect("member exists");
            let m = field.moments(q)?;
            let w = 1.0 / (m.variance + 1e-9);
            weight_sum += w;
            mean += w * m.mean;
            for (g, gi) in gradient.iter_mut().zip(&m.gradient) {
                *g += w * gi;
            }
            on_training_point |= m.on_training_point;
        }
        gradient.iter_mut().for_each(|g| *g /= weight_sum);
        Ok(Moments {
            mean: mean / weight_sum,
            gradient,
            variance: (1.0 / weight_sum).min(self.config.kernel.signal_variance),
            on_training_point,
        })
    }

    /// Fused query across the submaps near `q`. With a single member this is
    /// exactly that block's query.
    pub fn query_fused(&self, q: &[f64]) -> Result<FieldSample> {
        Ok(self.config.sample(&self.fused_moments(q)?))
    }

    pub(crate) fn raw_blocks(&self) -> impl Iterator<Item = (&BlockKey, &[f64])> {
        self.blocks.iter().map(|(k, b)| (k, b.points.as_slice()))
    }

    /// Restores a block verbatim (used by deserialization).
    pub(crate) fn restore_block(&mut self, key: BlockKey, points: Vec<f64>) {
        let voxels = points.chunks_exact(self.dim).map(|p| self.voxel_of(p)).collect();
        self.blocks.insert(
            key,
            Block {
                points,
                voxels,
                field: OnceCell::new(),
            },
        );
    }
}

impl DistanceField for SubmapGrid {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample(&self, q: &[f64]) -> Result<FieldSample> {
        self.query_fused(q)
    }

    fn distance_gradient(&self, q: &[f64]) -> Result<(f64, Option<Vec<f64>>)> {
        Ok(self.config.distance_gradient(&self.fused_moments(q)?))
    }
}
