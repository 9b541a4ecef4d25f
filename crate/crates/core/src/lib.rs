//! Probabilistic Euclidean distance fields from point clouds.
//!
//! A Gaussian process regresses an occupancy field over surface samples; a
//! logarithmic or reverting transform turns it into metric distance with
//! gradients, normals and an uncertainty proxy. Around that core sit a block
//! submap store, pseudo point selection, scan registration, a trajectory
//! optimiser, iso-surface extraction and file I/O.

pub mod bench;
pub mod cloud;
pub mod error;
pub mod field;
pub mod gp;
pub mod inducing;
pub mod io;
pub mod kernels;
mod mc_tables;
pub mod mesher;
pub mod odometry;
pub mod oracle;
pub mod persist;
pub mod planner;
pub mod pose;
pub mod scenes;
pub mod submap;

pub use cloud::PointCloud;
pub use error::{Error, Result};
pub use field::{DistanceField, Field, FieldConfig, FieldSample, FieldVariant};
pub use gp::{GpModel, Moments};
pub use kernels::{KernelFamily, KernelSpec};
pub use mesher::{GridSpec, TriangleMesh};
pub use planner::{PlanConfig, Trajectory};
pub use pose::Pose;
pub use submap::{SubmapGrid, SubmapParams};
