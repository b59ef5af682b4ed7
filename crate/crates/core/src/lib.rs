//! Streaming scene mapping with a Dirichlet-process Gaussian mixture.
//!
//! Space is cut into voxel blocks found through a spatial hash. Every block
//! runs its own Chinese-restaurant-process mixture over the points that land in
//! it. Blocks are updated in parallel each frame, and the union of all block
//! mixtures is a continuous density over the scene that can be queried and
//! sampled.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![cfg_attr(test, allow(clippy::field_reassign_with_default))]

pub mod error;
pub mod field;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod map;
pub mod model;
pub mod refinement;
pub mod sensor;
pub mod spatial;

pub use error::{Error, Result};
pub use field::Mixture;
pub use inference::{process_frame, Assignment, AssignmentKind, FrameStats, PointBatch};
pub use linalg::{Mat3, Vec3};
pub use map::GlobalMap;
pub use model::{component_density, normalized_weights, ComponentId, GaussianComponent, Hyperparameters};
pub use spatial::{BlockCoord, BlockProcessor};
