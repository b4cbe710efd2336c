//! Surface reconstruction with indicator-function neural fields.
//!
//! A scan (oriented points plus the sensor positions that observed them) is
//! turned into training signals: a smoothed inward-normal vector field near
//! the surface and free-space samples along sensor rays. A sine-activated
//! MLP is then fitted so that it takes `+0.5` inside the solid, `-0.5` in
//! free space, crosses zero at the samples and has a gradient aligned with
//! the inward normals. The zero level set is meshed with marching cubes and
//! compared against ground truth with Chamfer distance, voxel IoU and a
//! distance-field error.
//!
//! Geometry, the network and the metrics are generic over [`Real`]
//! (`f32` or `f64`); the aliases below name the storage precision used by
//! the pipeline.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod eval;
pub mod extract;
pub mod geom;
pub mod io;
pub mod prep;
pub mod scanner;
pub mod siren;
pub mod train;

mod error;
mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

/// Storage-precision point.
pub type Point3f = geom::Point3<f32>;
/// Storage-precision point cloud.
pub type PointCloud = geom::OrientedPointCloud<f32>;
/// Storage-precision sensor set.
pub type Sensors = geom::SensorSet<f32>;
/// Storage-precision mesh.
pub type Mesh = geom::TriangleMesh<f32>;
/// Network with `f32` parameters, as trained and checkpointed.
pub type Field = siren::SirenField<f32>;
/// Network with `f64` parameters, used for derivative checks.
pub type Field64 = siren::SirenField<f64>;
