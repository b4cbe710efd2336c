//! Mesh-vs-mesh metrics: Chamfer distance, occupancy IoU and distance-field error.
//!
//! Chamfer is the symmetric mean of Euclidean (not squared) nearest-neighbour
//! distances. The distance-field error is the per-voxel RMS difference.

mod distance;
mod voxelize;

pub use distance::{distance_transform, l2_distance_fields};
pub use voxelize::{iou, voxelize_occupancy, voxelize_occupancy_with, VoxelizeOptions};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::{KdTree, Point3, TriangleMesh};
use crate::{Error, Real, Result};

pub const DEFAULT_SAMPLES: usize = 262_144;
pub const DEFAULT_VOXEL_RESOLUTION: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub samples: usize,
    pub resolution: usize,
    pub seed: u64,
    /// Always mark voxels whose center lies within half a voxel of the mesh.
    pub surface_shell: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            samples: DEFAULT_SAMPLES,
            resolution: DEFAULT_VOXEL_RESOLUTION,
            seed: 0,
            surface_shell: true,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::invalid("eval samples must be positive"));
        }
        if self.resolution == 0 {
            return Err(Error::invalid("eval voxel resolution must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Normalized units.
    pub chamfer: f64,
    pub iou: f64,
    /// Voxel units.
    pub l2: f64,
    pub samples: usize,
    pub resolution: usize,
    pub occupied_pred: usize,
    pub occupied_gt: usize,
    pub seed: u64,
}

/// `n` area-uniform points on the surface of `mesh`.
pub fn sample_surface<T: Real>(mesh: &TriangleMesh<T>, n: usize, seed: u64) -> Result<Vec<Point3<f64>>> {
    if n == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    let mut cdf = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0f64;
    for t in 0..mesh.triangles.len() {
        total += mesh.area(t).to_f64_lossless();
        cdf.push(total);
    }
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::EmptyMesh);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last = cdf.len() - 1;
    Ok((0..n)
        .map(|_| {
            let u = rng.random::<f64>() * total;
            let t = cdf.partition_point(|&c| c <= u).min(last);
            let [a, b, c] = mesh.corners(t).map(|p| p.cast::<f64>());
            let s = rng.random::<f64>().sqrt();
            let r = rng.random::<f64>();
            a * (1.0 - s) + b * (s * (1.0 - r)) + c * (s * r)
        })
        .collect())
}

fn mean_nearest(from: &[Point3<f64>], to: &KdTree<f64>) -> f64 {
    let d: Vec<f64> = from.par_iter().map(|&p| to.nearest(p).1).collect();
    d.iter().sum::<f64>() / d.len() as f64
}

/// `½ (mean_a min_b ‖a − b‖ + mean_b min_a ‖a − b‖)`.
pub fn chamfer(a: &[Point3<f64>], b: &[Point3<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("chamfer point set"));
    }
    let ta = KdTree::build(a)?;
    let tb = KdTree::build(b)?;
    Ok(0.5 * (mean_nearest(a, &tb) + mean_nearest(b, &ta)))
}

/// All three metrics. Both meshes must already share the normalized frame.
pub fn evaluate<T: Real>(pred: &TriangleMesh<T>, gt: &TriangleMesh<T>, cfg: &EvalConfig) -> Result<MetricReport> {
    cfg.validate()?;
    let sp = sample_surface(pred, cfg.samples, cfg.seed)?;
    let sg = sample_surface(gt, cfg.samples, cfg.seed.wrapping_add(1))?;
    let chamfer = chamfer(&sp, &sg)?;
    let opts = VoxelizeOptions {
        surface_shell: cfg.surface_shell,
    };
    let vp = voxelize_occupancy_with(pred, cfg.resolution, opts)?;
    let vg = voxelize_occupancy_with(gt, cfg.resolution, opts)?;
    Ok(MetricReport {
        chamfer,
        iou: iou(&vp, &vg)?,
        l2: l2_distance_fields(&vp, &vg)?,
        samples: cfg.samples,
        resolution: cfg.resolution,
        occupied_pred: vp.count(),
        occupied_gt: vg.count(),
        seed: cfg.seed,
    })
}
