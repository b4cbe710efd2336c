//! Free-space samples along sensor-to-surface rays.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::{OrientedPointCloud, Point3, SensorSet, Vec3};
use crate::{Error, Real, Result};

/// Rays shorter than this are skipped.
pub const MIN_RAY_LENGTH: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmptySpaceConfig {
    /// Samples per ray, including the near-surface ones.
    pub per_ray: usize,
    /// Samples within `near_band` of the surface point.
    pub near_count: usize,
    /// Width of the near-surface band, in scene units.
    pub near_band: f64,
    /// Lattice cell size for deduplication, in scene units.
    pub resolution: f64,
    pub max_points: usize,
}

impl Default for EmptySpaceConfig {
    fn default() -> Self {
        EmptySpaceConfig {
            per_ray: 6,
            near_count: 2,
            near_band: 0.02,
            resolution: 0.001,
            max_points: 4_000_000,
        }
    }
}

impl EmptySpaceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.near_count > self.per_ray {
            return Err(Error::invalid("near_count must not exceed per_ray"));
        }
        if !(self.resolution > 0.0) || !(self.near_band >= 0.0) {
            return Err(Error::invalid("resolution must be positive and near_band non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmptySampleSet<T> {
    pub points: Vec<Point3<T>>,
    /// Index of the surface point whose ray produced each sample.
    pub ray_of: Vec<u32>,
    pub total_rays: usize,
    pub skipped_rays: usize,
    /// Samples drawn before deduplication.
    pub raw_samples: usize,
    pub near_samples: usize,
    /// Samples left after lattice deduplication, before the cap.
    pub deduplicated: usize,
}

impl<T: Real> EmptySampleSet<T> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn map_points(&self, f: impl Fn(Point3<T>) -> Point3<T>) -> Self {
        EmptySampleSet {
            points: self.points.iter().map(|&p| f(p)).collect(),
            ..self.clone()
        }
    }
}

/// Independent stream per ray so the result is thread-count independent.
fn ray_rng(seed: u64, ray: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ray as u64);
    rng
}

/// Draw a value in the open interval `(0, hi)`.
fn open_uniform(rng: &mut ChaCha8Rng, hi: f64) -> f64 {
    loop {
        let v = rng.random::<f64>() * hi;
        if v > 0.0 && v < hi {
            return v;
        }
    }
}

/// Samples for one ray from `s` to `p`, as ray parameters `t` in `(0, 1)`
/// with `q = s + t (p - s)`. The last `near_count` lie within `near_band` of `p`.
fn ray_parameters(length: f64, cfg: &EmptySpaceConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let band = cfg.near_band.min(length);
    let far_hi = 1.0 - band / length;
    let mut ts = Vec::with_capacity(cfg.per_ray);
    for _ in 0..cfg.per_ray - cfg.near_count {
        // an empty far range (ray within the band) degenerates to the whole segment
        let hi = if far_hi > 0.0 { far_hi } else { 1.0 };
        ts.push(open_uniform(rng, hi));
    }
    for _ in 0..cfg.near_count {
        let back = if band > 0.0 { open_uniform(rng, band) } else { 0.5 * length };
        ts.push(1.0 - back / length);
    }
    ts
}

/// Sample free space between each surface point and its sensor, deduplicate
/// on a `resolution` lattice (first sample per cell wins, in ray order) and
/// cap to `max_points` by uniform random selection.
pub fn sample_empty_space<T: Real>(
    cloud: &OrientedPointCloud<T>,
    sensors: &SensorSet<T>,
    cfg: &EmptySpaceConfig,
    seed: u64,
) -> Result<EmptySampleSet<T>> {
    cfg.validate()?;
    sensors.check_covers(cloud)?;
    let per_ray: Vec<Option<Vec<Vec3<f64>>>> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let p = cloud.points()[i].cast::<f64>();
            let s = sensors.position(cloud.sensor_ids()[i])?.cast::<f64>();
            let len = (p - s).norm();
            if !(len > MIN_RAY_LENGTH) {
                return None;
            }
            let mut rng = ray_rng(seed, i);
            Some(
                ray_parameters(len, cfg, &mut rng)
                    .into_iter()
                    .map(|t| s + (p - s) * t)
                    .collect(),
            )
        })
        .collect();
    let skipped_rays = per_ray.iter().filter(|r| r.is_none()).count();
    let raw_samples = per_ray.iter().flatten().map(Vec::len).sum();
    let near_samples = (cloud.len() - skipped_rays) * cfg.near_count;

    let inv_res = 1.0 / cfg.resolution;
    let mut seen: HashSet<[i64; 3]> = HashSet::with_capacity(raw_samples);
    let mut points = Vec::new();
    let mut ray_of = Vec::new();
    for (i, samples) in per_ray.iter().enumerate() {
        for q in samples.iter().flatten() {
            let key = [
                (q.x * inv_res).floor() as i64,
                (q.y * inv_res).floor() as i64,
                (q.z * inv_res).floor() as i64,
            ];
            if seen.insert(key) {
                points.push(q.cast::<T>());
                ray_of.push(i as u32);
            }
        }
    }
    let deduplicated = points.len();
    if points.len() > cfg.max_points {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xE3F7_A5D1_2B4C_9608);
        let mut keep = rand::seq::index::sample(&mut rng, points.len(), cfg.max_points).into_vec();
        keep.sort_unstable();
        points = keep.iter().map(|&k| points[k]).collect();
        ray_of = keep.iter().map(|&k| ray_of[k]).collect();
    }
    Ok(EmptySampleSet {
        points,
        ray_of,
        total_rays: cloud.len(),
        skipped_rays,
        raw_samples,
        near_samples,
        deduplicated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_ray(s: Vec3<f64>, p: Vec3<f64>) -> (OrientedPointCloud<f64>, SensorSet<f64>) {
        (
            OrientedPointCloud::new(vec![p], vec![], vec![0]).unwrap(),
            SensorSet::new(vec![s]),
        )
    }

    #[test]
    fn single_ray_six_samples() {
        let s = Vec3::zero();
        let p = Vec3::new(0.0, 0.0, 1.0);
        let (c, ss) = single_ray(s, p);
        let set = sample_empty_space(&c, &ss, &EmptySpaceConfig::default(), 3).unwrap();
        assert_eq!(set.len(), 6);
        for q in &set.points {
            assert!(q.x == 0.0 && q.y == 0.0 && q.z > 0.0 && q.z < 1.0);
        }
        let near = set.points.iter().filter(|q| (p - **q).norm() < 0.02).count();
        assert!(near >= 2);
    }

    #[test]
    fn coincident_sensor_is_skipped() {
        let (c, ss) = single_ray(Vec3::new(1.0, 1.0, 1.0), Vec3::new(1.0, 1.0, 1.0));
        let set = sample_empty_space(&c, &ss, &EmptySpaceConfig::default(), 3).unwrap();
        assert_eq!(set.skipped_rays, 1);
        assert!(set.is_empty());
    }

    #[test]
    fn short_ray_stays_on_segment() {
        let (c, ss) = single_ray(Vec3::zero(), Vec3::new(0.005, 0.0, 0.0));
        let cfg = EmptySpaceConfig {
            resolution: 1e-6,
            ..Default::default()
        };
        let set = sample_empty_space(&c, &ss, &cfg, 1).unwrap();
        assert_eq!(set.len(), 6);
        assert!(set.points.iter().all(|q| q.x > 0.0 && q.x < 0.005));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let (c, ss) = single_ray(Vec3::zero(), Vec3::new(1.0, 0.0, 0.0));
        let cfg = EmptySpaceConfig {
            per_ray: 1,
            near_count: 2,
            ..Default::default()
        };
        assert!(sample_empty_space(&c, &ss, &cfg, 0).is_err());
    }

    #[test]
    fn cap_and_dedup() {
        let pts: Vec<_> = (0..2000).map(|i| Vec3::new(1.0 + (i % 50) as f64 * 0.01, (i / 50) as f64 * 0.01, 0.5)).collect();
        let n = pts.len();
        let c = OrientedPointCloud::new(pts, vec![], vec![0; n]).unwrap();
        let ss = SensorSet::new(vec![Vec3::zero()]);
        let cfg = EmptySpaceConfig {
            max_points: 5000,
            ..Default::default()
        };
        let set = sample_empty_space(&c, &ss, &cfg, 2).unwrap();
        assert_eq!(set.len(), 5000);
        assert!(set.deduplicated > 5000);
        let mut cells = HashSet::new();
        for q in &set.points {
            assert!(cells.insert([(q.x * 1000.0).floor() as i64, (q.y * 1000.0).floor() as i64, (q.z * 1000.0).floor() as i64]));
        }
    }
}
