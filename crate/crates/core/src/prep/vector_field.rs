//! Smoothed inward-normal field near the scan, from clusters of neighboring
//! oriented points.

use serde::{Deserialize, Serialize};

use crate::geom::{KdTree, OrientedPointCloud, Point3, Vec3};
use crate::{Error, Real, Result};

pub const DEFAULT_K: usize = 20;
pub const DEFAULT_CLUSTER_ANGLE_DEG: f64 = 60.0;
pub const DEFAULT_NEAR_RADIUS: f64 = 0.05;

/// How a candidate normal is compared when joining a cluster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterMembership {
    /// Against the cluster's running gaussian-weighted mean normal.
    RunningMean,
    /// Against the normal of the cluster's first (closest) member.
    Seed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bandwidth {
    /// σ = mean distance of the `k` neighbors to the query.
    MeanNeighborDistance,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VectorFieldConfig {
    pub k: usize,
    pub cluster_angle_deg: f64,
    pub bandwidth: Bandwidth,
    /// Queries farther than this from every scan point are undefined.
    pub near_radius: f64,
    pub membership: ClusterMembership,
}

impl Default for VectorFieldConfig {
    fn default() -> Self {
        VectorFieldConfig {
            k: DEFAULT_K,
            cluster_angle_deg: DEFAULT_CLUSTER_ANGLE_DEG,
            bandwidth: Bandwidth::MeanNeighborDistance,
            near_radius: DEFAULT_NEAR_RADIUS,
            membership: ClusterMembership::RunningMean,
        }
    }
}

#[derive(Clone, Debug)]
pub struct VectorFieldEstimator<T> {
    tree: KdTree<T>,
    normals: Vec<Vec3<T>>,
    config: VectorFieldConfig,
    cos_threshold: f64,
}

struct Cluster {
    sum: Vec3<f64>,
    seed: Vec3<f64>,
    distance: f64,
}

impl Cluster {
    fn mean(&self) -> Vec3<f64> {
        self.sum.try_normalize().unwrap_or(self.seed)
    }
}

impl<T: Real> VectorFieldEstimator<T> {
    pub fn build(cloud: &OrientedPointCloud<T>, config: VectorFieldConfig) -> Result<Self> {
        if config.k == 0 {
            return Err(Error::invalid("vector field k must be >= 1"));
        }
        if let Bandwidth::Fixed(s) = config.bandwidth {
            if !(s > 0.0) {
                return Err(Error::invalid("gaussian bandwidth must be positive"));
            }
        }
        if !(config.near_radius > 0.0) {
            return Err(Error::invalid("near-surface radius must be positive"));
        }
        if cloud.needs_normals() {
            return Err(Error::invalid("vector field needs an oriented cloud"));
        }
        Ok(VectorFieldEstimator {
            tree: KdTree::build(cloud.points())?,
            normals: cloud.normals().to_vec(),
            cos_threshold: config.cluster_angle_deg.to_radians().cos(),
            config,
        })
    }

    pub fn config(&self) -> &VectorFieldConfig {
        &self.config
    }

    /// Distance from `x` to the nearest scan point.
    pub fn surface_distance(&self, x: Point3<T>) -> T {
        self.tree.nearest(x).1
    }

    /// Unit inward normal estimate at `x`, or `None` outside the near-surface band.
    pub fn query(&self, x: Point3<T>) -> Option<Vec3<T>> {
        let hood = self.tree.knn(x, self.config.k);
        let (_, d0) = *hood.first()?;
        if d0.to_f64_lossless() > self.config.near_radius {
            return None;
        }
        let sigma = match self.config.bandwidth {
            Bandwidth::Fixed(s) => s,
            Bandwidth::MeanNeighborDistance => {
                hood.iter().map(|&(_, d)| d.to_f64_lossless()).sum::<f64>() / hood.len() as f64
            }
        };
        let inv_two_sigma2 = if sigma > 0.0 { 0.5 / (sigma * sigma) } else { 0.0 };
        let mut clusters: Vec<Cluster> = Vec::new();
        for &(i, d) in &hood {
            let n = self.normals[i].cast::<f64>();
            let d = d.to_f64_lossless();
            let w = (-d * d * inv_two_sigma2).exp();
            let target = clusters.iter_mut().find(|c| {
                let reference = match self.config.membership {
                    ClusterMembership::RunningMean => c.mean(),
                    ClusterMembership::Seed => c.seed,
                };
                reference.dot(n) >= self.cos_threshold
            });
            match target {
                Some(c) => {
                    c.sum += n * w;
                    c.distance = c.distance.min(d);
                }
                None => clusters.push(Cluster {
                    sum: n * w,
                    seed: n,
                    distance: d,
                }),
            }
        }
        // neighbors arrive sorted, so the first cluster is always the closest;
        // min_by keeps the earliest on ties
        let best = clusters
            .iter()
            .min_by(|a, b| a.distance.total_cmp(&b.distance))?;
        Some(best.mean().cast())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(z: f64, n: Vec3<f64>, count: usize) -> (Vec<Vec3<f64>>, Vec<Vec3<f64>>) {
        let side = (count as f64).sqrt() as usize;
        let mut p = Vec::new();
        for i in 0..side {
            for j in 0..side {
                p.push(Vec3::new(i as f64 * 0.01, j as f64 * 0.01, z));
            }
        }
        let nn = vec![n; p.len()];
        (p, nn)
    }

    #[test]
    fn single_cluster_returns_shared_normal() {
        let n = Vec3::new(0.0, 0.6, 0.8);
        let (p, nn) = grid(0.0, n, 100);
        let est = VectorFieldEstimator::build(&OrientedPointCloud::new(p, nn, vec![]).unwrap(), VectorFieldConfig::default()).unwrap();
        let got = est.query(Vec3::new(0.031, 0.042, 0.01)).unwrap();
        assert!((got - n).norm() < 1e-12);
    }

    #[test]
    fn double_sided_sheet_picks_near_side() {
        // 10 points facing +z at z=0 and 10 facing -z at z=-0.004, query above
        let (mut p, mut nn) = grid(0.0, Vec3::new(0.0, 0.0, 1.0), 9);
        p.push(Vec3::new(0.015, 0.015, 0.0));
        nn.push(Vec3::new(0.0, 0.0, 1.0));
        let (p2, n2) = grid(-0.004, Vec3::new(0.0, 0.0, -1.0), 9);
        p.extend(p2);
        nn.extend(n2);
        p.push(Vec3::new(0.015, 0.015, -0.004));
        nn.push(Vec3::new(0.0, 0.0, -1.0));
        let cloud = OrientedPointCloud::new(p, nn, vec![]).unwrap();
        let est = VectorFieldEstimator::build(&cloud, VectorFieldConfig::default()).unwrap();
        let got = est.query(Vec3::new(0.01, 0.01, 0.002)).unwrap();
        assert_eq!(got, Vec3::new(0.0, 0.0, 1.0));
        let below = est.query(Vec3::new(0.01, 0.01, -0.006)).unwrap();
        assert_eq!(below, Vec3::new(0.0, 0.0, -1.0));
    }

    #[test]
    fn far_query_is_undefined() {
        let (p, nn) = grid(0.0, Vec3::new(0.0, 0.0, 1.0), 100);
        let est = VectorFieldEstimator::build(&OrientedPointCloud::new(p, nn, vec![]).unwrap(), VectorFieldConfig::default()).unwrap();
        assert!(est.query(Vec3::new(0.05, 0.05, 0.0501)).is_none());
        assert!(est.query(Vec3::new(0.05, 0.05, 0.0499)).is_some());
    }

    #[test]
    fn seed_membership_differs_from_running_mean() {
        // normals rotate gradually; running mean drifts to admit all, seed-only splits
        let mut p = Vec::new();
        let mut nn = Vec::new();
        for i in 0..8 {
            let a = (i as f64 * 12.0).to_radians();
            p.push(Vec3::new(0.001 * i as f64, 0.0, 0.0));
            nn.push(Vec3::new(a.sin(), 0.0, a.cos()));
        }
        let cloud = OrientedPointCloud::new(p, nn, vec![]).unwrap();
        let mut cfg = VectorFieldConfig {
            k: 8,
            cluster_angle_deg: 30.0,
            ..Default::default()
        };
        let x = Vec3::new(0.0, 0.0, 0.0);
        let running = VectorFieldEstimator::build(&cloud, cfg).unwrap().query(x).unwrap();
        cfg.membership = ClusterMembership::Seed;
        let seed = VectorFieldEstimator::build(&cloud, cfg).unwrap().query(x).unwrap();
        assert!(running.x > seed.x);
        assert!((running.norm() - 1.0).abs() < 1e-12 && (seed.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sphere_field_matches_inward_normals() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r = 0.8;
        let mut p = Vec::new();
        let mut nn = Vec::new();
        for _ in 0..20_000 {
            let z: f64 = rng.random_range(-1.0..1.0);
            let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let d = Vec3::new((1.0 - z * z).sqrt() * a.cos(), (1.0 - z * z).sqrt() * a.sin(), z);
            p.push(d * r);
            nn.push(-d);
        }
        let cloud = OrientedPointCloud::new(p.clone(), nn, vec![]).unwrap();
        let est = VectorFieldEstimator::build(&cloud, VectorFieldConfig::default()).unwrap();
        let mut total = 0.0;
        for q in p.iter().take(2000) {
            let g = est.query(*q).unwrap();
            total += g.dot(-q.normalize()).clamp(-1.0, 1.0).acos().to_degrees();
        }
        assert!(total / 2000.0 < 2.0, "mean angular error {}", total / 2000.0);
    }
}
