use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;

use crate::geom::{KdTree, OrientedPointCloud, SensorSet, Vec3};
use crate::{Error, Real, Result};

pub const DEFAULT_NORMAL_K: usize = 20;

#[derive(Clone, Debug)]
pub struct NormalEstimate<T> {
    pub cloud: OrientedPointCloud<T>,
    /// Points dropped because their neighborhood had no unique plane.
    pub dropped: usize,
}

/// Smallest-eigenvalue eigenvector of the neighborhood covariance, or `None`
/// when the neighborhood is degenerate (collinear or coincident).
pub fn plane_normal<T: Real>(neighborhood: &[Vec3<T>]) -> Option<Vec3<f64>> {
    let n = neighborhood.len() as f64;
    let mean = neighborhood
        .iter()
        .fold(Vec3::<f64>::zero(), |acc, p| acc + p.cast())
        / n;
    let mut cov = Matrix3::<f64>::zeros();
    for p in neighborhood {
        let d = p.cast::<f64>() - mean;
        let v = nalgebra::Vector3::new(d.x, d.y, d.z);
        cov += v * v.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (l1, l2) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if !(l2 > 0.0) || l1 <= 1e-12 * l2 {
        return None;
    }
    let e = eig.eigenvectors.column(order[0]);
    Vec3::new(e[0], e[1], e[2]).try_normalize()
}

/// PCA normals over the `k` nearest neighbors (plus the point itself),
/// oriented to face the point's sensor and then flipped to point inward.
/// Existing normals are replaced.
pub fn estimate_normals_pca<T: Real>(
    cloud: &OrientedPointCloud<T>,
    sensors: &SensorSet<T>,
    k: usize,
) -> Result<NormalEstimate<T>> {
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if cloud.len() < k + 1 {
        return Err(Error::invalid(format!(
            "normal estimation with k={k} needs at least {} points, cloud has {}",
            k + 1,
            cloud.len()
        )));
    }
    sensors.check_covers(cloud)?;
    let tree = KdTree::build(cloud.points())?;
    let estimates: Vec<Option<Vec3<T>>> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let p = cloud.points()[i];
            let hood: Vec<Vec3<T>> = tree.knn(p, k + 1).iter().map(|&(j, _)| cloud.points()[j]).collect();
            let n = plane_normal(&hood)?;
            let s = sensors.position(cloud.sensor_ids()[i])?.cast::<f64>();
            let toward_sensor = s - p.cast::<f64>();
            let outward = if n.dot(toward_sensor) > 0.0 { n } else { -n };
            Some((-outward).cast::<T>())
        })
        .collect();
    let keep: Vec<usize> = (0..cloud.len()).filter(|&i| estimates[i].is_some()).collect();
    let dropped = cloud.len() - keep.len();
    if dropped > 0 {
        log::warn!("normal estimation dropped {dropped} points with degenerate neighborhoods");
    }
    let points = keep.iter().map(|&i| cloud.points()[i]).collect();
    let normals = keep
        .iter()
        .map(|&i| {
            let n = estimates[i].unwrap();
            n.try_normalize().unwrap_or(n)
        })
        .collect();
    let ids = keep.iter().map(|&i| cloud.sensor_ids()[i]).collect();
    Ok(NormalEstimate {
        cloud: OrientedPointCloud::new(points, normals, ids)?,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_gets_inward_normals() {
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                pts.push(Vec3::new(i as f64 * 0.1, j as f64 * 0.1, 0.0));
            }
        }
        let n = pts.len();
        let cloud = OrientedPointCloud::new(pts, vec![], vec![0; n]).unwrap();
        let sensors = SensorSet::new(vec![Vec3::new(0.0, 0.0, 5.0)]);
        let est = estimate_normals_pca(&cloud, &sensors, 20).unwrap();
        assert_eq!(est.dropped, 0);
        for nn in est.cloud.normals() {
            assert!((*nn - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-9);
        }
    }

    #[test]
    fn sphere_normals_point_to_center() {
        // evenly spread samples (Fibonacci lattice)
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let pts: Vec<Vec3<f64>> = (0..10_000)
            .map(|i| {
                let z = 1.0 - (2.0 * i as f64 + 1.0) / 10_000.0;
                let a = golden * i as f64;
                let r = (1.0 - z * z).sqrt();
                Vec3::new(r * a.cos(), r * a.sin(), z) * 0.7
            })
            .collect();
        let n = pts.len();
        let cloud = OrientedPointCloud::new(pts, vec![], vec![0; n]).unwrap();
        // the lattice is irregular at its poles, so view from the equator
        let sensors = SensorSet::new(vec![Vec3::new(0.0, 30.0, 0.0)]);
        let est = estimate_normals_pca(&cloud, &sensors, 20).unwrap();
        // a far sensor sees only the near side correctly; check points facing it
        let s = sensors.positions[0];
        let mut checked = 0;
        for (p, nn) in est.cloud.points().iter().zip(est.cloud.normals()) {
            if p.normalize().dot((s - *p).normalize()) > 0.2 {
                let angle = nn.dot(-p.normalize()).clamp(-1.0, 1.0).acos();
                assert!(angle < 1e-2, "angle {angle} at {p:?}");
                checked += 1;
            }
        }
        assert!(checked > 2000);
    }

    #[test]
    fn collinear_points_are_dropped() {
        let mut pts: Vec<Vec3<f64>> = (0..30).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        pts.extend((0..30).map(|i| Vec3::new(100.0 + (i % 6) as f64, (i / 6) as f64, 0.0)));
        let cloud = OrientedPointCloud::new(pts, vec![], vec![0; 60]).unwrap();
        let sensors = SensorSet::new(vec![Vec3::new(0.0, 0.0, 5.0)]);
        let est = estimate_normals_pca(&cloud, &sensors, 5).unwrap();
        assert_eq!(est.dropped, 30);
        assert_eq!(est.cloud.len(), 30);
    }

    #[test]
    fn k_too_large_is_rejected() {
        let pts = vec![Vec3::new(0.0f32, 0.0, 0.0); 5];
        let cloud = OrientedPointCloud::new(pts, vec![], vec![0; 5]).unwrap();
        let sensors = SensorSet::new(vec![Vec3::new(0.0, 0.0, 5.0)]);
        assert!(matches!(estimate_normals_pca(&cloud, &sensors, 20), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn missing_sensor_is_rejected() {
        let pts: Vec<_> = (0..30).map(|i| Vec3::new(i as f32, (i * i % 7) as f32, 0.0)).collect();
        let cloud = OrientedPointCloud::new(pts, vec![], vec![1; 30]).unwrap();
        let sensors = SensorSet::new(vec![Vec3::new(0.0, 0.0, 5.0)]);
        assert!(estimate_normals_pca(&cloud, &sensors, 5).is_err());
    }
}
