use serde::{Deserialize, Serialize};

use crate::geom::{Aabb, OrientedPointCloud, Point3, SensorSet, TriangleMesh};
use crate::prep::EmptySampleSet;
use crate::{Error, Real, Result};

/// Uniform scale then translation: `p' = scale * p + translation`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationTransform {
    pub scale: f64,
    pub translation: [f64; 3],
}

impl Default for NormalizationTransform {
    fn default() -> Self {
        NormalizationTransform::identity()
    }
}

impl NormalizationTransform {
    pub fn identity() -> Self {
        NormalizationTransform {
            scale: 1.0,
            translation: [0.0; 3],
        }
    }

    /// Map `bounds` so its longest axis spans `[-fill, fill]`, centered at the origin.
    pub fn fit<T: Real>(bounds: &Aabb<T>, fill: f64) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::DegenerateInput("empty bounds".into()));
        }
        let b = Aabb::new(bounds.min.cast::<f64>(), bounds.max.cast::<f64>());
        let longest = b.extent().max_component();
        if !(longest > 0.0) || !longest.is_finite() {
            return Err(Error::DegenerateInput(format!("bounds have zero extent: {b:?}")));
        }
        let scale = 2.0 * fill / longest;
        let c = b.center();
        Ok(NormalizationTransform {
            scale,
            translation: [-c.x * scale, -c.y * scale, -c.z * scale],
        })
    }

    #[inline]
    pub fn apply<T: Real>(&self, p: Point3<T>) -> Point3<T> {
        let q = p.cast::<f64>() * self.scale + Point3::from_array(self.translation);
        q.cast()
    }

    #[inline]
    pub fn invert<T: Real>(&self, p: Point3<T>) -> Point3<T> {
        ((p.cast::<f64>() - Point3::from_array(self.translation)) / self.scale).cast()
    }

    pub fn apply_mesh<T: Real>(&self, m: &TriangleMesh<T>) -> TriangleMesh<T> {
        m.map_vertices(|v| self.apply(v))
    }

    pub fn invert_mesh<T: Real>(&self, m: &TriangleMesh<T>) -> TriangleMesh<T> {
        m.map_vertices(|v| self.invert(v))
    }
}

#[derive(Clone, Debug)]
pub struct NormalizedInputs<T> {
    pub cloud: OrientedPointCloud<T>,
    pub sensors: SensorSet<T>,
    pub empties: Option<EmptySampleSet<T>>,
    pub transform: NormalizationTransform,
}

/// Fit the transform to the cloud bounds and apply it to the cloud, the
/// sensors and the empty samples alike. Normals are unchanged.
pub fn normalize_to_unit_cube<T: Real>(
    cloud: &OrientedPointCloud<T>,
    sensors: &SensorSet<T>,
    empties: Option<&EmptySampleSet<T>>,
    fill: f64,
) -> Result<NormalizedInputs<T>> {
    let transform = NormalizationTransform::fit(&cloud.bounds(), fill)?;
    let points = cloud.points().iter().map(|&p| transform.apply(p)).collect();
    let cloud = OrientedPointCloud::new(points, cloud.normals().to_vec(), cloud.sensor_ids().to_vec())?;
    let sensors = SensorSet {
        positions: sensors.positions.iter().map(|&p| transform.apply(p)).collect(),
        orientations: sensors.orientations.clone(),
    };
    let empties = empties.map(|e| e.map_points(|p| transform.apply(p)));
    Ok(NormalizedInputs {
        cloud,
        sensors,
        empties,
        transform,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;
    use proptest::prelude::*;

    #[test]
    fn cube_zero_two() {
        let b = Aabb::new(Vec3::splat(0.0f64), Vec3::splat(2.0));
        let t = NormalizationTransform::fit(&b, 1.0).unwrap();
        assert_eq!(t.scale, 1.0);
        assert_eq!(t.translation, [-1.0, -1.0, -1.0]);
        assert_eq!(t.apply(Vec3::splat(2.0)), Vec3::splat(1.0));
    }

    #[test]
    fn anisotropic_box_uses_uniform_scale() {
        let b = Aabb::new(Vec3::splat(0.0f64), Vec3::new(4.0, 2.0, 1.0));
        let t = NormalizationTransform::fit(&b, 1.0).unwrap();
        assert_eq!(t.scale, 0.5);
        assert_eq!(t.apply(Vec3::new(0.0, 0.0, 0.0)).y, -0.5);
        assert_eq!(t.apply(Vec3::new(0.0, 2.0, 0.0)).y, 0.5);
        assert_eq!(t.apply(Vec3::new(4.0, 0.0, 0.0)).x, 1.0);
    }

    #[test]
    fn zero_extent_is_degenerate() {
        let b = Aabb::new(Vec3::splat(1.0f32), Vec3::splat(1.0));
        assert!(matches!(NormalizationTransform::fit(&b, 1.0), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn cloud_and_sensors_share_transform() {
        let c = OrientedPointCloud::new(
            vec![Vec3::new(0.0f64, 0.0, 0.0), Vec3::new(2.0, 1.0, 1.0)],
            vec![Vec3::new(0.0, 0.0, 1.0); 2],
            vec![0, 0],
        )
        .unwrap();
        let s = SensorSet::new(vec![Vec3::new(3.0, 0.5, 0.5)]);
        let n = normalize_to_unit_cube(&c, &s, None, 1.0).unwrap();
        assert_eq!(n.sensors.positions[0], n.transform.apply(Vec3::new(3.0, 0.5, 0.5)));
        assert_eq!(n.cloud.normals(), c.normals());
        assert!(n.cloud.points().iter().all(|p| p.x.abs() <= 1.0 && p.y.abs() <= 1.0 && p.z.abs() <= 1.0));
    }

    proptest! {
        #[test]
        fn inverse_round_trip(x in -50.0f64..50.0, y in -50.0f64..50.0, z in -50.0f64..50.0, s in 0.01f64..100.0) {
            let b = Aabb::new(Vec3::new(-s, 0.0, 1.0), Vec3::new(s, 2.0 * s, 1.0 + s));
            let t = NormalizationTransform::fit(&b, 1.0).unwrap();
            let p = Vec3::new(x, y, z);
            prop_assert!((t.invert(t.apply(p)) - p).norm() < 1e-6 * (1.0 + p.norm()));
        }
    }
}
