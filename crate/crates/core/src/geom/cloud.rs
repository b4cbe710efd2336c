use crate::geom::{Aabb, Point3, Vec3};
use crate::{Error, Real, Result};

/// Tolerance on normal length when constructing a cloud.
pub const UNIT_NORMAL_TOLERANCE: f64 = 1e-6;

/// Surface samples with inward unit normals and the sensor each was seen from.
///
/// `normals` may be empty for a raw scan that still needs normal estimation,
/// and `sensor_ids` may be empty when no sensor association is known. When
/// present they match `points` in length.
#[derive(Clone, Debug, PartialEq)]
pub struct OrientedPointCloud<T> {
    points: Vec<Point3<T>>,
    normals: Vec<Vec3<T>>,
    sensor_ids: Vec<u32>,
    bounds: Aabb<T>,
}

impl<T: Real> OrientedPointCloud<T> {
    pub fn new(points: Vec<Point3<T>>, normals: Vec<Vec3<T>>, sensor_ids: Vec<u32>) -> Result<Self> {
        if !normals.is_empty() && normals.len() != points.len() {
            return Err(Error::invalid(format!(
                "{} normals for {} points",
                normals.len(),
                points.len()
            )));
        }
        if !sensor_ids.is_empty() && sensor_ids.len() != points.len() {
            return Err(Error::invalid(format!(
                "{} sensor ids for {} points",
                sensor_ids.len(),
                points.len()
            )));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("point {i} is not finite")));
        }
        let tol = T::of(UNIT_NORMAL_TOLERANCE);
        if let Some(i) = normals
            .iter()
            .position(|n| !n.is_finite() || (n.norm() - T::one()).abs() > tol)
        {
            return Err(Error::invalid(format!("normal {i} is not unit length")));
        }
        let bounds = Aabb::from_points(&points);
        Ok(OrientedPointCloud {
            points,
            normals,
            sensor_ids,
            bounds,
        })
    }

    pub fn points(&self) -> &[Point3<T>] {
        &self.points
    }

    pub fn normals(&self) -> &[Vec3<T>] {
        &self.normals
    }

    pub fn sensor_ids(&self) -> &[u32] {
        &self.sensor_ids
    }

    pub fn bounds(&self) -> Aabb<T> {
        self.bounds
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn needs_normals(&self) -> bool {
        self.normals.is_empty() && !self.points.is_empty()
    }

    pub fn has_sensor_ids(&self) -> bool {
        !self.sensor_ids.is_empty() || self.points.is_empty()
    }

    /// Subset by index, preserving the order of `indices`.
    pub fn select(&self, indices: &[usize]) -> Self {
        let points: Vec<_> = indices.iter().map(|&i| self.points[i]).collect();
        let normals = if self.normals.is_empty() {
            Vec::new()
        } else {
            indices.iter().map(|&i| self.normals[i]).collect()
        };
        let sensor_ids = if self.sensor_ids.is_empty() {
            Vec::new()
        } else {
            indices.iter().map(|&i| self.sensor_ids[i]).collect()
        };
        let bounds = Aabb::from_points(&points);
        OrientedPointCloud {
            points,
            normals,
            sensor_ids,
            bounds,
        }
    }

    /// Concatenate clouds; either all or none must carry normals and sensor ids.
    pub fn concat(parts: &[Self]) -> Result<Self> {
        let mut points = Vec::new();
        let mut normals = Vec::new();
        let mut ids = Vec::new();
        for p in parts {
            points.extend_from_slice(&p.points);
            normals.extend_from_slice(&p.normals);
            ids.extend_from_slice(&p.sensor_ids);
        }
        Self::new(points, normals, ids)
    }

    pub fn into_parts(self) -> (Vec<Point3<T>>, Vec<Vec3<T>>, Vec<u32>) {
        (self.points, self.normals, self.sensor_ids)
    }

    pub fn cast<U: Real>(&self) -> OrientedPointCloud<U> {
        let points: Vec<Vec3<U>> = self.points.iter().map(|p| p.cast()).collect();
        // renormalize: rounding to a narrower type can push length past the tolerance
        let normals = self
            .normals
            .iter()
            .map(|n| n.cast::<U>().try_normalize().unwrap_or_else(|| n.cast()))
            .collect();
        let bounds = Aabb::from_points(&points);
        OrientedPointCloud {
            points,
            normals,
            sensor_ids: self.sensor_ids.clone(),
            bounds,
        }
    }
}

/// Sensor positions (and optional orientations) that produced a scan.
///
/// A cloud's `sensor_ids` index directly into `positions`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SensorSet<T> {
    pub positions: Vec<Point3<T>>,
    /// Unit quaternions `[w, x, y, z]` mapping camera to world, one per sensor.
    pub orientations: Option<Vec<[T; 4]>>,
}

impl<T: Real> SensorSet<T> {
    pub fn new(positions: Vec<Point3<T>>) -> Self {
        SensorSet {
            positions,
            orientations: None,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn position(&self, id: u32) -> Option<Point3<T>> {
        self.positions.get(id as usize).copied()
    }

    pub fn cast<U: Real>(&self) -> SensorSet<U> {
        SensorSet {
            positions: self.positions.iter().map(|p| p.cast()).collect(),
            orientations: self.orientations.as_ref().map(|o| {
                o.iter()
                    .map(|q| q.map(|c| U::of(c.to_f64_lossless())))
                    .collect()
            }),
        }
    }

    /// Check that every id in `cloud` resolves to a sensor.
    pub fn check_covers(&self, cloud: &OrientedPointCloud<T>) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyInput("sensor set"));
        }
        if !cloud.has_sensor_ids() {
            return Err(Error::invalid("point cloud has no sensor ids"));
        }
        if let Some(&bad) = cloud.sensor_ids().iter().find(|&&id| id as usize >= self.len()) {
            return Err(Error::invalid(format!(
                "sensor id {bad} out of range ({} sensors)",
                self.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_lengths() {
        let p = vec![Vec3::new(0.0f32, 0.0, 0.0); 3];
        let n = vec![Vec3::new(0.0f32, 0.0, 1.0); 2];
        assert!(OrientedPointCloud::new(p, n, vec![]).is_err());
    }

    #[test]
    fn rejects_non_unit_normal() {
        let p = vec![Vec3::new(0.0f64, 0.0, 0.0)];
        let n = vec![Vec3::new(0.0f64, 0.0, 1.1)];
        assert!(OrientedPointCloud::new(p, n, vec![]).is_err());
    }

    #[test]
    fn bounds_contain_points() {
        let p = vec![Vec3::new(0.0f64, 1.0, 2.0), Vec3::new(-1.0, 3.0, 0.5)];
        let c = OrientedPointCloud::new(p.clone(), vec![], vec![]).unwrap();
        assert!(p.iter().all(|q| c.bounds().contains(*q)));
        assert!(c.needs_normals());
    }
}
