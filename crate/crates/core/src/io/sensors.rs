//! Sensor sidecar: `{"sensors": [{"id": int, "position": [x, y, z]}]}`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geom::{SensorSet, Vec3};
use crate::{Error, Real, Result};

pub const SENSORS_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SensorRecord {
    pub id: u32,
    pub position: [f64; 3],
    /// Camera-to-world unit quaternion `[w, x, y, z]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation: Option<[f64; 4]>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SensorFile {
    #[serde(default = "default_version")]
    pub schema_version: u32,
    pub sensors: Vec<SensorRecord>,
}

fn default_version() -> u32 {
    SENSORS_SCHEMA_VERSION
}

impl SensorFile {
    pub fn from_set<T: Real>(set: &SensorSet<T>) -> Self {
        let sensors = set
            .positions
            .iter()
            .enumerate()
            .map(|(i, p)| SensorRecord {
                id: i as u32,
                position: p.cast::<f64>().to_array(),
                orientation: set
                    .orientations
                    .as_ref()
                    .map(|o| o[i].map(|c| c.to_f64_lossless())),
            })
            .collect();
        SensorFile {
            schema_version: SENSORS_SCHEMA_VERSION,
            sensors,
        }
    }

    /// Ids must form `0..n` in any order.
    pub fn to_set<T: Real>(&self) -> Result<SensorSet<T>> {
        let n = self.sensors.len();
        let mut positions = vec![None; n];
        let mut orientations = vec![None; n];
        for s in &self.sensors {
            let slot = positions
                .get_mut(s.id as usize)
                .ok_or_else(|| Error::invalid(format!("sensor id {} not in 0..{n}", s.id)))?;
            if slot.is_some() {
                return Err(Error::invalid(format!("duplicate sensor id {}", s.id)));
            }
            let p = Vec3::from_array(s.position);
            if !p.is_finite() {
                return Err(Error::invalid(format!("sensor {} position not finite", s.id)));
            }
            *slot = Some(p.cast::<T>());
            orientations[s.id as usize] = s.orientation;
        }
        let positions = positions.into_iter().map(|p| p.unwrap()).collect();
        let orientations = if orientations.iter().all(Option::is_some) && n > 0 {
            Some(
                orientations
                    .into_iter()
                    .map(|q| q.unwrap().map(T::of))
                    .collect(),
            )
        } else {
            None
        };
        Ok(SensorSet {
            positions,
            orientations,
        })
    }
}

pub fn read_sensors<T: Real>(path: impl AsRef<Path>) -> Result<SensorSet<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: SensorFile = serde_json::from_str(&text)?;
    file.to_set()
}

pub fn write_sensors<T: Real>(set: &SensorSet<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&SensorFile::from_set(set))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_minimal_sidecar() {
        let f: SensorFile =
            serde_json::from_str(r#"{"sensors": [{"id": 1, "position": [0, 0, 5]}, {"id": 0, "position": [1, 2, 3]}]}"#).unwrap();
        let s: SensorSet<f32> = f.to_set().unwrap();
        assert_eq!(s.positions, vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(0.0, 0.0, 5.0)]);
        assert!(s.orientations.is_none());
    }

    #[test]
    fn rejects_gaps_and_duplicates() {
        let gap: SensorFile = serde_json::from_str(r#"{"sensors": [{"id": 2, "position": [0, 0, 0]}]}"#).unwrap();
        assert!(gap.to_set::<f32>().is_err());
        let dup: SensorFile = serde_json::from_str(
            r#"{"sensors": [{"id": 0, "position": [0, 0, 0]}, {"id": 0, "position": [1, 0, 0]}]}"#,
        )
        .unwrap();
        assert!(dup.to_set::<f32>().is_err());
    }

    #[test]
    fn round_trip_with_orientations() {
        let set = SensorSet {
            positions: vec![Vec3::new(0.5f64, 1.0, -2.0), Vec3::new(3.0, 0.0, 1.0)],
            orientations: Some(vec![[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]]),
        };
        let text = serde_json::to_string(&SensorFile::from_set(&set)).unwrap();
        let back: SensorSet<f64> = serde_json::from_str::<SensorFile>(&text).unwrap().to_set().unwrap();
        assert_eq!(back, set);
    }
}
