use crate::geom::Vec3;
use crate::{Error, Result};

/// Dense 3-D grid; sample `(i, j, k)` sits at `origin + spacing * (i, j, k)`.
///
/// Storage is x-fastest: `idx = i + nx * (j + ny * k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid<V> {
    pub resolution: [usize; 3],
    pub origin: Vec3<f64>,
    pub spacing: f64,
    pub data: Vec<V>,
}

impl<V: Clone> VoxelGrid<V> {
    pub fn new(resolution: [usize; 3], origin: Vec3<f64>, spacing: f64, fill: V) -> Result<Self> {
        if resolution.contains(&0) || !(spacing > 0.0) {
            return Err(Error::invalid(format!(
                "voxel grid needs positive resolution and spacing, got {resolution:?} / {spacing}"
            )));
        }
        let n = resolution[0] * resolution[1] * resolution[2];
        Ok(VoxelGrid {
            resolution,
            origin,
            spacing,
            data: vec![fill; n],
        })
    }

    /// `res³` samples on the corner lattice of `[-1, 1]³`, including both faces.
    pub fn unit_cube_corners(res: usize, fill: V) -> Result<Self> {
        if res < 2 {
            return Err(Error::invalid("corner lattice needs resolution >= 2"));
        }
        Self::new([res; 3], Vec3::splat(-1.0), 2.0 / (res - 1) as f64, fill)
    }

    /// `res³` voxels tiling `[-1, 1]³`, one sample at each voxel center.
    pub fn unit_cube_cells(res: usize, fill: V) -> Result<Self> {
        let h = 2.0 / res as f64;
        Self::new([res; 3], Vec3::splat(-1.0 + 0.5 * h), h, fill)
    }

    pub fn same_shape(&self, other_res: [usize; 3]) -> bool {
        self.resolution == other_res
    }
}

impl<V> VoxelGrid<V> {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn linear(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.resolution[0] * (j + self.resolution[1] * k)
    }

    #[inline]
    pub fn unlinear(&self, idx: usize) -> [usize; 3] {
        let nx = self.resolution[0];
        let ny = self.resolution[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> &V {
        &self.data[self.linear(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: V) {
        let l = self.linear(i, j, k);
        self.data[l] = v;
    }

    #[inline]
    pub fn world(&self, i: usize, j: usize, k: usize) -> Vec3<f64> {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.spacing
    }

    /// Continuous grid coordinates of a world point.
    #[inline]
    pub fn to_index_space(&self, p: Vec3<f64>) -> Vec3<f64> {
        (p - self.origin) / self.spacing
    }

    /// Inverse of `to_index_space`.
    #[inline]
    pub fn from_index_space(&self, g: Vec3<f64>) -> Vec3<f64> {
        self.origin + g * self.spacing
    }
}

impl VoxelGrid<bool> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn corner_lattice_hits_cube_corners() {
        let g = VoxelGrid::unit_cube_corners(2, 0.0f32).unwrap();
        assert_eq!(g.len(), 8);
        assert_eq!(g.world(0, 0, 0), Vec3::splat(-1.0));
        assert_eq!(g.world(1, 1, 1), Vec3::splat(1.0));
    }

    #[test]
    fn cell_centers_are_interior() {
        let g = VoxelGrid::unit_cube_cells(4, false).unwrap();
        assert_eq!(g.world(0, 0, 0), Vec3::splat(-0.75));
        assert_eq!(g.world(3, 3, 3), Vec3::splat(0.75));
    }

    proptest! {
        #[test]
        fn world_index_round_trip(x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0, res in 2usize..300) {
            let g = VoxelGrid::unit_cube_cells(res, 0u8).unwrap();
            let p = Vec3::new(x, y, z);
            let back = g.from_index_space(g.to_index_space(p));
            prop_assert!((back - p).norm() < 1e-6 * g.spacing);
        }
    }
}
