use rayon::prelude::*;

use crate::geom::{point_triangle_distance_squared, TriangleMesh, Vec3, VoxelGrid};
use crate::{Error, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VoxelizeOptions {
    pub surface_shell: bool,
}

impl Default for VoxelizeOptions {
    fn default() -> Self {
        VoxelizeOptions { surface_shell: true }
    }
}

/// Occupancy of the `res³` voxels tiling `[-1, 1]³`, with the surface shell.
pub fn voxelize_occupancy<T: Real>(mesh: &TriangleMesh<T>, resolution: usize) -> Result<VoxelGrid<bool>> {
    voxelize_occupancy_with(mesh, resolution, VoxelizeOptions::default())
}

/// A voxel is inside when rays cast along at least two of `+x`, `+y`, `+z`
/// towards its center cross the mesh an odd number of times.
pub fn voxelize_occupancy_with<T: Real>(
    mesh: &TriangleMesh<T>,
    resolution: usize,
    opts: VoxelizeOptions,
) -> Result<VoxelGrid<bool>> {
    let mut grid = VoxelGrid::unit_cube_cells(resolution, false)?;
    if mesh.triangles.is_empty() {
        return Ok(grid);
    }
    // index space: voxel centers sit on the integers
    let tris: Vec<[Vec3<f64>; 3]> = (0..mesh.triangles.len())
        .map(|t| mesh.corners(t).map(|p| grid.to_index_space(p.cast())))
        .collect();

    let votes: Vec<Vec<u8>> = (0..3)
        .into_par_iter()
        .map(|axis| axis_parity(&tris, resolution, axis))
        .collect();
    for (idx, cell) in grid.data.iter_mut().enumerate() {
        *cell = votes[0][idx] + votes[1][idx] + votes[2][idx] >= 2;
    }
    if opts.surface_shell {
        mark_shell(&mut grid, &tris);
    }
    Ok(grid)
}

fn orient(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Edge function evaluated with endpoints in a canonical order, so two
/// triangles sharing an edge see exactly opposite values.
fn edge_fn(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    if (a[0], a[1]) <= (b[0], b[1]) {
        orient(a, b, p)
    } else {
        -orient(b, a, p)
    }
}

/// Tie rule for points exactly on an edge of a counter-clockwise triangle.
fn owns_edge(a: [f64; 2], b: [f64; 2]) -> bool {
    let d = [b[0] - a[0], b[1] - a[1]];
    d[1] < 0.0 || (d[1] == 0.0 && d[0] < 0.0)
}

/// Per-voxel parity of crossings along `axis` (1 = odd).
fn axis_parity(tris: &[[Vec3<f64>; 3]], res: usize, axis: usize) -> Vec<u8> {
    let (ua, va) = ((axis + 1) % 3, (axis + 2) % 3);
    let mut lines: Vec<Vec<f64>> = vec![Vec::new(); res * res];
    for tri in tris {
        let mut p = tri.map(|q| [q[ua], q[va]]);
        let mut depth = tri.map(|q| q[axis]);
        let area = orient(p[0], p[1], p[2]);
        if area == 0.0 {
            continue;
        }
        if area < 0.0 {
            p.swap(1, 2);
            depth.swap(1, 2);
        }
        let lo = |d: usize| p.iter().map(|q| q[d]).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let hi = |d: usize| p.iter().map(|q| q[d]).fold(f64::NEG_INFINITY, f64::max).floor().min(res as f64 - 1.0);
        let (u0, u1, v0, v1) = (lo(0), hi(0), lo(1), hi(1));
        if u0 > u1 || v0 > v1 {
            continue;
        }
        for iv in v0 as usize..=v1 as usize {
            for iu in u0 as usize..=u1 as usize {
                let q = [iu as f64, iv as f64];
                let mut w = [0.0; 3];
                let mut inside = true;
                for e in 0..3 {
                    let (a, b) = (p[(e + 1) % 3], p[(e + 2) % 3]);
                    w[e] = edge_fn(a, b, q);
                    if w[e] < 0.0 || (w[e] == 0.0 && !owns_edge(a, b)) {
                        inside = false;
                        break;
                    }
                }
                if inside {
                    let s = w[0] + w[1] + w[2];
                    let d = (w[0] * depth[0] + w[1] * depth[1] + w[2] * depth[2]) / s;
                    lines[iu + res * iv].push(d);
                }
            }
        }
    }

    let mut parity = vec![0u8; res * res * res];
    let stride = [1, res, res * res];
    for (l, line) in lines.iter_mut().enumerate() {
        if line.is_empty() {
            continue;
        }
        line.sort_by(f64::total_cmp);
        let (iu, iv) = (l % res, l / res);
        let base = iu * stride[ua] + iv * stride[va];
        let mut crossed = 0usize;
        for i in 0..res {
            while crossed < line.len() && line[crossed] < i as f64 {
                crossed += 1;
            }
            parity[base + i * stride[axis]] = (crossed % 2) as u8;
        }
    }
    parity
}

fn mark_shell(grid: &mut VoxelGrid<bool>, tris: &[[Vec3<f64>; 3]]) {
    let res = grid.resolution;
    let max = |d: usize| res[d] as f64 - 1.0;
    for [a, b, c] in tris {
        let mut range = [(0usize, 0usize); 3];
        let mut empty = false;
        for d in 0..3 {
            let lo = (a[d].min(b[d]).min(c[d]) - 0.5).ceil().max(0.0);
            let hi = (a[d].max(b[d]).max(c[d]) + 0.5).floor().min(max(d));
            if lo > hi {
                empty = true;
            }
            range[d] = (lo as usize, hi as usize);
        }
        if empty {
            continue;
        }
        for k in range[2].0..=range[2].1 {
            for j in range[1].0..=range[1].1 {
                for i in range[0].0..=range[0].1 {
                    let p = Vec3::new(i as f64, j as f64, k as f64);
                    if point_triangle_distance_squared(p, *a, *b, *c) <= 0.25 {
                        grid.set(i, j, k, true);
                    }
                }
            }
        }
    }
}

/// `|a ∧ b| / |a ∨ b|`, or 1 when both are empty.
pub fn iou(a: &VoxelGrid<bool>, b: &VoxelGrid<bool>) -> Result<f64> {
    if a.resolution != b.resolution {
        return Err(Error::invalid(format!(
            "iou needs equal resolutions, got {:?} and {:?}",
            a.resolution, b.resolution
        )));
    }
    let (mut both, mut either) = (0usize, 0usize);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        both += (x && y) as usize;
        either += (x || y) as usize;
    }
    Ok(if either == 0 { 1.0 } else { both as f64 / either as f64 })
}
