//! Meshing the level set of a trained field.

mod tables;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::{Point3, TriangleMesh, Vec3, VoxelGrid};
use crate::prep::NormalizationTransform;
use crate::siren::SirenField;
use crate::{Error, Real, Result};

use tables::{EDGE_TABLE, TRI_TABLE};

pub const DESK_RESOLUTION: usize = 128;
pub const PAPER_RESOLUTION: usize = 640;

/// Crossings this close to a lattice point (in edge fractions) snap onto it,
/// so near-degenerate slivers collapse and are removed by welding.
const SNAP: f64 = 1e-7;
/// Triangles with at most this area are dropped.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionConfig {
    /// Lattice points per axis over `[-1, 1]`.
    pub resolution: usize,
    pub iso: f64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            resolution: DESK_RESOLUTION,
            iso: 0.0,
        }
    }
}

/// Field values on the `res³` corner lattice of `[-1, 1]³`.
pub fn sample_field_grid<T: Real>(field: &SirenField<T>, resolution: usize) -> Result<VoxelGrid<T>> {
    let mut grid = VoxelGrid::unit_cube_corners(resolution, T::zero())?;
    let [nx, ny, _] = grid.resolution;
    let slab = nx * ny;
    let template = grid.clone();
    grid.data.par_chunks_mut(slab).enumerate().for_each(|(k, out)| {
        let pts: Vec<Point3<T>> = (0..slab)
            .map(|l| template.world(l % nx, l / nx, k).cast())
            .collect();
        out.copy_from_slice(&field.eval_batch(&pts));
    });
    Ok(grid)
}

/// Bourke corner order: bit 0 is x, bit 1 toggles y with x, bit 2 is z.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];
const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 0),
    (4, 5),
    (5, 6),
    (6, 7),
    (7, 4),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Vertex identity: `4 * lattice index + axis` for an edge starting at that
/// lattice point, `4 * lattice index + 3` for the lattice point itself.
type VertexKey = u64;

fn edge_key<T: Real>(grid: &VoxelGrid<T>, a: [usize; 3], b: [usize; 3], iso: f64) -> VertexKey {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let axis = (0..3).find(|&d| lo[d] != hi[d]).unwrap();
    let va = grid.get(lo[0], lo[1], lo[2]).to_f64_lossless();
    let vb = grid.get(hi[0], hi[1], hi[2]).to_f64_lossless();
    let t = (iso - va) / (vb - va);
    let lin = |p: [usize; 3]| grid.linear(p[0], p[1], p[2]) as u64;
    if t <= SNAP {
        4 * lin(lo) + 3
    } else if t >= 1.0 - SNAP {
        4 * lin(hi) + 3
    } else {
        4 * lin(lo) + axis as u64
    }
}

fn key_position<T: Real>(grid: &VoxelGrid<T>, key: VertexKey, iso: f64) -> Vec3<f64> {
    let idx = (key / 4) as usize;
    let kind = (key % 4) as usize;
    let [i, j, k] = grid.unlinear(idx);
    let p = grid.world(i, j, k);
    if kind == 3 {
        return p;
    }
    let mut hi = [i, j, k];
    hi[kind] += 1;
    let va = grid.data[idx].to_f64_lossless();
    let vb = grid.get(hi[0], hi[1], hi[2]).to_f64_lossless();
    let t = (iso - va) / (vb - va);
    let mut q = p;
    q[kind] += t * grid.spacing;
    q
}

fn slab_triangles<T: Real>(grid: &VoxelGrid<T>, k: usize, iso: f64) -> Vec<[VertexKey; 3]> {
    let [nx, ny, _] = grid.resolution;
    let mut out = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let corner = |c: usize| [i + CORNERS[c][0], j + CORNERS[c][1], k + CORNERS[c][2]];
            let mut case = 0usize;
            for c in 0..8 {
                let [x, y, z] = corner(c);
                if grid.get(x, y, z).to_f64_lossless() < iso {
                    case |= 1 << c;
                }
            }
            if EDGE_TABLE[case] == 0 {
                continue;
            }
            let mut keys = [0u64; 12];
            for (e, &(a, b)) in EDGES.iter().enumerate() {
                if EDGE_TABLE[case] & (1 << e) != 0 {
                    keys[e] = edge_key(grid, corner(a), corner(b), iso);
                }
            }
            for tri in TRI_TABLE[case].chunks(3).take_while(|t| t[0] >= 0) {
                // with this corner order the table winding faces the below-iso side
                out.push([keys[tri[0] as usize], keys[tri[1] as usize], keys[tri[2] as usize]]);
            }
        }
    }
    out
}

/// Marching cubes on the lattice `grid`. Triangles face the side with
/// values below `iso`. Vertices on shared edges are welded by lattice key,
/// so the mesh is closed wherever the level set does not leave the grid.
/// Vertex order is the order of first use in an x-fastest cell sweep.
pub fn marching_cubes<T: Real>(grid: &VoxelGrid<T>, iso: f64) -> Result<TriangleMesh<f64>> {
    if grid.resolution.iter().any(|&r| r < 2) {
        return Err(Error::invalid("marching cubes needs at least 2 samples per axis"));
    }
    if !iso.is_finite() {
        return Err(Error::invalid("iso value must be finite"));
    }
    let slabs: Vec<Vec<[VertexKey; 3]>> = (0..grid.resolution[2] - 1)
        .into_par_iter()
        .map(|k| slab_triangles(grid, k, iso))
        .collect();
    let mut index: HashMap<VertexKey, u32> = HashMap::new();
    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut triangles = Vec::new();
    for tri in slabs.iter().flatten() {
        if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
            continue;
        }
        let pos = tri.map(|key| key_position(grid, key, iso));
        if 0.5 * (pos[1] - pos[0]).cross(pos[2] - pos[0]).norm() <= MIN_TRIANGLE_AREA {
            continue;
        }
        let ids = [0, 1, 2].map(|c| {
            *index.entry(tri[c]).or_insert_with(|| {
                vertices.push(pos[c]);
                (vertices.len() - 1) as u32
            })
        });
        triangles.push(ids);
    }
    TriangleMesh::new(vertices, triangles)
}

/// Sample, mesh and (optionally) map back to scene coordinates.
pub fn extract_mesh<T: Real>(
    field: &SirenField<T>,
    config: &ExtractionConfig,
    transform: Option<&NormalizationTransform>,
) -> Result<TriangleMesh<f64>> {
    let grid = sample_field_grid(field, config.resolution)?;
    let mesh = marching_cubes(&grid, config.iso)?;
    Ok(match transform {
        Some(t) => denormalize_mesh(&mesh, t),
        None => mesh,
    })
}

/// Map a mesh from normalized to scene coordinates.
pub fn denormalize_mesh<T: Real>(mesh: &TriangleMesh<T>, transform: &NormalizationTransform) -> TriangleMesh<T> {
    transform.invert_mesh(mesh)
}
