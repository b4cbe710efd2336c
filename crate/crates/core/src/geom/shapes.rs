//! Analytic meshes used as scan targets and ground truth. All have
//! outward-facing (counter-clockwise seen from outside) winding.

use std::collections::HashMap;

use crate::geom::{Point3, TriangleMesh, Vec3};
use crate::Real;

/// Geodesic sphere by repeated 4-way subdivision of an icosahedron.
///
/// `subdivisions = 6` gives 81,920 triangles.
pub fn icosphere<T: Real>(center: Point3<T>, radius: T, subdivisions: u32) -> TriangleMesh<T> {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let base = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let mut verts: Vec<Vec3<f64>> = base
        .iter()
        .map(|&v| Vec3::from_array(v).normalize())
        .collect();
    let mut tris: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next = Vec::with_capacity(tris.len() * 4);
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vec3<f64>>| -> u32 {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let m = (verts[a as usize] + verts[b as usize]).normalize();
                verts.push(m);
                (verts.len() - 1) as u32
            })
        };
        for t in &tris {
            let ab = midpoint(t[0], t[1], &mut verts);
            let bc = midpoint(t[1], t[2], &mut verts);
            let ca = midpoint(t[2], t[0], &mut verts);
            next.push([t[0], ab, ca]);
            next.push([t[1], bc, ab]);
            next.push([t[2], ca, bc]);
            next.push([ab, bc, ca]);
        }
        tris = next;
    }
    let c = center.cast::<f64>();
    let r = radius.to_f64_lossless();
    TriangleMesh {
        vertices: verts.iter().map(|&v| (c + v * r).cast()).collect(),
        triangles: tris,
        normals: None,
    }
}

/// Closed axis-aligned box.
pub fn cuboid<T: Real>(min: Point3<T>, max: Point3<T>) -> TriangleMesh<T> {
    let v = |x: bool, y: bool, z: bool| {
        Vec3::new(
            if x { max.x } else { min.x },
            if y { max.y } else { min.y },
            if z { max.z } else { min.z },
        )
    };
    let vertices = vec![
        v(false, false, false),
        v(true, false, false),
        v(true, true, false),
        v(false, true, false),
        v(false, false, true),
        v(true, false, true),
        v(true, true, true),
        v(false, true, true),
    ];
    let triangles = vec![
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [1, 2, 6],
        [1, 6, 5],
        [2, 3, 7],
        [2, 7, 6],
        [3, 0, 4],
        [3, 4, 7],
    ];
    TriangleMesh {
        vertices,
        triangles,
        normals: None,
    }
}

/// Planar quad `center ± half_u ± half_v`, facing `half_u × half_v`.
pub fn quad<T: Real>(center: Point3<T>, half_u: Vec3<T>, half_v: Vec3<T>) -> TriangleMesh<T> {
    let vertices = vec![
        center - half_u - half_v,
        center + half_u - half_v,
        center + half_u + half_v,
        center - half_u + half_v,
    ];
    TriangleMesh {
        vertices,
        triangles: vec![[0, 1, 2], [0, 2, 3]],
        normals: None,
    }
}
