//! Wavefront OBJ: `v` and `f` records only.

use std::fmt::Write as _;

use crate::geom::{TriangleMesh, Vec3};
use crate::{Error, Real, Result};

pub fn encode_obj<T: Real>(mesh: &TriangleMesh<T>) -> String {
    let mut s = String::with_capacity(mesh.vertices.len() * 32 + mesh.triangles.len() * 24);
    for v in &mesh.vertices {
        let f = v.to_array().map(|c| c.to_f32().unwrap_or(f32::NAN));
        let _ = writeln!(s, "v {} {} {}", f[0], f[1], f[2]);
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    s
}

/// Parse `v` and `f` lines; polygons are fan-triangulated, `v/vt/vn`
/// references and negative (relative) indices are accepted.
pub fn parse_obj<T: Real>(text: &str) -> Result<TriangleMesh<T>> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let here = offset;
        offset += line.len() as u64;
        let line = line.trim();
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let mut c = [0.0f64; 3];
                for slot in &mut c {
                    *slot = tok
                        .next()
                        .and_then(|t| t.parse::<f64>().ok())
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::parse(here, format!("bad vertex record '{line}'")))?;
                }
                vertices.push(Vec3::from_array(c).cast::<T>());
            }
            Some("f") => {
                let mut poly = Vec::new();
                for t in tok {
                    let idx_str = t.split('/').next().unwrap_or("");
                    let i: i64 = idx_str
                        .parse()
                        .map_err(|_| Error::parse(here, format!("bad face index '{t}'")))?;
                    let n = vertices.len() as i64;
                    let resolved = if i > 0 { i - 1 } else { n + i };
                    if i == 0 || resolved < 0 {
                        return Err(Error::parse(here, format!("face index {i} out of range")));
                    }
                    poly.push(resolved as u32);
                }
                if poly.len() < 3 {
                    return Err(Error::parse(here, "face with fewer than 3 vertices"));
                }
                for k in 1..poly.len() - 1 {
                    let t = [poly[0], poly[k], poly[k + 1]];
                    if t[0] != t[1] && t[1] != t[2] && t[0] != t[2] {
                        triangles.push(t);
                    }
                }
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, triangles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::shapes;

    #[test]
    fn single_triangle_layout() {
        let m = TriangleMesh::new(
            vec![Vec3::new(0.0f32, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let s = encode_obj(&m);
        assert_eq!(s.lines().filter(|l| l.starts_with("v ")).count(), 3);
        assert_eq!(s.lines().filter(|l| l.starts_with("f ")).collect::<Vec<_>>(), vec!["f 1 2 3"]);
    }

    #[test]
    fn empty_mesh_is_valid() {
        let m = TriangleMesh::<f64>::default();
        let back: TriangleMesh<f64> = parse_obj(&encode_obj(&m)).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn cube_round_trips_connectivity() {
        let m = shapes::cuboid(Vec3::splat(0.0f32), Vec3::splat(1.0));
        let back: TriangleMesh<f32> = parse_obj(&encode_obj(&m)).unwrap();
        assert_eq!(back.triangles, m.triangles);
        assert_eq!(back.vertices, m.vertices);
    }

    #[test]
    fn quads_slashes_and_negative_indices() {
        let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1/1 2/2/2 3/3/3 4/4/4\nf -4 -3 -2\n";
        let m: TriangleMesh<f64> = parse_obj(text).unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 3], [0, 1, 2]]);
    }

    #[test]
    fn bad_index_reports_offset() {
        let err = parse_obj::<f32>("v 0 0 0\nf 1 2 3\n").unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)) || matches!(err, Error::Parse { .. }));
        let err = parse_obj::<f32>("v 0 0 0\nv 1 x 0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 8, .. }), "{err}");
    }
}
