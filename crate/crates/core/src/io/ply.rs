//! PLY reader/writer (ASCII and binary little-endian).
//!
//! Point clouds use a `vertex` element with `x y z`, optional `nx ny nz`
//! and an optional integer `sensor_id`. Meshes add a `face` element with a
//! `vertex_indices` (or `vertex_index`) list.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::geom::{OrientedPointCloud, TriangleMesh, Vec3, UNIT_NORMAL_TOLERANCE};
use crate::{Error, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn decode_le(self, b: &[u8]) -> f64 {
        match self {
            ScalarType::I8 => b[0] as i8 as f64,
            ScalarType::U8 => b[0] as f64,
            ScalarType::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Clone, Debug)]
enum Property {
    Scalar(String, ScalarType),
    List(String, ScalarType, ScalarType),
}

#[derive(Clone, Debug)]
struct ElementDef {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Decoded element: scalar columns by property, and list columns.
#[derive(Clone, Debug, Default)]
struct ElementData {
    scalars: Vec<(String, Vec<f64>)>,
    lists: Vec<(String, Vec<Vec<u32>>)>,
}

impl ElementData {
    fn column(&self, name: &str) -> Option<&[f64]> {
        self.scalars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    fn list(&self, names: &[&str]) -> Option<&[Vec<u32>]> {
        self.lists
            .iter()
            .find(|(n, _)| names.contains(&n.as_str()))
            .map(|(_, v)| v.as_slice())
    }
}

struct Ply {
    elements: Vec<(ElementDef, ElementData)>,
}

impl Ply {
    fn element(&self, name: &str) -> Option<&ElementData> {
        self.elements
            .iter()
            .find(|(d, _)| d.name == name)
            .map(|(_, e)| e)
    }
}

fn parse_header(bytes: &[u8]) -> Result<(PlyFormat, Vec<ElementDef>, usize)> {
    let mut pos = 0usize;
    let mut format = None;
    let mut elements: Vec<ElementDef> = Vec::new();
    let mut first = true;
    loop {
        let line_start = pos;
        let Some(nl) = bytes[pos..].iter().position(|&b| b == b'\n') else {
            return Err(Error::parse(pos as u64, "header not terminated by end_header"));
        };
        let line = std::str::from_utf8(&bytes[pos..pos + nl])
            .map_err(|_| Error::parse(pos as u64, "header is not valid UTF-8"))?
            .trim_end_matches('\r')
            .trim();
        pos += nl + 1;
        let off = line_start as u64;
        if first {
            if line != "ply" {
                return Err(Error::parse(0, "missing 'ply' magic"));
            }
            first = false;
            continue;
        }
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                format = Some(match tok.next() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    other => {
                        return Err(Error::parse(off, format!("unsupported format {other:?}")));
                    }
                });
            }
            Some("element") => {
                let name = tok
                    .next()
                    .ok_or_else(|| Error::parse(off, "element without name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| Error::parse(off, format!("element '{name}' has a bad count")))?;
                elements.push(ElementDef {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(off, "property before any element"))?;
                let t = tok.next().ok_or_else(|| Error::parse(off, "property without type"))?;
                let prop = if t == "list" {
                    let ct = tok.next().and_then(ScalarType::parse);
                    let it = tok.next().and_then(ScalarType::parse);
                    let name = tok.next();
                    match (ct, it, name) {
                        (Some(ct), Some(it), Some(n)) => Property::List(n.to_string(), ct, it),
                        _ => return Err(Error::parse(off, "malformed list property")),
                    }
                } else {
                    let st = ScalarType::parse(t)
                        .ok_or_else(|| Error::parse(off, format!("unknown property type '{t}'")))?;
                    let n = tok.next().ok_or_else(|| Error::parse(off, "property without name"))?;
                    Property::Scalar(n.to_string(), st)
                };
                el.props.push(prop);
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("end_header") => break,
            Some(other) => return Err(Error::parse(off, format!("unexpected header keyword '{other}'"))),
        }
    }
    let format = format.ok_or_else(|| Error::parse(pos as u64, "header has no format line"))?;
    Ok((format, elements, pos))
}

fn truncated(offset: usize, el: &ElementDef, row: usize) -> Error {
    Error::parse(
        offset as u64,
        format!(
            "unexpected end of data in element '{}' (row {} of {})",
            el.name, row, el.count
        ),
    )
}

fn parse_ply(bytes: &[u8]) -> Result<Ply> {
    let (format, defs, mut pos) = parse_header(bytes)?;
    let mut elements = Vec::with_capacity(defs.len());
    // ASCII body is tokenized lazily with offsets
    let mut ascii = AsciiCursor { bytes, pos };
    for def in defs {
        let mut data = ElementData::default();
        for p in &def.props {
            match p {
                Property::Scalar(n, _) => data.scalars.push((n.clone(), Vec::with_capacity(def.count))),
                Property::List(n, _, _) => data.lists.push((n.clone(), Vec::with_capacity(def.count))),
            }
        }
        for row in 0..def.count {
            let (mut si, mut li) = (0, 0);
            for p in &def.props {
                match (format, p) {
                    (PlyFormat::BinaryLittleEndian, Property::Scalar(name, t)) => {
                        let sz = t.size();
                        if pos + sz > bytes.len() {
                            return Err(truncated(pos, &def, row));
                        }
                        let v = t.decode_le(&bytes[pos..pos + sz]);
                        if !v.is_finite() {
                            return Err(Error::parse(pos as u64, format!("non-finite value for '{name}'")));
                        }
                        pos += sz;
                        data.scalars[si].1.push(v);
                        si += 1;
                    }
                    (PlyFormat::BinaryLittleEndian, Property::List(_, ct, it)) => {
                        if pos + ct.size() > bytes.len() {
                            return Err(truncated(pos, &def, row));
                        }
                        let n = ct.decode_le(&bytes[pos..]) as usize;
                        pos += ct.size();
                        if pos + n * it.size() > bytes.len() {
                            return Err(truncated(pos, &def, row));
                        }
                        let mut items = Vec::with_capacity(n);
                        for _ in 0..n {
                            items.push(it.decode_le(&bytes[pos..]) as u32);
                            pos += it.size();
                        }
                        data.lists[li].1.push(items);
                        li += 1;
                    }
                    (PlyFormat::Ascii, Property::Scalar(name, _)) => {
                        let (v, at) = ascii.next_number().ok_or_else(|| truncated(ascii.pos, &def, row))??;
                        if !v.is_finite() {
                            return Err(Error::parse(at as u64, format!("non-finite value for '{name}'")));
                        }
                        data.scalars[si].1.push(v);
                        si += 1;
                    }
                    (PlyFormat::Ascii, Property::List(..)) => {
                        let (n, _) = ascii.next_number().ok_or_else(|| truncated(ascii.pos, &def, row))??;
                        let mut items = Vec::with_capacity(n as usize);
                        for _ in 0..n as usize {
                            let (v, _) = ascii.next_number().ok_or_else(|| truncated(ascii.pos, &def, row))??;
                            items.push(v as u32);
                        }
                        data.lists[li].1.push(items);
                        li += 1;
                    }
                }
            }
        }
        elements.push((def, data));
    }
    Ok(Ply { elements })
}

struct AsciiCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl AsciiCursor<'_> {
    /// Next whitespace-separated number, with the byte offset where it starts.
    fn next_number(&mut self) -> Option<Result<(f64, usize)>> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if self.pos >= self.bytes.len() {
            return None;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let tok = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap_or("");
        Some(
            tok.parse::<f64>()
                .map(|v| (v, start))
                .map_err(|_| Error::parse(start as u64, format!("bad number '{tok}'"))),
        )
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Parse a point cloud from PLY bytes.
pub fn parse_point_cloud<T: Real>(bytes: &[u8]) -> Result<OrientedPointCloud<T>> {
    let ply = parse_ply(bytes)?;
    let v = ply
        .element("vertex")
        .ok_or_else(|| Error::parse(0, "no 'vertex' element"))?;
    let (x, y, z) = match (v.column("x"), v.column("y"), v.column("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(Error::parse(0, "vertex element lacks x/y/z")),
    };
    let points = (0..x.len()).map(|i| Vec3::new(x[i], y[i], z[i]).cast::<T>()).collect();
    let normals = match (v.column("nx"), v.column("ny"), v.column("nz")) {
        (Some(nx), Some(ny), Some(nz)) => {
            let mut out = Vec::with_capacity(nx.len());
            for i in 0..nx.len() {
                let n = Vec3::new(nx[i], ny[i], nz[i]).cast::<T>();
                let len = n.norm().to_f64_lossless();
                if (len - 1.0).abs() <= UNIT_NORMAL_TOLERANCE {
                    out.push(n);
                } else {
                    out.push(n.try_normalize().ok_or_else(|| {
                        Error::parse(0, format!("vertex {i} has a zero-length normal"))
                    })?);
                }
            }
            out
        }
        _ => Vec::new(),
    };
    let sensor_ids = v
        .column("sensor_id")
        .map(|c| c.iter().map(|&s| s as u32).collect())
        .unwrap_or_default();
    OrientedPointCloud::new(points, normals, sensor_ids)
}

pub fn read_point_cloud<T: Real>(path: impl AsRef<Path>) -> Result<OrientedPointCloud<T>> {
    parse_point_cloud(&read_bytes(path.as_ref())?)
}

/// Encode a point cloud. Positions and normals are stored as `float`.
pub fn encode_point_cloud<T: Real>(cloud: &OrientedPointCloud<T>, format: PlyFormat) -> Vec<u8> {
    let has_n = !cloud.normals().is_empty();
    let has_s = !cloud.sensor_ids().is_empty();
    let mut out = Vec::new();
    write_header_start(&mut out, format);
    let _ = writeln!(out, "element vertex {}", cloud.len());
    for p in ["x", "y", "z"] {
        let _ = writeln!(out, "property float {p}");
    }
    if has_n {
        for p in ["nx", "ny", "nz"] {
            let _ = writeln!(out, "property float {p}");
        }
    }
    if has_s {
        let _ = writeln!(out, "property int sensor_id");
    }
    let _ = writeln!(out, "end_header");
    for i in 0..cloud.len() {
        let mut floats: Vec<f32> = cloud.points()[i].to_array().iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect();
        if has_n {
            floats.extend(cloud.normals()[i].to_array().iter().map(|v| v.to_f32().unwrap_or(f32::NAN)));
        }
        match format {
            PlyFormat::Ascii => {
                let mut line = floats.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(" ");
                if has_s {
                    line.push(' ');
                    line.push_str(&cloud.sensor_ids()[i].to_string());
                }
                let _ = writeln!(out, "{line}");
            }
            PlyFormat::BinaryLittleEndian => {
                for f in floats {
                    out.extend_from_slice(&f.to_le_bytes());
                }
                if has_s {
                    out.extend_from_slice(&(cloud.sensor_ids()[i] as i32).to_le_bytes());
                }
            }
        }
    }
    out
}

pub fn write_point_cloud<T: Real>(
    cloud: &OrientedPointCloud<T>,
    path: impl AsRef<Path>,
    format: PlyFormat,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_point_cloud(cloud, format)).map_err(|e| Error::io(path, e))
}

fn write_header_start(out: &mut Vec<u8>, format: PlyFormat) {
    let f = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let _ = write!(out, "ply\nformat {f} 1.0\n");
}

pub fn parse_mesh<T: Real>(bytes: &[u8]) -> Result<TriangleMesh<T>> {
    let ply = parse_ply(bytes)?;
    let v = ply
        .element("vertex")
        .ok_or_else(|| Error::parse(0, "no 'vertex' element"))?;
    let (x, y, z) = match (v.column("x"), v.column("y"), v.column("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(Error::parse(0, "vertex element lacks x/y/z")),
    };
    let vertices: Vec<_> = (0..x.len()).map(|i| Vec3::new(x[i], y[i], z[i]).cast::<T>()).collect();
    let mut triangles = Vec::new();
    if let Some(f) = ply.element("face") {
        let lists = f
            .list(&["vertex_indices", "vertex_index"])
            .ok_or_else(|| Error::parse(0, "face element lacks vertex_indices"))?;
        for poly in lists {
            for k in 1..poly.len().saturating_sub(1) {
                let t = [poly[0], poly[k], poly[k + 1]];
                if t[0] != t[1] && t[1] != t[2] && t[0] != t[2] {
                    triangles.push(t);
                }
            }
        }
    }
    TriangleMesh::new(vertices, triangles)
}

pub fn encode_mesh<T: Real>(mesh: &TriangleMesh<T>, format: PlyFormat) -> Vec<u8> {
    let mut out = Vec::new();
    write_header_start(&mut out, format);
    let _ = writeln!(out, "element vertex {}", mesh.vertices.len());
    for p in ["x", "y", "z"] {
        let _ = writeln!(out, "property float {p}");
    }
    let _ = writeln!(out, "element face {}", mesh.triangles.len());
    let _ = writeln!(out, "property list uchar int vertex_indices");
    let _ = writeln!(out, "end_header");
    for v in &mesh.vertices {
        let f = v.to_array().map(|c| c.to_f32().unwrap_or(f32::NAN));
        match format {
            PlyFormat::Ascii => {
                let _ = writeln!(out, "{} {} {}", f[0], f[1], f[2]);
            }
            PlyFormat::BinaryLittleEndian => f.iter().for_each(|c| out.extend_from_slice(&c.to_le_bytes())),
        }
    }
    for t in &mesh.triangles {
        match format {
            PlyFormat::Ascii => {
                let _ = writeln!(out, "3 {} {} {}", t[0], t[1], t[2]);
            }
            PlyFormat::BinaryLittleEndian => {
                out.push(3);
                t.iter().for_each(|i| out.extend_from_slice(&(*i as i32).to_le_bytes()));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::shapes;
    use proptest::prelude::*;

    fn random_cloud(n: usize, seed: u64) -> OrientedPointCloud<f32> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        let mut nrm = Vec::new();
        let mut ids = Vec::new();
        for _ in 0..n {
            pts.push(Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)));
            let d: Vec3<f32> = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.1..1.0));
            nrm.push(d.normalize());
            ids.push(rng.random_range(0..40));
        }
        OrientedPointCloud::new(pts, nrm, ids).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise_for_both_formats() {
        let c = random_cloud(100, 3);
        for fmt in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
            let back: OrientedPointCloud<f32> = parse_point_cloud(&encode_point_cloud(&c, fmt)).unwrap();
            assert_eq!(back, c, "{fmt:?}");
        }
    }

    #[test]
    fn missing_normals_flag_estimation() {
        let bytes = b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 2 3\n";
        let c: OrientedPointCloud<f32> = parse_point_cloud(bytes).unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.needs_normals());
    }

    #[test]
    fn truncated_binary_names_element() {
        let c = random_cloud(10, 1);
        let bytes = encode_point_cloud(&c, PlyFormat::BinaryLittleEndian);
        let err = parse_point_cloud::<f32>(&bytes[..bytes.len() - 7]).unwrap_err();
        match err {
            Error::Parse { offset, message } => {
                assert!(message.contains("'vertex'"), "{message}");
                assert!(message.contains("row 9 of 10"), "{message}");
                assert!(offset > 0);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn truncated_ascii_names_element() {
        let bytes = b"ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 2 3\n";
        let err = parse_point_cloud::<f32>(bytes).unwrap_err();
        assert!(err.to_string().contains("'vertex' (row 2 of 3)"), "{err}");
    }

    #[test]
    fn malformed_header_and_values() {
        assert!(matches!(parse_point_cloud::<f32>(b"plx\n"), Err(Error::Parse { offset: 0, .. })));
        let bad_count = b"ply\nformat ascii 1.0\nelement vertex many\nend_header\n";
        assert!(parse_point_cloud::<f32>(bad_count).is_err());
        let nan = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 nan 0\n";
        let err = parse_point_cloud::<f32>(nan).unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 102, .. }), "{err}");
    }

    #[test]
    fn mesh_round_trip_preserves_connectivity() {
        let m = shapes::cuboid(Vec3::splat(-1.0f32), Vec3::splat(1.0));
        for fmt in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
            let back: TriangleMesh<f32> = parse_mesh(&encode_mesh(&m, fmt)).unwrap();
            assert_eq!(back.triangles, m.triangles);
            assert_eq!(back.vertices, m.vertices);
        }
    }

    proptest! {
        #[test]
        fn arbitrary_f32_positions_round_trip(xs in proptest::collection::vec((-1e6f32..1e6, -1e6f32..1e6, -1e6f32..1e6), 1..50)) {
            let pts: Vec<_> = xs.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect();
            let c = OrientedPointCloud::new(pts, vec![], vec![]).unwrap();
            for fmt in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
                let back: OrientedPointCloud<f32> = parse_point_cloud(&encode_point_cloud(&c, fmt)).unwrap();
                prop_assert_eq!(&back, &c);
            }
        }
    }
}
