//! Point cloud, mesh and sensor file formats.

pub mod obj;
pub mod ply;
pub mod sensors;

use std::path::Path;

use crate::geom::TriangleMesh;
use crate::{Error, Real, Result};

pub use ply::{read_point_cloud, write_point_cloud, PlyFormat};
pub use sensors::{read_sensors, write_sensors};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    /// Guess from a file extension (`.obj` or `.ply`).
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "obj" => Some(MeshFormat::Obj),
            "ply" => Some(MeshFormat::Ply),
            _ => None,
        }
    }
}

pub fn write_mesh<T: Real>(mesh: &TriangleMesh<T>, path: impl AsRef<Path>, format: MeshFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        MeshFormat::Obj => obj::encode_obj(mesh).into_bytes(),
        MeshFormat::Ply => ply::encode_mesh(mesh, PlyFormat::BinaryLittleEndian),
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_mesh<T: Real>(path: impl AsRef<Path>) -> Result<TriangleMesh<T>> {
    let path = path.as_ref();
    let format = MeshFormat::from_path(path)
        .ok_or_else(|| Error::invalid(format!("unknown mesh extension: {}", path.display())))?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        MeshFormat::Obj => {
            let text = String::from_utf8(bytes).map_err(|e| Error::parse(e.utf8_error().valid_up_to() as u64, "OBJ is not UTF-8"))?;
            obj::parse_obj(&text)
        }
        MeshFormat::Ply => ply::parse_mesh(&bytes),
    }
}
