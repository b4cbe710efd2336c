//! Built-in analytic scenes.

use clap::ValueEnum;
use ifield::geom::shapes::{cuboid, icosphere};
use ifield::geom::{TriangleMesh, Vec3};
use serde::{Deserialize, Serialize};

pub const SPHERE_RADIUS: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scene {
    /// Sphere of radius 0.5 at the origin.
    Sphere,
    /// Axis-aligned cube of side 0.8 at the origin.
    Cube,
}

impl Scene {
    pub fn mesh(self) -> TriangleMesh<f64> {
        match self {
            Scene::Sphere => icosphere(Vec3::zero(), SPHERE_RADIUS, 6),
            Scene::Cube => cuboid(Vec3::splat(-0.4), Vec3::splat(0.4)),
        }
    }
}
