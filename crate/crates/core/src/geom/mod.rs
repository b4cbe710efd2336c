//! Geometry primitives, spatial indexing and analytic test shapes.

mod aabb;
mod cloud;
pub mod kdtree;
mod mesh;
pub mod shapes;
mod vec3;
mod voxel;

pub use aabb::Aabb;
pub use cloud::{OrientedPointCloud, SensorSet, UNIT_NORMAL_TOLERANCE};
pub use kdtree::KdTree;
pub use mesh::{point_triangle_distance_squared, TriangleMesh};
pub use vec3::{Mat3, Point3, Vec3};
pub use voxel::VoxelGrid;
