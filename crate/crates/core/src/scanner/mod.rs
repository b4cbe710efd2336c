//! Virtual depth scanning of a mesh: camera placement, ray-cast depth maps,
//! and conversion of depth maps to oriented, sensor-tagged points.

mod bvh;
mod camera;

pub use bvh::{ray_triangle, Bvh, Hit};
pub use camera::{Camera, Intrinsics};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::geom::{Aabb, OrientedPointCloud, Point3, SensorSet, TriangleMesh, Vec3};
use crate::{Error, Real, Result};

/// Camera grid defaults for room-scale scenes.
pub const DEFAULT_SPACING: f64 = 1.5;
pub const DEFAULT_TILTS: [f64; 2] = [30.0, -30.0];
pub const DEFAULT_YAWS: [f64; 4] = [0.0, 90.0, 180.0, 270.0];
pub const DEFAULT_CAMERA_HEIGHT: f64 = 1.5;
pub const DEFAULT_POINTS: usize = 100_000;

/// Per-pixel depth along the camera `z` axis; `0` marks no hit.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap<T> {
    pub camera: Camera<T>,
    pub depth: Vec<T>,
}

impl<T: Real> DepthMap<T> {
    pub fn width(&self) -> usize {
        self.camera.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.camera.intrinsics.height
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize) -> T {
        self.depth[v * self.width() + u]
    }

    pub fn valid_count(&self) -> usize {
        self.depth.iter().filter(|d| **d > T::zero()).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridLayout {
    pub spacing: f64,
    /// Pitch angles in degrees added to each level camera.
    pub tilts: Vec<f64>,
    /// Headings in degrees about world `+z`.
    pub yaws: Vec<f64>,
    /// Camera height above the scene floor (`bounds.min.z`).
    pub height: f64,
    pub intrinsics: Intrinsics,
}

impl Default for GridLayout {
    fn default() -> Self {
        GridLayout {
            spacing: DEFAULT_SPACING,
            tilts: DEFAULT_TILTS.to_vec(),
            yaws: DEFAULT_YAWS.to_vec(),
            height: DEFAULT_CAMERA_HEIGHT,
            intrinsics: Intrinsics::default(),
        }
    }
}

fn grid_axis(min: f64, max: f64, spacing: f64) -> Vec<f64> {
    let extent = max - min;
    let n = (extent / spacing + 1e-9).floor() as usize + 1;
    let start = 0.5 * (min + max) - 0.5 * (n - 1) as f64 * spacing;
    (0..n).map(|i| start + i as f64 * spacing).collect()
}

/// Cameras on a horizontal grid inside `bounds`: per grid point one level
/// camera plus one per tilt, each at every yaw heading.
///
/// The grid is centered in the bounds; an axis shorter than `spacing` gets a
/// single position at its center.
pub fn sample_cameras<T: Real>(bounds: &Aabb<T>, layout: &GridLayout) -> Result<Vec<Camera<T>>> {
    if !(layout.spacing > 0.0) {
        return Err(Error::invalid("camera spacing must be positive"));
    }
    let b = Aabb::new(bounds.min.cast::<f64>(), bounds.max.cast::<f64>());
    if b.is_empty() || !b.min.is_finite() || !b.max.is_finite() {
        return Err(Error::EmptyScene);
    }
    let xs = grid_axis(b.min.x, b.max.x, layout.spacing);
    let ys = grid_axis(b.min.y, b.max.y, layout.spacing);
    let z = (b.min.z + layout.height).min(b.max.z);
    let mut pitches = vec![0.0];
    pitches.extend_from_slice(&layout.tilts);
    let mut cams = Vec::with_capacity(xs.len() * ys.len() * pitches.len() * layout.yaws.len());
    for &y in &ys {
        for &x in &xs {
            let pos = Vec3::new(x, y, z).cast::<T>();
            for &pitch in &pitches {
                for &yaw in &layout.yaws {
                    cams.push(Camera::from_yaw_pitch(pos, yaw, pitch, layout.intrinsics)?);
                }
            }
        }
    }
    Ok(cams)
}

/// Cameras spread evenly (Fibonacci lattice) over the band of a sphere
/// around `center` between two elevations, all looking at `center`.
pub fn orbit_cameras<T: Real>(
    center: Point3<T>,
    distance: f64,
    count: usize,
    elevation_deg: (f64, f64),
    intrinsics: Intrinsics,
) -> Result<Vec<Camera<T>>> {
    if count == 0 || !(distance > 0.0) {
        return Err(Error::invalid("orbit needs count >= 1 and positive distance"));
    }
    let (lo, hi) = (elevation_deg.0.to_radians().sin(), elevation_deg.1.to_radians().sin());
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let c = center.cast::<f64>();
    (0..count)
        .map(|i| {
            let z = lo + (hi - lo) * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let a = golden * i as f64;
            let dir = Vec3::new(r * a.cos(), r * a.sin(), z);
            let pos = c + dir * distance;
            Camera::looking(pos.cast(), (-dir).cast(), Vec3::axis(2), intrinsics)
        })
        .collect()
}

/// Nearest-hit depth for every pixel. Rows are rendered in parallel; the
/// result does not depend on the thread count.
pub fn render_depth<T: Real>(bvh: &Bvh<'_, T>, camera: &Camera<T>) -> DepthMap<T> {
    let w = camera.intrinsics.width;
    let h = camera.intrinsics.height;
    let mut depth = vec![T::zero(); w * h];
    depth.par_chunks_mut(w).enumerate().for_each(|(v, row)| {
        for (u, d) in row.iter_mut().enumerate() {
            let ray_cam = camera.pixel_ray(u as f64, v as f64);
            let dir = camera.rotation.mul_vec(ray_cam);
            if let Some(hit) = bvh.intersect(camera.position, dir, T::zero(), T::infinity()) {
                // unit z in camera frame: ray parameter is depth
                *d = hit.t;
            }
        }
    });
    DepthMap {
        camera: *camera,
        depth,
    }
}

/// Convenience wrapper building a BVH for a single render.
pub fn render_mesh_depth<T: Real>(mesh: &TriangleMesh<T>, camera: &Camera<T>) -> Result<DepthMap<T>> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    Ok(render_depth(&Bvh::build(mesh), camera))
}

/// Back-project valid pixels and estimate normals from the depth grid.
///
/// The normal at `(u, v)` is the normalized cross product of the central
/// differences of neighboring camera-space positions, signed to point away
/// from the sensor (inward), then rotated to world space. Pixels on the
/// image border or with an invalid 4-neighbor are dropped.
pub fn depth_to_oriented_points<T: Real>(depth: &DepthMap<T>, sensor_id: u32) -> OrientedPointCloud<T> {
    let w = depth.width();
    let h = depth.height();
    let cam = &depth.camera;
    let p = |u: usize, v: usize| cam.back_project(u as f64, v as f64, depth.at(u, v));
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for v in 1..h.saturating_sub(1) {
        for u in 1..w.saturating_sub(1) {
            let d = depth.at(u, v);
            if d <= T::zero()
                || depth.at(u + 1, v) <= T::zero()
                || depth.at(u - 1, v) <= T::zero()
                || depth.at(u, v + 1) <= T::zero()
                || depth.at(u, v - 1) <= T::zero()
            {
                continue;
            }
            let pc = p(u, v);
            let du = p(u + 1, v) - p(u - 1, v);
            let dv = p(u, v + 1) - p(u, v - 1);
            let Some(mut n) = du.cross(dv).try_normalize() else {
                continue;
            };
            // pc is the sensor-to-point vector in camera space
            if n.dot(pc) < T::zero() {
                n = -n;
            }
            let nw = cam.rotation.mul_vec(n).try_normalize().unwrap_or(n);
            points.push(cam.to_world(pc));
            normals.push(nw);
        }
    }
    let ids = vec![sensor_id; points.len()];
    OrientedPointCloud::new(points, normals, ids).expect("depth points are finite with unit normals")
}

/// Uniform random subset of `n` points without replacement, kept in input
/// order. Identity when the cloud has at most `n` points.
pub fn subsample<T: Real>(cloud: &OrientedPointCloud<T>, n: usize, seed: u64) -> Result<OrientedPointCloud<T>> {
    if n == 0 {
        return Err(Error::invalid("subsample size must be >= 1"));
    }
    if cloud.len() <= n {
        return Ok(cloud.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, cloud.len(), n).into_vec();
    idx.sort_unstable();
    Ok(cloud.select(&idx))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanOptions {
    /// Target point count after subsampling.
    pub points: usize,
    pub seed: u64,
    /// Standard deviation of additive Gaussian depth noise (meters).
    pub depth_noise: Option<f64>,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            points: DEFAULT_POINTS,
            seed: 0,
            depth_noise: None,
        }
    }
}

/// Render every camera, convert to oriented points tagged with the camera
/// index, concatenate in camera order and subsample.
pub fn scan<T: Real>(
    mesh: &TriangleMesh<T>,
    cameras: &[Camera<T>],
    opts: &ScanOptions,
) -> Result<(OrientedPointCloud<T>, SensorSet<T>)> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    if cameras.is_empty() {
        return Err(Error::EmptyInput("cameras"));
    }
    let bvh = Bvh::build(mesh);
    let parts: Vec<OrientedPointCloud<T>> = cameras
        .par_iter()
        .enumerate()
        .map(|(i, cam)| {
            let mut dm = render_depth(&bvh, cam);
            if let Some(sigma) = opts.depth_noise {
                add_depth_noise(&mut dm, sigma, opts.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            }
            depth_to_oriented_points(&dm, i as u32)
        })
        .collect();
    let cloud = OrientedPointCloud::concat(&parts)?;
    let cloud = subsample(&cloud, opts.points, opts.seed)?;
    let sensors = SensorSet {
        positions: cameras.iter().map(|c| c.position).collect(),
        orientations: Some(cameras.iter().map(|c| c.quaternion()).collect()),
    };
    Ok((cloud, sensors))
}

fn add_depth_noise<T: Real>(dm: &mut DepthMap<T>, sigma: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    for d in dm.depth.iter_mut().filter(|d| **d > T::zero()) {
        let nd = d.to_f64_lossless() + normal.sample(&mut rng);
        *d = T::of(nd.max(1e-6));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::shapes;

    fn odd_intrinsics() -> Intrinsics {
        Intrinsics::from_vertical_fov(41, 31, 60.0)
    }

    #[test]
    fn room_grid_counts() {
        let b = Aabb::new(Vec3::new(0.0f64, 0.0, 0.0), Vec3::new(3.0, 3.0, 2.5));
        let cams = sample_cameras(&b, &GridLayout::default()).unwrap();
        assert_eq!(cams.len(), 9 * 3 * 4);
        let level = GridLayout {
            tilts: vec![],
            ..GridLayout::default()
        };
        assert_eq!(sample_cameras(&b, &level).unwrap().len(), 9 * 4);
    }

    #[test]
    fn small_bounds_give_centroid_camera() {
        let b = Aabb::new(Vec3::new(0.0f64, 0.0, 0.0), Vec3::new(1.0, 0.5, 3.0));
        let cams = sample_cameras(&b, &GridLayout::default()).unwrap();
        assert_eq!(cams.len(), 12);
        assert_eq!(cams[0].position.x, 0.5);
        assert_eq!(cams[0].position.y, 0.25);
    }

    #[test]
    fn degenerate_bounds_are_an_error() {
        let b = Aabb::<f64>::empty();
        assert!(matches!(sample_cameras(&b, &GridLayout::default()), Err(Error::EmptyScene)));
    }

    #[test]
    fn fronto_parallel_quad_depth_and_normals() {
        let d = 2.0;
        let quad = shapes::quad(Vec3::new(d, 0.0f64, 0.0), Vec3::new(0.0, 5.0, 0.0), Vec3::new(0.0, 0.0, 5.0));
        let cam = Camera::from_yaw_pitch(Vec3::zero(), 0.0, 0.0, odd_intrinsics()).unwrap();
        let dm = render_mesh_depth(&quad, &cam).unwrap();
        assert!((dm.at(20, 15) - d).abs() < 1e-12);
        let cloud = depth_to_oriented_points(&dm, 3);
        assert_eq!(cloud.len(), 39 * 29);
        for n in cloud.normals() {
            assert!((*n - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-9);
        }
        assert!(cloud.sensor_ids().iter().all(|&s| s == 3));
    }

    #[test]
    fn facing_away_renders_nothing() {
        let quad = shapes::quad(Vec3::new(2.0f64, 0.0, 0.0), Vec3::new(0.0, 5.0, 0.0), Vec3::new(0.0, 0.0, 5.0));
        let cam = Camera::from_yaw_pitch(Vec3::zero(), 180.0, 0.0, odd_intrinsics()).unwrap();
        let dm = render_mesh_depth(&quad, &cam).unwrap();
        assert_eq!(dm.valid_count(), 0);
        assert!(depth_to_oriented_points(&dm, 0).is_empty());
    }

    #[test]
    fn sphere_center_pixel_depth() {
        let (r, dist) = (0.5f64, 3.0);
        let sphere = shapes::icosphere(Vec3::zero(), r, 4);
        // aim through an icosahedron vertex so the central ray meets the exact sphere
        let dir = sphere.vertices[0].normalize();
        let cam = Camera::looking(dir * dist, -dir, Vec3::axis(2), odd_intrinsics()).unwrap();
        let dm = render_mesh_depth(&sphere, &cam).unwrap();
        assert!((dm.at(20, 15) - (dist - r)).abs() < 1e-12);
    }

    #[test]
    fn convex_box_matches_closed_form() {
        let bmin = Vec3::new(-0.4f64, -0.3, -0.2);
        let bmax = Vec3::new(0.5, 0.35, 0.6);
        let cube = shapes::cuboid(bmin, bmax);
        let cam = Camera::look_at(Vec3::new(2.0, 1.3, 0.9), Vec3::new(0.0, 0.0, 0.1), Intrinsics::from_vertical_fov(80, 60, 50.0)).unwrap();
        let dm = render_mesh_depth(&cube, &cam).unwrap();
        let aabb = Aabb::new(bmin, bmax);
        let mut hits = 0;
        for v in 0..60 {
            for u in 0..80 {
                let dir = cam.rotation.mul_vec(cam.pixel_ray(u as f64, v as f64));
                let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
                let analytic = aabb.ray_entry(cam.position, inv, f64::INFINITY);
                let got = dm.at(u, v);
                if got > 0.0 {
                    hits += 1;
                    let a = analytic.expect("rendered hit outside analytic box");
                    assert!((got - a).abs() < 1e-5, "pixel ({u},{v}): {got} vs {a}");
                }
            }
        }
        assert!(hits > 500);
    }

    #[test]
    fn slanted_plane_normals() {
        // plane through (2,0,0) with normal (1,0,1)/√2 facing the camera at the origin
        let n = Vec3::new(1.0f64, 0.0, 1.0).normalize();
        let u = Vec3::new(0.0, 4.0, 0.0);
        let v = Vec3::new(-1.0, 0.0, 1.0).normalize() * 4.0;
        let quad = shapes::quad(Vec3::new(2.0, 0.0, 0.0), u, v);
        let cam = Camera::from_yaw_pitch(Vec3::zero(), 0.0, 0.0, odd_intrinsics()).unwrap();
        let cloud = depth_to_oriented_points(&render_mesh_depth(&quad, &cam).unwrap(), 0);
        assert!(!cloud.is_empty());
        for (p, nn) in cloud.points().iter().zip(cloud.normals()) {
            let angle = nn.dot(n).clamp(-1.0, 1.0).acos();
            assert!(angle < 1e-3, "angle {angle}");
            assert!(nn.dot(*p - cam.position) > 0.0);
        }
    }

    #[test]
    fn single_valid_pixel_yields_nothing() {
        let cam = Camera::<f64>::from_yaw_pitch(Vec3::zero(), 0.0, 0.0, odd_intrinsics()).unwrap();
        let mut depth = vec![0.0; 41 * 31];
        depth[15 * 41 + 20] = 1.0;
        let dm = DepthMap { camera: cam, depth };
        assert!(depth_to_oriented_points(&dm, 0).is_empty());
    }

    #[test]
    fn subsample_contract() {
        let pts: Vec<_> = (0..1000).map(|i| Vec3::new(i as f32, 0.0, 0.0)).collect();
        let c = OrientedPointCloud::new(pts, vec![], vec![]).unwrap();
        assert_eq!(subsample(&c, 1000, 1).unwrap(), c);
        let a = subsample(&c, 100, 9).unwrap();
        assert_eq!(a.len(), 100);
        assert_eq!(a, subsample(&c, 100, 9).unwrap());
        assert_ne!(a, subsample(&c, 100, 10).unwrap());
        assert!(subsample(&c, 0, 1).is_err());
    }

    #[test]
    fn scan_sphere_normals_point_inward_and_away_from_sensor() {
        let sphere = shapes::icosphere(Vec3::zero(), 0.5f64, 4);
        let cams = orbit_cameras(Vec3::zero(), 2.0, 6, (-60.0, 60.0), Intrinsics::from_vertical_fov(64, 48, 60.0)).unwrap();
        let (cloud, sensors) = scan(&sphere, &cams, &ScanOptions { points: 1000, seed: 1, depth_noise: None }).unwrap();
        assert_eq!(cloud.len(), 1000);
        for i in 0..cloud.len() {
            let p = cloud.points()[i];
            let n = cloud.normals()[i];
            let s = sensors.position(cloud.sensor_ids()[i]).unwrap();
            assert!((n.norm() - 1.0).abs() < 1e-9);
            assert!(n.dot(p - s) > 0.0);
        }
    }

    #[test]
    fn rendering_is_thread_count_independent() {
        let sphere = shapes::icosphere(Vec3::zero(), 0.5f32, 3);
        let cam = Camera::look_at(Vec3::new(1.5f32, 0.3, 0.2), Vec3::zero(), Intrinsics::from_vertical_fov(64, 48, 60.0)).unwrap();
        let bvh = Bvh::build(&sphere);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| render_depth(&bvh, &cam));
        let b = four.install(|| render_depth(&bvh, &cam));
        assert!(a.depth.iter().zip(&b.depth).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
