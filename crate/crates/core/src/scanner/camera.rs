use serde::{Deserialize, Serialize};

use crate::geom::{Mat3, Point3, Vec3};
use crate::{Error, Real, Result};

/// Pinhole intrinsics in pixels. Pixel `(u, v)` samples the image plane at
/// integer coordinates; `+u` is right and `+v` is down.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// Square pixels, principal point at `(W/2, H/2)`.
    pub fn from_vertical_fov(width: usize, height: usize, fov_deg: f64) -> Self {
        let fy = 0.5 * height as f64 / (0.5 * fov_deg.to_radians()).tan();
        Intrinsics {
            fx: fy,
            fy,
            cx: (width / 2) as f64,
            cy: (height / 2) as f64,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if self.width < 2 || self.height < 2 {
            return Err(Error::invalid("image must be at least 2x2"));
        }
        Ok(())
    }
}

impl Default for Intrinsics {
    fn default() -> Self {
        Intrinsics::from_vertical_fov(320, 240, 60.0)
    }
}

/// A posed pinhole camera. Camera frame: `x` right, `y` down, `z` forward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera<T> {
    pub position: Point3<T>,
    /// Camera-to-world rotation; columns are the camera axes in world space.
    pub rotation: Mat3<T>,
    pub intrinsics: Intrinsics,
}

impl<T: Real> Camera<T> {
    pub fn new(position: Point3<T>, rotation: Mat3<T>, intrinsics: Intrinsics) -> Result<Self> {
        intrinsics.validate()?;
        Ok(Camera {
            position,
            rotation,
            intrinsics,
        })
    }

    /// Look along `forward` with world `up` as the reference for image-up.
    pub fn looking(position: Point3<T>, forward: Vec3<T>, up: Vec3<T>, intrinsics: Intrinsics) -> Result<Self> {
        let f = forward
            .try_normalize()
            .ok_or_else(|| Error::invalid("zero view direction"))?;
        let right = f
            .cross(up)
            .try_normalize()
            .or_else(|| f.cross(Vec3::axis(1)).try_normalize())
            .ok_or_else(|| Error::invalid("view direction parallel to up"))?;
        let down = f.cross(right);
        Camera::new(position, Mat3::from_cols(right, down, f), intrinsics)
    }

    pub fn look_at(position: Point3<T>, target: Point3<T>, intrinsics: Intrinsics) -> Result<Self> {
        Self::looking(position, target - position, Vec3::axis(2), intrinsics)
    }

    /// Heading `yaw` about world `+z` (0 = `+x`), `pitch` up from horizontal.
    pub fn from_yaw_pitch(position: Point3<T>, yaw_deg: f64, pitch_deg: f64, intrinsics: Intrinsics) -> Result<Self> {
        let (y, p) = (yaw_deg.to_radians(), pitch_deg.to_radians());
        let f = Vec3::new(p.cos() * y.cos(), p.cos() * y.sin(), p.sin()).cast::<T>();
        Self::looking(position, f, Vec3::axis(2), intrinsics)
    }

    pub fn forward(&self) -> Vec3<T> {
        self.rotation.col(2)
    }

    /// Unnormalized camera-frame ray through pixel `(u, v)` with unit `z`,
    /// so the ray parameter equals depth.
    #[inline]
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vec3<T> {
        let k = &self.intrinsics;
        Vec3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0).cast()
    }

    #[inline]
    pub fn back_project(&self, u: f64, v: f64, depth: T) -> Point3<T> {
        self.pixel_ray(u, v) * depth
    }

    /// Camera-frame point to `(u, v, depth)`.
    #[inline]
    pub fn project(&self, p: Point3<T>) -> (f64, f64, T) {
        let k = &self.intrinsics;
        let x = (p.x / p.z).to_f64_lossless();
        let y = (p.y / p.z).to_f64_lossless();
        (k.fx * x + k.cx, k.fy * y + k.cy, p.z)
    }

    #[inline]
    pub fn to_world(&self, p_cam: Point3<T>) -> Point3<T> {
        self.rotation.mul_vec(p_cam) + self.position
    }

    #[inline]
    pub fn to_camera(&self, p_world: Point3<T>) -> Point3<T> {
        self.rotation.transpose().mul_vec(p_world - self.position)
    }

    /// Camera-to-world rotation as a unit quaternion `[w, x, y, z]`.
    pub fn quaternion(&self) -> [T; 4] {
        let r = |i: usize, j: usize| self.rotation.rows[i][j].to_f64_lossless();
        let trace = r(0, 0) + r(1, 1) + r(2, 2);
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            [0.25 * s, (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s, (r(1, 0) - r(0, 1)) / s]
        } else if r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2) {
            let s = (1.0 + r(0, 0) - r(1, 1) - r(2, 2)).sqrt() * 2.0;
            [(r(2, 1) - r(1, 2)) / s, 0.25 * s, (r(0, 1) + r(1, 0)) / s, (r(0, 2) + r(2, 0)) / s]
        } else if r(1, 1) > r(2, 2) {
            let s = (1.0 + r(1, 1) - r(0, 0) - r(2, 2)).sqrt() * 2.0;
            [(r(0, 2) - r(2, 0)) / s, (r(0, 1) + r(1, 0)) / s, 0.25 * s, (r(1, 2) + r(2, 1)) / s]
        } else {
            let s = (1.0 + r(2, 2) - r(0, 0) - r(1, 1)).sqrt() * 2.0;
            [(r(1, 0) - r(0, 1)) / s, (r(0, 2) + r(2, 0)) / s, (r(1, 2) + r(2, 1)) / s, 0.25 * s]
        };
        q.map(T::of)
    }
}
