//! Coordinate frames, pinhole projection and ray casting.
//!
//! Conventions used across the crate:
//!
//! - The camera frame is the world frame. `+z` points from the camera into the
//!   scene, `+x` to the right of the image and `+y` down the image.
//! - Pixel coordinates put the center of pixel `(col, row)` at `(col, row)`.
//! - A [`RigidTransform`] maps points from a source frame into a target frame:
//!   `p_target = R * p_source + t`. The camera-projector extrinsics map camera
//!   points into the projector frame.
//!
//! A projector is modelled as a pinhole camera that emits light, so the same
//! [`project_point`] and [`unproject_pixel`] serve both devices.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

/// Depth at or below which a point counts as behind the optical center.
pub const MIN_DEPTH: f64 = 1e-9;
/// Rays with `|direction · normal|` below this are treated as parallel.
pub const PARALLEL_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point lies behind the device (depth {depth:e})")]
    BehindDevice { depth: f64 },
    #[error("ray is parallel to the plane")]
    Parallel,
    #[error("plane intersection lies behind the ray origin (s = {s:e})")]
    BehindOrigin { s: f64 },
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },
}

fn invalid(what: &'static str, reason: impl Into<String>) -> GeometryError {
    GeometryError::Invalid {
        what,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Real> Vec2<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    /// z-component of the 3D cross product.
    pub fn perp_dot(self, other: Self) -> T {
        self.x * other.y - self.y * other.x
    }
}

impl<T: Real> Add for Vec2<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl<T: Real> Sub for Vec2<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

impl<T: Real> Mul<T> for Vec2<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T> From<[T; 3]> for Vec3<T> {
    fn from([x, y, z]: [T; 3]) -> Self {
        Self { x, y, z }
    }
}

impl<T> From<Vec3<T>> for [T; 3] {
    fn from(v: Vec3<T>) -> Self {
        [v.x, v.y, v.z]
    }
}

// Serialized as `[x, y, z]`.
impl<T: Serialize> Serialize for Vec3<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [&self.x, &self.y, &self.z].serialize(s)
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for Vec3<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        <[T; 3]>::deserialize(d).map(Self::from)
    }
}

impl<T: Real> Vec3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn zeros() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    /// Unit vector along `self`. The zero vector stays zero.
    pub fn normalize(self) -> Self {
        let n = self.norm();
        if n > T::zero() {
            self * (T::one() / n)
        } else {
            self
        }
    }

    pub fn max_abs_diff(self, o: Self) -> T {
        let d = self - o;
        d.x.abs().max(d.y.abs()).max(d.z.abs())
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mat3<T> {
    pub rows: [[T; 3]; 3],
}

impl<T: Real> Mat3<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self {
            rows: [[o, z, z], [z, o, z], [z, z, o]],
        }
    }

    /// Rotation of `angle` radians about `axis` (Rodrigues' formula).
    /// A zero axis yields the identity.
    pub fn from_axis_angle(axis: Vec3<T>, angle: T) -> Self {
        let n = axis.norm();
        if n == T::zero() {
            return Self::identity();
        }
        let k = axis * (T::one() / n);
        let (s, c) = angle.sin_cos();
        let v = T::one() - c;
        Self {
            rows: [
                [
                    c + k.x * k.x * v,
                    k.x * k.y * v - k.z * s,
                    k.x * k.z * v + k.y * s,
                ],
                [
                    k.y * k.x * v + k.z * s,
                    c + k.y * k.y * v,
                    k.y * k.z * v - k.x * s,
                ],
                [
                    k.z * k.x * v - k.y * s,
                    k.z * k.y * v + k.x * s,
                    c + k.z * k.z * v,
                ],
            ],
        }
    }

    pub fn transpose(&self) -> Self {
        let r = &self.rows;
        Self {
            rows: [
                [r[0][0], r[1][0], r[2][0]],
                [r[0][1], r[1][1], r[2][1]],
                [r[0][2], r[1][2], r[2][2]],
            ],
        }
    }

    pub fn mul_vec(&self, v: Vec3<T>) -> Vec3<T> {
        let r = &self.rows;
        Vec3::new(
            r[0][0] * v.x + r[0][1] * v.y + r[0][2] * v.z,
            r[1][0] * v.x + r[1][1] * v.y + r[1][2] * v.z,
            r[2][0] * v.x + r[2][1] * v.y + r[2][2] * v.z,
        )
    }

    pub fn mul_mat(&self, o: &Self) -> Self {
        let mut rows = [[T::zero(); 3]; 3];
        for (i, row) in rows.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.rows[i][k] * o.rows[k][j]).sum();
            }
        }
        Self { rows }
    }

    pub fn determinant(&self) -> T {
        let r = &self.rows;
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    }

    pub fn max_abs_diff(&self, o: &Self) -> T {
        let mut m = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                m = m.max((self.rows[i][j] - o.rows[i][j]).abs());
            }
        }
        m
    }

    /// `RᵀR = I` and `det R = 1`, both within `tol`.
    pub fn is_rotation(&self, tol: T) -> bool {
        let rtr = self.transpose().mul_mat(self);
        rtr.max_abs_diff(&Self::identity()) <= tol && (self.determinant() - T::one()).abs() <= tol
    }
}

/// Maps points from a source frame into a target frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform<T> {
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
}

impl<T: Real> RigidTransform<T> {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Mat3<T>, translation: Vec3<T>) -> Result<Self, GeometryError> {
        let t = Self {
            rotation,
            translation,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !self.rotation.is_rotation(T::of(1e-9)) {
            return Err(invalid("rotation", "not orthonormal with unit determinant"));
        }
        let t = self.translation;
        if !(t.x.is_finite() && t.y.is_finite() && t.z.is_finite()) {
            return Err(invalid("translation", "non-finite component"));
        }
        Ok(())
    }

    pub fn apply(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation.mul_vec(p) + self.translation
    }

    /// Rotates a direction without translating it.
    pub fn apply_direction(&self, d: Vec3<T>) -> Vec3<T> {
        self.rotation.mul_vec(d)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation.mul_mat(&other.rotation),
            translation: self.rotation.mul_vec(other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -rt.mul_vec(self.translation),
        }
    }

    /// Origin of the target frame expressed in the source frame.
    pub fn target_origin(&self) -> Vec3<T> {
        self.inverse().translation
    }

    pub fn max_abs_diff(&self, o: &Self) -> T {
        self.rotation
            .max_abs_diff(&o.rotation)
            .max(self.translation.max_abs_diff(o.translation))
    }
}

/// Pinhole intrinsics. `width`/`height` give the raster size in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: u32,
    pub height: u32,
}

impl<T: Real> Intrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return Err(invalid("intrinsics", "focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(invalid("intrinsics", "raster size must be positive"));
        }
        let (w, h) = (T::of(self.width as f64), T::of(self.height as f64));
        if !(self.cx >= T::zero() && self.cx < w && self.cy >= T::zero() && self.cy < h) {
            return Err(invalid("intrinsics", "principal point outside the raster"));
        }
        Ok(())
    }

    /// Same device observed at a different raster size. Pixel edges are
    /// preserved, so pixel centers shift by half a pixel under scaling.
    pub fn scaled_to(&self, width: u32, height: u32) -> Self {
        if width == self.width && height == self.height {
            return *self;
        }
        let half = T::of(0.5);
        let sx = T::of(width as f64 / self.width as f64);
        let sy = T::of(height as f64 / self.height as f64);
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + half) * sx - half,
            cy: (self.cy + half) * sy - half,
            width,
            height,
        }
    }

    /// Whether a pixel position lies on the raster (pixel edges inclusive of
    /// the low side).
    pub fn contains(&self, px: Vec2<T>) -> bool {
        let half = T::of(0.5);
        px.x >= -half
            && px.y >= -half
            && px.x < T::of(self.width as f64) - half
            && px.y < T::of(self.height as f64) - half
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Plane<T> {
    pub point: Vec3<T>,
    pub normal: Vec3<T>,
}

impl<T: Real> Plane<T> {
    pub fn new(point: Vec3<T>, normal: Vec3<T>) -> Result<Self, GeometryError> {
        let p = Self { point, normal };
        p.validate()?;
        Ok(p)
    }

    /// Fronto-parallel plane at depth `z` facing the camera.
    pub fn facing_camera(z: T) -> Self {
        Self {
            point: Vec3::new(T::zero(), T::zero(), z),
            normal: Vec3::new(T::zero(), T::zero(), -T::one()),
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if (self.normal.norm() - T::one()).abs() > T::of(1e-9) {
            return Err(invalid("plane", "normal must have unit length"));
        }
        Ok(())
    }

    pub fn signed_distance(&self, p: Vec3<T>) -> T {
        (p - self.point).dot(self.normal)
    }

    /// Orthonormal in-plane axes `(u, v)`. `u` follows the world x-axis where
    /// possible and `v = u × normal`, so for the default table `v` is world +y.
    pub fn basis(&self) -> (Vec3<T>, Vec3<T>) {
        let n = self.normal;
        let ex = Vec3::new(T::one(), T::zero(), T::zero());
        let mut u = ex - n * ex.dot(n);
        if u.norm() < T::of(1e-6) {
            let ey = Vec3::new(T::zero(), T::one(), T::zero());
            u = ey - n * ey.dot(n);
        }
        let u = u.normalize();
        (u, u.cross(n))
    }

    /// In-plane coordinates of `p` relative to `origin`.
    pub fn local_coords(&self, origin: Vec3<T>, p: Vec3<T>) -> Vec2<T> {
        let (u, v) = self.basis();
        let d = p - origin;
        Vec2::new(d.dot(u), d.dot(v))
    }

    /// Point at in-plane coordinates `c` relative to `origin`.
    pub fn point_at(&self, origin: Vec3<T>, c: Vec2<T>) -> Vec3<T> {
        let (u, v) = self.basis();
        origin + u * c.x + v * c.y
    }
}

/// Error in the projector's translation relative to the camera, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OffsetEstimate<T> {
    pub dx: T,
    pub dy: T,
}

impl<T> From<[T; 2]> for OffsetEstimate<T> {
    fn from([dx, dy]: [T; 2]) -> Self {
        Self { dx, dy }
    }
}

impl<T> From<OffsetEstimate<T>> for [T; 2] {
    fn from(e: OffsetEstimate<T>) -> Self {
        [e.dx, e.dy]
    }
}

// Serialized as `[dx, dy]`.
impl<T: Serialize> Serialize for OffsetEstimate<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [&self.dx, &self.dy].serialize(s)
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for OffsetEstimate<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        <[T; 2]>::deserialize(d).map(Self::from)
    }
}

impl<T: Real> OffsetEstimate<T> {
    pub fn new(dx: T, dy: T) -> Self {
        Self { dx, dy }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    pub fn norm(self) -> T {
        self.dx.hypot(self.dy)
    }

    pub fn scale(self, s: T) -> Self {
        Self::new(self.dx * s, self.dy * s)
    }

    pub fn dot(self, o: Self) -> T {
        self.dx * o.dx + self.dy * o.dy
    }

    pub fn is_finite(self) -> bool {
        self.dx.is_finite() && self.dy.is_finite()
    }
}

impl<T: Real> Add for OffsetEstimate<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.dx + o.dx, self.dy + o.dy)
    }
}

impl<T: Real> Sub for OffsetEstimate<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.dx - o.dx, self.dy - o.dy)
    }
}

impl<T: Real> Neg for OffsetEstimate<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.dx, -self.dy)
    }
}

/// Pinhole projection of a world point into a device raster.
pub fn project_point<T: Real>(
    k: &Intrinsics<T>,
    world_to_device: &RigidTransform<T>,
    p_world: Vec3<T>,
) -> Result<Vec2<T>, GeometryError> {
    let p = world_to_device.apply(p_world);
    if p.z <= T::of(MIN_DEPTH) {
        return Err(GeometryError::BehindDevice { depth: p.z.as_f64() });
    }
    Ok(Vec2::new(
        k.fx * p.x / p.z + k.cx,
        k.fy * p.y / p.z + k.cy,
    ))
}

/// Unit-norm viewing direction of a pixel in the device frame.
pub fn unproject_pixel<T: Real>(k: &Intrinsics<T>, pixel: Vec2<T>) -> Vec3<T> {
    Vec3::new((pixel.x - k.cx) / k.fx, (pixel.y - k.cy) / k.fy, T::one()).normalize()
}

pub fn intersect_ray_plane<T: Real>(
    origin: Vec3<T>,
    direction: Vec3<T>,
    plane: &Plane<T>,
) -> Result<Vec3<T>, GeometryError> {
    let denom = direction.dot(plane.normal);
    if denom.abs() < T::of(PARALLEL_EPS) {
        return Err(GeometryError::Parallel);
    }
    let s = (plane.point - origin).dot(plane.normal) / denom;
    if s <= T::zero() {
        return Err(GeometryError::BehindOrigin { s: s.as_f64() });
    }
    Ok(origin + direction * s)
}

/// Shifts the translation's x and y by the offset. Rotation is untouched.
pub fn apply_offset<T: Real>(t: &RigidTransform<T>, e: OffsetEstimate<T>) -> RigidTransform<T> {
    let mut out = *t;
    out.translation.x += e.dx;
    out.translation.y += e.dy;
    out
}

/// Casts a device pixel into the world and intersects it with a plane.
/// `world_to_device` locates the device; its inverse gives the ray origin.
pub fn cast_pixel_to_plane<T: Real>(
    k: &Intrinsics<T>,
    world_to_device: &RigidTransform<T>,
    pixel: Vec2<T>,
    plane: &Plane<T>,
) -> Result<Vec3<T>, GeometryError> {
    let device_to_world = world_to_device.inverse();
    let dir = device_to_world.apply_direction(unproject_pixel(k, pixel));
    intersect_ray_plane(device_to_world.translation, dir, plane)
}
