//! Rigid-transform algebra: vectors, unit quaternions and poses.
//!
//! Poses serialize as seven numbers `[px, py, pz, qx, qy, qz, qw]`.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::qnet::ActionDelta;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("zero-length vector where a direction is required")]
    ZeroLength,
    #[error("interpolation parameter {0} outside [0, 1]")]
    ParameterOutOfRange(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn normalized(self) -> Result<Vec3, GeomError> {
        let n = self.norm();
        if !n.is_finite() {
            return Err(GeomError::NonFinite("vector"));
        }
        if n == 0.0 {
            return Err(GeomError::ZeroLength);
        }
        Ok(self / n)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn lerp(self, o: Vec3, t: f64) -> Vec3 {
        self + (o - self) * t
    }

    pub fn component_mul(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Vec3 {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Row-major 3x3 matrix, used for inertia tensors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const ZERO: Mat3 = Mat3([[0.0; 3]; 3]);
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn from_cols(a: Vec3, b: Vec3, c: Vec3) -> Mat3 {
        Mat3([[a.x, b.x, c.x], [a.y, b.y, c.y], [a.z, b.z, c.z]])
    }

    pub fn diagonal(d: Vec3) -> Mat3 {
        Mat3([[d.x, 0.0, 0.0], [0.0, d.y, 0.0], [0.0, 0.0, d.z]])
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    pub fn mul_mat(&self, o: &Mat3) -> Mat3 {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        Mat3(r)
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn add(&self, o: &Mat3) -> Mat3 {
        let mut r = self.0;
        for (i, row) in r.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell += o.0[i][j];
            }
        }
        Mat3(r)
    }

    pub fn scale(&self, s: f64) -> Mat3 {
        let mut r = self.0;
        r.iter_mut().flatten().for_each(|c| *c *= s);
        Mat3(r)
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn inverse(&self) -> Option<Mat3> {
        let det = self.determinant();
        if det.abs() < 1e-300 {
            return None;
        }
        let m = &self.0;
        let inv_det = 1.0 / det;
        let mut r = [[0.0; 3]; 3];
        r[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_det;
        r[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det;
        r[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det;
        r[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_det;
        r[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det;
        r[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det;
        r[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_det;
        r[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det;
        r[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det;
        Some(Mat3(r))
    }
}

/// Unit quaternion stored as `(x, y, z, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct UnitQuat {
    x: f64,
    y: f64,
    z: f64,
    w: f64,
}

impl Default for UnitQuat {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl TryFrom<[f64; 4]> for UnitQuat {
    type Error = GeomError;
    fn try_from(a: [f64; 4]) -> Result<Self, GeomError> {
        UnitQuat::from_stored(a)
    }
}

impl From<UnitQuat> for [f64; 4] {
    fn from(q: UnitQuat) -> [f64; 4] {
        q.to_xyzw()
    }
}

impl UnitQuat {
    pub const IDENTITY: UnitQuat = UnitQuat { x: 0.0, y: 0.0, z: 0.0, w: 1.0 };

    /// Normalizes the given components.
    pub fn from_xyzw(x: f64, y: f64, z: f64, w: f64) -> Result<Self, GeomError> {
        let n = (x * x + y * y + z * z + w * w).sqrt();
        if !n.is_finite() {
            return Err(GeomError::NonFinite("quaternion"));
        }
        if n == 0.0 {
            return Err(GeomError::ZeroLength);
        }
        Ok(Self { x: x / n, y: y / n, z: z / n, w: w / n })
    }

    /// Keeps already-unit components bit for bit so stored poses round-trip
    /// exactly; anything further than 1e-9 from unit norm is normalized.
    pub fn from_stored(a: [f64; 4]) -> Result<Self, GeomError> {
        let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2] + a[3] * a[3]).sqrt();
        if (n - 1.0).abs() <= 1e-9 {
            return Ok(Self { x: a[0], y: a[1], z: a[2], w: a[3] });
        }
        Self::from_xyzw(a[0], a[1], a[2], a[3])
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Result<Self, GeomError> {
        let a = axis.normalized()?;
        let (s, c) = (0.5 * angle).sin_cos();
        Self::from_xyzw(a.x * s, a.y * s, a.z * s, c)
    }

    /// Extrinsic X-Y-Z rotation (roll about world X, then pitch about world Y,
    /// then yaw about world Z), angles in radians.
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64) -> Self {
        let (sr, cr) = (0.5 * roll).sin_cos();
        let (sp, cp) = (0.5 * pitch).sin_cos();
        let (sy, cy) = (0.5 * yaw).sin_cos();
        let q = Self {
            x: sr * cp * cy - cr * sp * sy,
            y: cr * sp * cy + sr * cp * sy,
            z: cr * cp * sy - sr * sp * cy,
            w: cr * cp * cy + sr * sp * sy,
        };
        q.renormalized()
    }

    /// Inverse of [`UnitQuat::from_euler`]; pitch in [-pi/2, pi/2].
    pub fn to_euler(&self) -> (f64, f64, f64) {
        let (x, y, z, w) = (self.x, self.y, self.z, self.w);
        let roll = (2.0 * (w * x + y * z)).atan2(1.0 - 2.0 * (x * x + y * y));
        let sp = (2.0 * (w * y - z * x)).clamp(-1.0, 1.0);
        let pitch = sp.asin();
        let yaw = (2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z));
        (roll, pitch, yaw)
    }

    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }
    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn to_xyzw(&self) -> [f64; 4] {
        [self.x, self.y, self.z, self.w]
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z + self.w * self.w).sqrt()
    }

    fn renormalized(self) -> Self {
        let n = self.norm();
        Self { x: self.x / n, y: self.y / n, z: self.z / n, w: self.w / n }
    }

    pub fn conjugate(&self) -> Self {
        Self { x: -self.x, y: -self.y, z: -self.z, w: self.w }
    }

    /// Flips sign so that `w >= 0`.
    pub fn canonical(self) -> Self {
        if self.w < 0.0 {
            Self { x: -self.x, y: -self.y, z: -self.z, w: -self.w }
        } else {
            self
        }
    }

    pub fn dot(&self, o: &UnitQuat) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z + self.w * o.w
    }

    /// Hamilton product `self * o` (apply `o` first, then `self`).
    pub fn mul(&self, o: &UnitQuat) -> UnitQuat {
        let (a, b) = (self, o);
        UnitQuat {
            x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
            w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        }
        .renormalized()
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        let u = Vec3::new(self.x, self.y, self.z);
        let t = u.cross(v) * 2.0;
        v + t * self.w + u.cross(t)
    }

    pub fn to_matrix(&self) -> Mat3 {
        Mat3::from_cols(self.rotate(Vec3::X), self.rotate(Vec3::Y), self.rotate(Vec3::Z))
    }

    /// Rotation angle in [0, pi].
    pub fn angle(&self) -> f64 {
        let v = (self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        2.0 * v.atan2(self.w.abs())
    }

    pub fn angle_to(&self, o: &UnitQuat) -> f64 {
        self.conjugate().mul(o).angle()
    }

    /// Integrates an angular velocity (world frame) over `dt`.
    pub fn integrate(&self, omega: Vec3, dt: f64) -> UnitQuat {
        let h = 0.5 * dt;
        let dq = UnitQuat {
            x: omega.x * h,
            y: omega.y * h,
            z: omega.z * h,
            w: 0.0,
        };
        let (a, b) = (&dq, self);
        let p = UnitQuat {
            x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
            w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        };
        UnitQuat {
            x: self.x + p.x,
            y: self.y + p.y,
            z: self.z + p.z,
            w: self.w + p.w,
        }
        .renormalized()
    }

    /// Rotation vector (axis * angle) taking `self` to `o` in the world frame.
    pub fn delta_to(&self, o: &UnitQuat) -> Vec3 {
        let d = o.mul(&self.conjugate()).canonical();
        let v = Vec3::new(d.x, d.y, d.z);
        let s = v.norm();
        if s < 1e-15 {
            return v * 2.0;
        }
        v * (2.0 * s.atan2(d.w) / s)
    }

    /// Spherical interpolation along the shorter arc.
    pub fn slerp(&self, o: &UnitQuat, t: f64) -> UnitQuat {
        let mut b = *o;
        let mut d = self.dot(&b);
        if d < 0.0 {
            b = UnitQuat { x: -b.x, y: -b.y, z: -b.z, w: -b.w };
            d = -d;
        }
        if d > 0.9995 {
            return UnitQuat {
                x: self.x + (b.x - self.x) * t,
                y: self.y + (b.y - self.y) * t,
                z: self.z + (b.z - self.z) * t,
                w: self.w + (b.w - self.w) * t,
            }
            .renormalized();
        }
        let theta = d.clamp(-1.0, 1.0).acos();
        let s = theta.sin();
        let wa = ((1.0 - t) * theta).sin() / s;
        let wb = (t * theta).sin() / s;
        UnitQuat {
            x: wa * self.x + wb * b.x,
            y: wa * self.y + wb * b.y,
            z: wa * self.z + wb * b.z,
            w: wa * self.w + wb * b.w,
        }
        .renormalized()
    }
}

/// Minimal rotation taking direction `from` onto direction `to`.
///
/// Antipodal inputs rotate half a turn about whichever of +X, +Y is more
/// orthogonal to `from` (ties go to +X). Output has `w >= 0`.
pub fn shortest_arc(from: Vec3, to: Vec3) -> Result<UnitQuat, GeomError> {
    let a = from.normalized()?;
    let b = to.normalized()?;
    let d = a.dot(b);
    if d < -1.0 + 1e-8 {
        let candidate = if a.x.abs() <= a.y.abs() { Vec3::X } else { Vec3::Y };
        let axis = (candidate - a * candidate.dot(a)).normalized()?;
        return UnitQuat::from_xyzw(axis.x, axis.y, axis.z, 0.0);
    }
    let c = a.cross(b);
    Ok(UnitQuat::from_xyzw(c.x, c.y, c.z, 1.0 + d)?.canonical())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: UnitQuat,
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let a = <[f64; 7]>::deserialize(d)?;
        Pose::from_array(a).map_err(serde::de::Error::custom)
    }
}

impl Pose {
    pub const IDENTITY: Pose = Pose { position: Vec3::ZERO, orientation: UnitQuat::IDENTITY };

    pub const fn new(position: Vec3, orientation: UnitQuat) -> Self {
        Self { position, orientation }
    }

    pub const fn from_position(position: Vec3) -> Self {
        Self { position, orientation: UnitQuat::IDENTITY }
    }

    pub fn to_array(&self) -> [f64; 7] {
        let q = self.orientation.to_xyzw();
        [self.position.x, self.position.y, self.position.z, q[0], q[1], q[2], q[3]]
    }

    pub fn from_array(a: [f64; 7]) -> Result<Self, GeomError> {
        let position = Vec3::new(a[0], a[1], a[2]);
        if !position.is_finite() {
            return Err(GeomError::NonFinite("position"));
        }
        Ok(Self { position, orientation: UnitQuat::from_stored([a[3], a[4], a[5], a[6]])? })
    }

    /// `self ∘ other`: express `other` (given in this pose's frame) in the parent frame.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            position: self.position + self.orientation.rotate(other.position),
            orientation: self.orientation.mul(&other.orientation),
        }
    }

    pub fn inverse(&self) -> Pose {
        let qi = self.orientation.conjugate();
        Pose { position: -qi.rotate(self.position), orientation: qi }
    }

    pub fn transform_point(&self, p: Vec3) -> Vec3 {
        self.position + self.orientation.rotate(p)
    }

    /// Translates in the world frame and rotates about this pose's origin
    /// (rotation axes are world-aligned).
    pub fn apply_delta(&self, delta: &ActionDelta) -> Pose {
        let t = delta.translation();
        let [r, p, y] = delta.rotation_radians();
        let dq = UnitQuat::from_euler(r, p, y);
        Pose {
            position: self.position + t,
            orientation: dq.mul(&self.orientation),
        }
    }
}

/// Linear position / spherical orientation interpolation; endpoints are exact.
pub fn interpolate(a: &Pose, b: &Pose, t: f64) -> Result<Pose, GeomError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(GeomError::ParameterOutOfRange(t));
    }
    if t == 0.0 {
        return Ok(*a);
    }
    if t == 1.0 {
        return Ok(*b);
    }
    Ok(Pose {
        position: a.position.lerp(b.position, t),
        orientation: a.orientation.slerp(&b.orientation, t),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EPS: f64 = 1e-9;

    fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn shortest_arc_identity() {
        let q = shortest_arc(Vec3::new(0.0, 0.0, -1.0), Vec3::new(0.0, 0.0, -1.0)).unwrap();
        assert_eq!(q.to_xyzw(), [0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn shortest_arc_quarter_turn_about_y() {
        let q = shortest_arc(Vec3::Z, Vec3::X).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let [x, y, z, w] = q.to_xyzw();
        assert!((x).abs() < EPS && (y - h).abs() < 1e-12 && z.abs() < EPS && (w - h).abs() < 1e-12);
        assert!(close(q.rotate(Vec3::Z), Vec3::X, 1e-12));
    }

    #[test]
    fn shortest_arc_antipodal_prefers_x() {
        let q = shortest_arc(Vec3::Z, -Vec3::Z).unwrap();
        assert_eq!(q.to_xyzw(), [1.0, 0.0, 0.0, 0.0]);
        // from lies along X: Y is the more orthogonal candidate
        let q = shortest_arc(Vec3::X, -Vec3::X).unwrap();
        assert!(close(q.rotate(Vec3::X), -Vec3::X, 1e-12));
        assert!((q.y().abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shortest_arc_rejects_zero() {
        assert_eq!(shortest_arc(Vec3::ZERO, Vec3::X), Err(GeomError::ZeroLength));
        assert_eq!(shortest_arc(Vec3::X, Vec3::ZERO), Err(GeomError::ZeroLength));
    }

    #[test]
    fn compose_identity_and_inverse() {
        let p = Pose::new(
            Vec3::new(0.1, -0.2, 0.3),
            UnitQuat::from_axis_angle(Vec3::new(1.0, 2.0, 3.0), 0.7).unwrap(),
        );
        assert_eq!(Pose::IDENTITY.compose(&p), p);
        let round = p.inverse().inverse();
        assert!(close(round.position, p.position, EPS));
        assert!(round.orientation.angle_to(&p.orientation) < EPS);
        let id = p.compose(&p.inverse());
        assert!(id.position.norm() < EPS);
        assert!(id.orientation.angle() < 1e-7);
    }

    #[test]
    fn apply_delta_translates_in_world() {
        let d = ActionDelta::new([0, 0, 1, 0, 0, 0]).unwrap();
        let p = Pose::IDENTITY.apply_delta(&d);
        assert!(close(p.position, Vec3::new(0.0, 0.0, 0.05), 1e-15));
        assert_eq!(p.orientation, UnitQuat::IDENTITY);
    }

    #[test]
    fn apply_delta_rotates_about_origin() {
        let start = Pose::from_position(Vec3::new(0.2, 0.0, 0.1));
        let d = ActionDelta::new([0, 0, 0, 0, 0, 1]).unwrap();
        let p = start.apply_delta(&d);
        assert_eq!(p.position, start.position);
        assert!((p.orientation.angle() - 22.5f64.to_radians()).abs() < 1e-12);
    }

    #[test]
    fn interpolate_endpoints_and_midpoint() {
        let a = Pose::IDENTITY;
        let b = Pose::new(
            Vec3::new(0.0, 0.0, 0.2),
            UnitQuat::from_axis_angle(Vec3::Z, 1.0).unwrap(),
        );
        assert_eq!(interpolate(&a, &b, 0.0).unwrap(), a);
        assert_eq!(interpolate(&a, &b, 1.0).unwrap(), b);
        let m = interpolate(&a, &b, 0.5).unwrap();
        assert!(close(m.position, Vec3::new(0.0, 0.0, 0.1), 1e-15));
        assert!((m.orientation.angle() - 0.5).abs() < 1e-12);
        assert!(matches!(interpolate(&a, &b, 1.5), Err(GeomError::ParameterOutOfRange(_))));
        assert!(matches!(interpolate(&a, &b, -0.1), Err(GeomError::ParameterOutOfRange(_))));
    }

    #[test]
    fn euler_round_trip() {
        let q = UnitQuat::from_euler(0.3, -0.4, 1.2);
        let (r, p, y) = q.to_euler();
        assert!((r - 0.3).abs() < 1e-12 && (p + 0.4).abs() < 1e-12 && (y - 1.2).abs() < 1e-12);
        // extrinsic XYZ == Rz * Ry * Rx
        let composed = UnitQuat::from_axis_angle(Vec3::Z, 1.2)
            .unwrap()
            .mul(&UnitQuat::from_axis_angle(Vec3::Y, -0.4).unwrap())
            .mul(&UnitQuat::from_axis_angle(Vec3::X, 0.3).unwrap());
        assert!(q.angle_to(&composed) < 1e-7);
    }

    #[test]
    fn pose_serializes_as_seven_numbers() {
        let p = Pose::new(Vec3::new(1.0, 2.0, 3.0), UnitQuat::IDENTITY);
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, "[1.0,2.0,3.0,0.0,0.0,0.0,1.0]");
        let back: Pose = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }

    fn unit_vec() -> impl Strategy<Value = Vec3> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
            .prop_filter("nonzero", |(x, y, z)| x * x + y * y + z * z > 1e-4)
            .prop_map(|(x, y, z)| Vec3::new(x, y, z).normalized().unwrap())
    }

    fn quat() -> impl Strategy<Value = UnitQuat> {
        (unit_vec(), -3.0f64..3.0).prop_map(|(a, t)| UnitQuat::from_axis_angle(a, t).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn shortest_arc_maps_from_onto_to(a in unit_vec(), b in unit_vec()) {
            let q = shortest_arc(a, b).unwrap();
            prop_assert!((q.norm() - 1.0).abs() < 1e-9);
            prop_assert!(q.w() >= 0.0);
            prop_assert!(close(q.rotate(a), b, 1e-6));
            // minimal: angle equals the angle between the vectors
            let expected = a.dot(b).clamp(-1.0, 1.0).acos();
            prop_assert!((q.angle() - expected).abs() < 1e-6);
        }

        #[test]
        fn shortest_arc_self_is_identity(a in unit_vec()) {
            let q = shortest_arc(a, a).unwrap();
            prop_assert!(q.angle() < 1e-7);
        }

        #[test]
        fn compose_preserves_norm(q1 in quat(), q2 in quat()) {
            let a = Pose::new(Vec3::new(0.1, 0.2, 0.3), q1);
            let b = Pose::new(Vec3::new(-0.3, 0.0, 0.5), q2);
            prop_assert!((a.compose(&b).orientation.norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn interpolate_stays_unit(q1 in quat(), q2 in quat(), t in 0.0f64..=1.0) {
            let a = Pose::new(Vec3::ZERO, q1);
            let b = Pose::new(Vec3::X, q2);
            let m = interpolate(&a, &b, t).unwrap();
            prop_assert!((m.orientation.norm() - 1.0).abs() < 1e-9);
        }
    }
}
