//! Frames, rotations, poses and direction-of-arrival vectors.
//!
//! Conventions used throughout the crate:
//!
//! * a [`Pose`] maps coordinates in `from` to coordinates in `to`:
//!   `p_to = R * p_from + t`;
//! * azimuth is `atan2(y, x)` and elevation is `asin(z / |v|)`, both in radians;
//! * Euler angles are intrinsic Z-Y-X (yaw, pitch, roll).

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-entry tolerance used when validating rotation matrices.
pub const ROTATION_TOL: f64 = 1e-9;

/// Separation below which two agents are treated as coincident (metres).
pub const MIN_SEPARATION: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Agent {
    A,
    B,
    C,
}

impl fmt::Display for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Agent::A => "A",
            Agent::B => "B",
            Agent::C => "C",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameKind {
    /// Global navigation frame of the GPS-equipped agent.
    Global,
    /// Drifting INS frame of a GPS-denied agent.
    LocalIns,
    /// INS-parallel axes centred on the vehicle.
    BodyCentredIns,
    /// Axes fixed to the airframe.
    BodyFixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameId {
    pub kind: FrameKind,
    pub agent: Agent,
}

impl FrameId {
    pub const fn new(kind: FrameKind, agent: Agent) -> Self {
        Self { kind, agent }
    }

    pub const fn global() -> Self {
        Self::new(FrameKind::Global, Agent::A)
    }

    pub const fn ins(agent: Agent) -> Self {
        Self::new(FrameKind::LocalIns, agent)
    }

    pub const fn body_centred(agent: Agent) -> Self {
        Self::new(FrameKind::BodyCentredIns, agent)
    }

    pub const fn body(agent: Agent) -> Self {
        Self::new(FrameKind::BodyFixed, agent)
    }

    /// Frames whose axes coincide: an INS frame and its body-centred copy.
    pub fn axes_parallel(&self, other: &FrameId) -> bool {
        use FrameKind::*;
        if self == other {
            return true;
        }
        self.agent == other.agent
            && matches!(
                (self.kind, other.kind),
                (LocalIns, BodyCentredIns) | (BodyCentredIns, LocalIns)
            )
    }
}

impl fmt::Display for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = match self.kind {
            FrameKind::Global => 1,
            FrameKind::LocalIns => 2,
            FrameKind::BodyCentredIns => 3,
            FrameKind::BodyFixed => 4,
        };
        write!(f, "{}{}", self.agent, n)
    }
}

/// A proper rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix3<f64>", into = "Matrix3<f64>")]
pub struct Rotation(Matrix3<f64>);

impl TryFrom<Matrix3<f64>> for Rotation {
    type Error = Error;

    fn try_from(m: Matrix3<f64>) -> Result<Self> {
        Rotation::new(m)
    }
}

impl From<Rotation> for Matrix3<f64> {
    fn from(r: Rotation) -> Self {
        r.0
    }
}

impl Rotation {
    /// Validates orthonormality and unit determinant to [`ROTATION_TOL`].
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        Self::with_tolerance(m, ROTATION_TOL)
    }

    pub fn with_tolerance(m: Matrix3<f64>, tol: f64) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::NotARotation("non-finite entry".into()));
        }
        let gram = m * m.transpose() - Matrix3::identity();
        let worst = gram.amax();
        if worst > tol {
            return Err(Error::NotARotation(format!(
                "orthogonality defect {worst:e}"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > tol {
            return Err(Error::NotARotation(format!("determinant {det}")));
        }
        Ok(Self(m))
    }

    /// Wraps `m` without validation. Callers must guarantee `m` is in SO(3).
    pub fn new_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn from_euler(e: EulerAngles) -> Self {
        Self(e.matrix())
    }

    /// Rotation by `angle` about the unit axis `axis` (Rodrigues).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let k = axis.normalize();
        let kx = cross_matrix(&k);
        Self(Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos()))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Matrix3<f64> {
        self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn to_euler(&self) -> EulerAngles {
        EulerAngles::from_matrix(&self.0)
    }

    /// Largest absolute entry of `R Rᵀ - I` and `|det R - 1|`.
    pub fn orthogonality_defect(&self) -> (f64, f64) {
        let gram = self.0 * self.0.transpose() - Matrix3::identity();
        (gram.amax(), (self.0.determinant() - 1.0).abs())
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl std::ops::Mul<Vector3<f64>> for Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

pub fn cross_matrix(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Intrinsic Z-Y-X Euler angles: `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerAngles {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl EulerAngles {
    pub const fn new(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self { yaw, pitch, roll }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.yaw, self.pitch, self.roll]
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        rot_z(self.yaw) * rot_y(self.pitch) * rot_x(self.roll)
    }

    /// Partial derivatives of [`EulerAngles::matrix`] with respect to yaw,
    /// pitch and roll.
    pub fn matrix_partials(&self) -> [Matrix3<f64>; 3] {
        let (z, y, x) = (rot_z(self.yaw), rot_y(self.pitch), rot_x(self.roll));
        [
            d_rot_z(self.yaw) * y * x,
            z * d_rot_y(self.pitch) * x,
            z * y * d_rot_x(self.roll),
        ]
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let pitch = (-m[(2, 0)]).atan2(m[(2, 1)].hypot(m[(2, 2)]));
        if m[(2, 1)].hypot(m[(2, 2)]) < 1e-12 {
            // Gimbal lock: only yaw - roll (or yaw + roll) is observable.
            let yaw = (-m[(0, 1)]).atan2(m[(1, 1)]);
            return Self::new(yaw, pitch, 0.0);
        }
        let yaw = m[(1, 0)].atan2(m[(0, 0)]);
        let roll = m[(2, 1)].atan2(m[(2, 2)]);
        Self::new(yaw, pitch, roll)
    }

    /// True when pitch is within `margin` of ±π/2.
    pub fn near_gimbal_lock(&self, margin: f64) -> bool {
        self.pitch.abs() > FRAC_PI_2 - margin
    }
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn d_rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn d_rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn d_rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// Rigid transform between two frames: `p_to = R p_from + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
    pub from: FrameId,
    pub to: FrameId,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>, from: FrameId, to: FrameId) -> Self {
        Self {
            rotation,
            translation,
            from,
            to,
        }
    }

    pub fn identity(from: FrameId, to: FrameId) -> Self {
        Self::new(Rotation::identity(), Vector3::zeros(), from, to)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.matrix() * p + self.translation
    }

    /// Inverse transform: rotation transposed, translation `-Rᵀ t`.
    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt.matrix() * self.translation),
            from: self.to,
            to: self.from,
        }
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn compose(&self, first: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * first.rotation,
            translation: self.rotation.matrix() * first.translation + self.translation,
            from: first.from,
            to: self.to,
        }
    }
}

pub fn transform_point(p: &Vector3<f64>, pose: &Pose) -> Vector3<f64> {
    pose.transform_point(p)
}

pub fn invert_pose(pose: &Pose) -> Pose {
    pose.inverse()
}

/// Azimuth/elevation pair referenced to `frame` at epoch `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoaMeasurement {
    pub azimuth: f64,
    pub elevation: f64,
    pub frame: FrameId,
    pub k: usize,
}

impl DoaMeasurement {
    pub fn new(azimuth: f64, elevation: f64, frame: FrameId, k: usize) -> Self {
        Self {
            azimuth,
            elevation,
            frame,
            k,
        }
    }

    pub fn unit_vector(&self) -> Vector3<f64> {
        doa_to_unit_vector(self)
    }

    pub fn in_range(&self) -> bool {
        self.azimuth > -PI && self.azimuth <= PI && self.elevation.abs() <= FRAC_PI_2
    }
}

/// `[cosθ cosφ, sinθ cosφ, sinφ]`.
pub fn doa_to_unit_vector(d: &DoaMeasurement) -> Vector3<f64> {
    angles_to_unit_vector(d.azimuth, d.elevation)
}

pub fn angles_to_unit_vector(azimuth: f64, elevation: f64) -> Vector3<f64> {
    let (sa, ca) = azimuth.sin_cos();
    let (se, ce) = elevation.sin_cos();
    Vector3::new(ca * ce, sa * ce, se)
}

/// Inverse of [`doa_to_unit_vector`]; `v` need not be normalised.
///
/// Azimuth is 0 when `v` points along ±z.
pub fn unit_vector_to_doa(v: &Vector3<f64>, frame: FrameId, k: usize) -> Result<DoaMeasurement> {
    let (azimuth, elevation) = vector_angles(v)?;
    Ok(DoaMeasurement::new(azimuth, elevation, frame, k))
}

pub fn vector_angles(v: &Vector3<f64>) -> Result<(f64, f64)> {
    let n = v.norm();
    if !(n > MIN_SEPARATION) {
        return Err(Error::DegenerateVector(n));
    }
    let horiz = v.x.hypot(v.y);
    let azimuth = if horiz <= n * f64::EPSILON {
        0.0
    } else {
        wrap_angle(v.y.atan2(v.x))
    };
    let elevation = (v.z / n).clamp(-1.0, 1.0).asin();
    Ok((azimuth, elevation))
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn b2() -> FrameId {
        FrameId::ins(Agent::B)
    }

    #[test]
    fn axis_aligned_unit_vectors() {
        let x = doa_to_unit_vector(&DoaMeasurement::new(0.0, 0.0, b2(), 1));
        assert_abs_diff_eq!(x, Vector3::x(), epsilon = 1e-15);
        let y = doa_to_unit_vector(&DoaMeasurement::new(FRAC_PI_2, 0.0, b2(), 1));
        assert_abs_diff_eq!(y, Vector3::y(), epsilon = 1e-15);
    }

    #[test]
    fn pole_and_diagonal() {
        let up = unit_vector_to_doa(&Vector3::z(), b2(), 0).unwrap();
        assert_eq!(up.azimuth, 0.0);
        assert_abs_diff_eq!(up.elevation, FRAC_PI_2, epsilon = 1e-15);
        let d = unit_vector_to_doa(&Vector3::new(1.0, 1.0, 0.0), b2(), 0).unwrap();
        assert_abs_diff_eq!(d.azimuth, PI / 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.elevation, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn coincident_agents_rejected() {
        let err = unit_vector_to_doa(&Vector3::new(1e-10, 0.0, 0.0), b2(), 0);
        assert!(matches!(err, Err(Error::DegenerateVector(_))));
    }

    #[test]
    fn azimuth_range_is_half_open() {
        let d = unit_vector_to_doa(&Vector3::new(-1.0, 0.0, 0.0), b2(), 0).unwrap();
        assert_eq!(d.azimuth, PI);
        assert!(d.in_range());
        assert_eq!(wrap_angle(-PI), PI);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI / 2.0), -FRAC_PI_2, epsilon = 1e-15);
    }

    #[test]
    fn rotation_validation() {
        assert!(Rotation::new(Matrix3::identity()).is_ok());
        assert!(Rotation::new(Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0))).is_err());
        assert!(Rotation::new(Matrix3::identity() * 1.01).is_err());
    }

    #[test]
    fn identity_pose_is_neutral() {
        let pose = Pose::identity(FrameId::global(), b2());
        let p = Vector3::new(3.0, -2.0, 7.5);
        assert_eq!(pose.transform_point(&p), p);
        let inv = pose.inverse();
        assert_eq!(inv.rotation, Rotation::identity());
        assert_eq!(inv.translation, Vector3::zeros());
        assert_eq!(inv.from, b2());
    }

    #[test]
    fn frame_axes() {
        assert!(FrameId::ins(Agent::B).axes_parallel(&FrameId::body_centred(Agent::B)));
        assert!(!FrameId::ins(Agent::B).axes_parallel(&FrameId::body(Agent::B)));
        assert!(!FrameId::ins(Agent::B).axes_parallel(&FrameId::body_centred(Agent::C)));
        assert_eq!(FrameId::body(Agent::C).to_string(), "C4");
    }

    #[test]
    fn euler_partials_match_finite_differences() {
        let e = EulerAngles::new(0.3, -0.7, 1.9);
        let parts = e.matrix_partials();
        let h = 1e-6;
        for (i, part) in parts.iter().enumerate() {
            let mut a = e.as_array();
            let mut b = e.as_array();
            a[i] += h;
            b[i] -= h;
            let fd = (EulerAngles::new(a[0], a[1], a[2]).matrix()
                - EulerAngles::new(b[0], b[1], b[2]).matrix())
                / (2.0 * h);
            assert_abs_diff_eq!(fd, *part, epsilon = 1e-8);
        }
    }

    fn euler_strategy() -> impl Strategy<Value = EulerAngles> {
        (-PI..PI, -1.5..1.5f64, -PI..PI).prop_map(|(a, b, c)| EulerAngles::new(a, b, c))
    }

    proptest! {
        #[test]
        fn doa_round_trip(az in -3.1..PI, el in -1.57..1.57f64) {
            let d = DoaMeasurement::new(az, el, b2(), 3);
            let v = doa_to_unit_vector(&d);
            prop_assert!((v.norm() - 1.0).abs() < 1e-12);
            let back = unit_vector_to_doa(&v, b2(), 3).unwrap();
            prop_assert!((back.azimuth - az).abs() < 1e-12);
            prop_assert!((back.elevation - el).abs() < 1e-12);
        }

        #[test]
        fn euler_round_trip(e in euler_strategy()) {
            let r = Rotation::from_euler(e);
            let (orth, det) = r.orthogonality_defect();
            prop_assert!(orth < 1e-12 && det < 1e-12);
            let back = r.to_euler().matrix();
            prop_assert!((back - r.matrix()).amax() < 1e-9);
        }

        #[test]
        fn pose_inverse_round_trips(
            e in euler_strategy(),
            t in proptest::array::uniform3(-600.0..600.0f64),
            p in proptest::array::uniform3(-2000.0..2000.0f64),
        ) {
            let pose = Pose::new(
                Rotation::from_euler(e),
                Vector3::from(t),
                FrameId::global(),
                b2(),
            );
            let p = Vector3::from(p);
            let q = pose.inverse().transform_point(&pose.transform_point(&p));
            prop_assert!((q - p).amax() < 1e-9);
            let twice = pose.inverse().inverse();
            prop_assert!((twice.rotation.matrix() - pose.rotation.matrix()).amax() < 1e-12);
            let ident = pose.inverse().compose(&pose);
            prop_assert!((ident.rotation.matrix() - Matrix3::identity()).amax() < 1e-9);
            prop_assert!(ident.translation.amax() < 1e-9);
        }
    }
}
