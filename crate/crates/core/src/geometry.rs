//! Rigid transforms, pinhole projection and plane-constrained back-projection.
//!
//! Every pose in the crate is a [`RigidTransform`] tagged with the handedness
//! of the frames it relates. Transforms of different handedness never mix:
//! composing them is an error, and [`RigidTransform::lh_to_rh`] is the only way
//! across.

use nalgebra::{Matrix3, Matrix4, Quaternion, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// 3-D point in meters.
pub type Point3 = nalgebra::Point3<f64>;

/// Denominator below which a viewing ray is treated as parallel to a plane.
pub const RAY_EPSILON: f64 = 1e-8;

/// Axis mirrored when converting between left- and right-handed frames.
///
/// The tracking system does not document which axis it flips; only the
/// consistency of the choice matters for relative motion.
pub const MIRROR_AXIS: Axis = Axis::Z;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("cannot combine a {0:?}-handed transform with a {1:?}-handed one")]
    HandednessMismatch(Handedness, Handedness),
    #[error("transform is already right-handed")]
    AlreadyRightHanded,
    #[error("transform is already left-handed")]
    AlreadyLeftHanded,
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("viewing ray is parallel to the plane (n·d = {0:e})")]
    RayParallelToPlane(f64),
    #[error("ray meets the plane behind the camera (z = {0})")]
    PointBehindCamera(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid quaternion {0:?}")]
    InvalidQuaternion([f64; 4]),
    #[error("plane normal must be non-zero and finite")]
    DegeneratePlane,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Handedness {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn mirror_diagonal(self) -> Vector3<f64> {
        match self {
            Axis::X => Vector3::new(-1.0, 1.0, 1.0),
            Axis::Y => Vector3::new(1.0, -1.0, 1.0),
            Axis::Z => Vector3::new(1.0, 1.0, -1.0),
        }
    }
}

/// A proper rigid motion between two frames of the same handedness.
///
/// The quaternion is kept on the `w >= 0` hemisphere so that equal rotations
/// compare equal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "PoseRecord", try_from = "PoseRecord")]
pub struct RigidTransform {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
    handedness: Handedness,
}

/// On-disk form of a [`RigidTransform`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    /// `(x, y, z, w)`.
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
    pub handedness: Handedness,
}

impl From<RigidTransform> for PoseRecord {
    fn from(t: RigidTransform) -> Self {
        Self {
            rotation: t.quaternion_xyzw(),
            translation: t.translation_array(),
            handedness: t.handedness,
        }
    }
}

impl TryFrom<PoseRecord> for RigidTransform {
    type Error = GeometryError;

    fn try_from(r: PoseRecord) -> Result<Self, Self::Error> {
        RigidTransform::from_xyzw(r.rotation, r.translation, r.handedness)
    }
}

fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

impl RigidTransform {
    pub fn new(
        rotation: UnitQuaternion<f64>,
        translation: Vector3<f64>,
        handedness: Handedness,
    ) -> Self {
        // Re-normalizing keeps long composition chains on the unit sphere.
        let rotation = canonical(UnitQuaternion::new_normalize(rotation.into_inner()));
        Self {
            rotation,
            translation,
            handedness,
        }
    }

    pub fn identity(handedness: Handedness) -> Self {
        Self::new(UnitQuaternion::identity(), Vector3::zeros(), handedness)
    }

    pub fn from_translation(t: Vector3<f64>, handedness: Handedness) -> Self {
        Self::new(UnitQuaternion::identity(), t, handedness)
    }

    /// Builds a transform from an `(x, y, z, w)` quaternion and a translation,
    /// the storage order used by every file format in the crate.
    ///
    /// Slightly denormalized quaternions (as read back from text) are
    /// renormalized; anything further than 1e-6 from unit norm is rejected.
    pub fn from_xyzw(
        q: [f64; 4],
        t: [f64; 3],
        handedness: Handedness,
    ) -> Result<Self, GeometryError> {
        let quat = Quaternion::new(q[3], q[0], q[1], q[2]);
        let norm = quat.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 || t.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidQuaternion(q));
        }
        Ok(Self::new(
            UnitQuaternion::new_normalize(quat),
            Vector3::from(t),
            handedness,
        ))
    }

    /// Like [`from_xyzw`](Self::from_xyzw), but keeps an already canonical
    /// unit quaternion untouched, so poses survive a binary round trip bit
    /// for bit.
    pub fn from_stored_xyzw(
        q: [f64; 4],
        t: [f64; 3],
        handedness: Handedness,
    ) -> Result<Self, GeometryError> {
        let quat = Quaternion::new(q[3], q[0], q[1], q[2]);
        let exact = q[3] >= 0.0 && (quat.norm() - 1.0).abs() < 1e-12 && t.iter().all(|v| v.is_finite());
        if !exact {
            return Self::from_xyzw(q, t, handedness);
        }
        Ok(Self {
            rotation: UnitQuaternion::new_unchecked(quat),
            translation: Vector3::from(t),
            handedness,
        })
    }

    pub fn from_rotation_matrix(
        r: &Matrix3<f64>,
        t: Vector3<f64>,
        handedness: Handedness,
    ) -> Self {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(*r);
        Self::new(UnitQuaternion::from_rotation_matrix(&rot), t, handedness)
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, t: Vector3<f64>, h: Handedness) -> Self {
        let q = UnitQuaternion::from_axis_angle(&Unit::new_normalize(axis), angle);
        Self::new(q, t, h)
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn handedness(&self) -> Handedness {
        self.handedness
    }

    /// Quaternion in `(x, y, z, w)` order.
    pub fn quaternion_xyzw(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.i, q.j, q.k, q.w]
    }

    pub fn translation_array(&self) -> [f64; 3] {
        [self.translation.x, self.translation.y, self.translation.z]
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> Result<RigidTransform, GeometryError> {
        if self.handedness != other.handedness {
            return Err(GeometryError::HandednessMismatch(
                self.handedness,
                other.handedness,
            ));
        }
        Ok(Self::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
            self.handedness,
        ))
    }

    pub fn inverse(&self) -> RigidTransform {
        let inv = self.rotation.inverse();
        Self::new(inv, -(inv * self.translation), self.handedness)
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Geodesic rotation angle in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        self.rotation.angle()
    }

    /// Converts a transform between left-handed frames into the equivalent
    /// transform between right-handed frames, `M·T·M` with `M` the mirror
    /// about [`MIRROR_AXIS`].
    pub fn lh_to_rh(&self) -> Result<RigidTransform, GeometryError> {
        if self.handedness == Handedness::Right {
            return Err(GeometryError::AlreadyRightHanded);
        }
        Ok(self.mirrored(Handedness::Right))
    }

    /// Inverse of [`RigidTransform::lh_to_rh`].
    pub fn rh_to_lh(&self) -> Result<RigidTransform, GeometryError> {
        if self.handedness == Handedness::Left {
            return Err(GeometryError::AlreadyLeftHanded);
        }
        Ok(self.mirrored(Handedness::Left))
    }

    fn mirrored(&self, handedness: Handedness) -> RigidTransform {
        // For a diagonal mirror M, M·R·M keeps the rotation component along the
        // mirrored axis and negates the other two vector components.
        let d = MIRROR_AXIS.mirror_diagonal();
        let q = self.rotation.quaternion();
        let det = d.x * d.y * d.z;
        let v = Vector3::new(q.i, q.j, q.k).component_mul(&d) * det;
        let quat = Quaternion::new(q.w, v.x, v.y, v.z);
        Self::new(
            UnitQuaternion::new_unchecked(quat),
            self.translation.component_mul(&d),
            handedness,
        )
    }

    /// Interpolates between `self` (λ = 0) and `other` (λ = 1): linear in
    /// translation, spherical along the shorter arc in rotation.
    pub fn interpolate(
        &self,
        other: &RigidTransform,
        lambda: f64,
    ) -> Result<RigidTransform, GeometryError> {
        if self.handedness != other.handedness {
            return Err(GeometryError::HandednessMismatch(
                self.handedness,
                other.handedness,
            ));
        }
        let q = slerp(self.rotation.quaternion(), other.rotation.quaternion(), lambda);
        let t = self.translation * (1.0 - lambda) + other.translation * lambda;
        Ok(Self::new(UnitQuaternion::new_normalize(q), t, self.handedness))
    }

    /// Largest of the translation distance (m) and rotation angle (rad)
    /// between two transforms. Handedness is ignored.
    pub fn distance(&self, other: &RigidTransform) -> f64 {
        let dt = (self.translation - other.translation).norm();
        let dr = self.rotation.angle_to(&other.rotation);
        dt.max(dr)
    }
}

fn slerp(a: &Quaternion<f64>, b: &Quaternion<f64>, lambda: f64) -> Quaternion<f64> {
    let mut dot = a.dot(b);
    let mut b = *b;
    if dot < 0.0 {
        b = -b;
        dot = -dot;
    }
    let dot = dot.min(1.0);
    let theta = dot.acos();
    if theta < 1e-9 {
        return a * (1.0 - lambda) + b * lambda;
    }
    let s = theta.sin();
    a * (((1.0 - lambda) * theta).sin() / s) + b * ((lambda * theta).sin() / s)
}

/// Pinhole intrinsics. Lens distortion is not modelled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
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
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0 && self.cx < f64::from(self.width)) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "cx={} outside [0, {})",
                self.cx, self.width
            )));
        }
        if !(self.cy >= 0.0 && self.cy < f64::from(self.height)) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "cy={} outside [0, {})",
                self.cy, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Viewing ray `K⁻¹ (u, v, 1)ᵀ`, scaled so that its z component is 1.
    pub fn ray(&self, px: Pixel) -> Vector3<f64> {
        Vector3::new((px.u - self.cx) / self.fx, (px.v - self.cy) / self.fy, 1.0)
    }

    pub fn contains(&self, px: Pixel) -> bool {
        px.u >= 0.0
            && px.v >= 0.0
            && px.u <= f64::from(self.width) - 1.0
            && px.v <= f64::from(self.height) - 1.0
    }
}

/// Image position with sub-pixel precision. Pixel centers sit on integer
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &Pixel) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// The plane `n·p = b` with unit normal `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl Plane {
    /// Normalizes `normal` and scales `offset` with it.
    pub fn new(normal: Vector3<f64>, offset: f64) -> Result<Self, GeometryError> {
        let n = normal.norm();
        if !(n > 0.0 && n.is_finite() && offset.is_finite()) {
            return Err(GeometryError::DegeneratePlane);
        }
        Ok(Self {
            normal: normal / n,
            offset: offset / n,
        })
    }

    pub fn through_point(normal: Vector3<f64>, point: &Point3) -> Result<Self, GeometryError> {
        let n = normal.try_normalize(0.0).ok_or(GeometryError::DegeneratePlane)?;
        Self::new(n, n.dot(&point.coords))
    }

    /// Signed distance of `p` from the plane.
    pub fn signed_distance(&self, p: &Point3) -> f64 {
        self.normal.dot(&p.coords) - self.offset
    }
}

pub fn project(p: &Point3, k: &CameraIntrinsics) -> Result<Pixel, GeometryError> {
    if p.z <= 0.0 {
        return Err(GeometryError::BehindCamera(p.z));
    }
    Ok(Pixel::new(
        k.fx * p.x / p.z + k.cx,
        k.fy * p.y / p.z + k.cy,
    ))
}

/// Intersects the viewing ray of `px` with `plane` (camera frame).
///
/// The depth is `z = b / (nᵀ K⁻¹ p′)`, and the point is `z · K⁻¹ p′`.
pub fn backproject_to_plane(
    px: Pixel,
    k: &CameraIntrinsics,
    plane: &Plane,
) -> Result<Point3, GeometryError> {
    let ray = k.ray(px);
    let denom = plane.normal.dot(&ray);
    if denom.abs() <= RAY_EPSILON {
        return Err(GeometryError::RayParallelToPlane(denom));
    }
    let z = plane.offset / denom;
    if z <= 0.0 {
        return Err(GeometryError::PointBehindCamera(z));
    }
    Ok(Point3::from(ray * z))
}

/// Expresses `plane` in the frame that `t` maps into.
pub fn transform_plane(plane: &Plane, t: &RigidTransform) -> Plane {
    let normal = t.transform_vector(&plane.normal);
    Plane {
        normal,
        offset: plane.offset + normal.dot(t.translation()),
    }
}

/// Rotation angle between two rotation matrices, in radians.
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let r = a.transpose() * b;
    ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Rotation vector (axis × angle) of a rotation matrix.
pub fn log_so3(r: &Matrix3<f64>) -> Vector3<f64> {
    let rot = nalgebra::Rotation3::from_matrix_unchecked(*r);
    rot.scaled_axis()
}

/// Rotation matrix of a rotation vector.
pub fn exp_so3(w: &Vector3<f64>) -> Matrix3<f64> {
    nalgebra::Rotation3::new(*w).into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    const R: Handedness = Handedness::Right;
    const L: Handedness = Handedness::Left;

    fn unit_k() -> CameraIntrinsics {
        CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 1, 1).unwrap()
    }

    fn arb_transform(h: Handedness) -> impl Strategy<Value = RigidTransform> {
        (
            prop::array::uniform3(-1.0f64..1.0),
            0.0f64..3.1,
            prop::array::uniform3(-2.0f64..2.0),
        )
            .prop_filter("non-degenerate axis", |(a, _, _)| {
                Vector3::from(*a).norm() > 1e-3
            })
            .prop_map(move |(a, ang, t)| {
                RigidTransform::from_axis_angle(Vector3::from(a), ang, Vector3::from(t), h)
            })
    }

    fn matrix_close(a: &Matrix4<f64>, b: &Matrix4<f64>, tol: f64) -> bool {
        (a - b).abs().max() <= tol
    }

    #[test]
    fn identity_is_neutral() {
        let t = RigidTransform::from_axis_angle(
            Vector3::new(1.0, 2.0, 3.0),
            0.7,
            Vector3::new(0.1, -0.2, 0.3),
            R,
        );
        let i = RigidTransform::identity(R);
        assert!(i.compose(&t).unwrap().distance(&t) < 1e-15);
        assert!(t.compose(&i).unwrap().distance(&t) < 1e-15);
    }

    #[test]
    fn commuting_translations() {
        let a = RigidTransform::from_translation(Vector3::new(1.0, 0.0, 0.0), R);
        let b = RigidTransform::from_translation(Vector3::new(0.0, 2.0, 0.0), R);
        let c = a.compose(&b).unwrap();
        assert_eq!(c.translation_array(), [1.0, 2.0, 0.0]);
        assert!(c.rotation_angle() < 1e-15);
    }

    #[test]
    fn compose_rejects_mixed_handedness() {
        let err = RigidTransform::identity(R)
            .compose(&RigidTransform::identity(L))
            .unwrap_err();
        assert_eq!(err, GeometryError::HandednessMismatch(R, L));
    }

    #[test]
    fn invert_translation() {
        let t = RigidTransform::from_translation(Vector3::new(1.0, 2.0, 3.0), R);
        assert_eq!(t.inverse().translation_array(), [-1.0, -2.0, -3.0]);
        assert!(RigidTransform::identity(R).inverse().distance(&RigidTransform::identity(R)) == 0.0);
    }

    #[test]
    fn lh_to_rh_examples() {
        assert_eq!(
            RigidTransform::identity(L).lh_to_rh().unwrap(),
            RigidTransform::identity(R)
        );
        // Oracle: conjugate the 4x4 matrix by M = diag(1, 1, -1, 1).
        let m = Matrix4::from_diagonal(&nalgebra::Vector4::new(1.0, 1.0, -1.0, 1.0));
        let t = RigidTransform::from_translation(Vector3::new(0.3, -0.2, 0.7), L);
        let rh = t.lh_to_rh().unwrap();
        assert!(matrix_close(&rh.to_matrix(), &(m * t.to_matrix() * m), 1e-15));
        assert_eq!(rh.translation_array(), [0.3, -0.2, -0.7]);

        let rx = RigidTransform::from_axis_angle(Vector3::x(), FRAC_PI_2, Vector3::zeros(), L);
        let rh = rx.lh_to_rh().unwrap();
        let expected =
            RigidTransform::from_axis_angle(Vector3::x(), -FRAC_PI_2, Vector3::zeros(), R);
        assert!(rh.distance(&expected) < 1e-15);
        assert!(matrix_close(&rh.to_matrix(), &(m * rx.to_matrix() * m), 1e-15));
        assert_eq!(
            RigidTransform::identity(R).lh_to_rh().unwrap_err(),
            GeometryError::AlreadyRightHanded
        );
    }

    #[test]
    fn project_examples() {
        let k = unit_k();
        assert_eq!(project(&Point3::new(0.0, 0.0, 1.0), &k).unwrap(), Pixel::new(0.0, 0.0));
        assert_eq!(project(&Point3::new(1.0, 1.0, 1.0), &k).unwrap(), Pixel::new(1.0, 1.0));
        assert!(matches!(
            project(&Point3::new(0.0, 0.0, 0.0), &k),
            Err(GeometryError::BehindCamera(_))
        ));
    }

    #[test]
    fn backproject_examples() {
        let k = unit_k();
        let z2 = Plane::new(Vector3::z(), 2.0).unwrap();
        assert_eq!(
            backproject_to_plane(Pixel::new(0.0, 0.0), &k, &z2).unwrap(),
            Point3::new(0.0, 0.0, 2.0)
        );
        let z1 = Plane::new(Vector3::z(), 1.0).unwrap();
        assert_eq!(
            backproject_to_plane(Pixel::new(1.0, 1.0), &k, &z1).unwrap(),
            Point3::new(1.0, 1.0, 1.0)
        );
        let x1 = Plane::new(Vector3::x(), 1.0).unwrap();
        assert!(matches!(
            backproject_to_plane(Pixel::new(0.0, 0.0), &k, &x1),
            Err(GeometryError::RayParallelToPlane(_))
        ));
        let behind = Plane::new(Vector3::z(), -1.0).unwrap();
        assert!(matches!(
            backproject_to_plane(Pixel::new(0.0, 0.0), &k, &behind),
            Err(GeometryError::PointBehindCamera(_))
        ));
    }

    #[test]
    fn transform_plane_examples() {
        let p = Plane::new(Vector3::new(0.3, -0.4, 0.5), 0.2).unwrap();
        assert_eq!(transform_plane(&p, &RigidTransform::identity(R)), p);
        let z0 = Plane::new(Vector3::z(), 0.0).unwrap();
        let up = RigidTransform::from_translation(Vector3::new(0.0, 0.0, 1.0), R);
        let moved = transform_plane(&z0, &up);
        assert_eq!(moved.normal, Vector3::z());
        assert_eq!(moved.offset, 1.0);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0, 1, 1).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 10.0, 0.0, 10, 10).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 9.5, 9.5, 10, 10).is_ok());
    }

    #[test]
    fn interpolation_examples() {
        let a = RigidTransform::identity(R);
        let b = RigidTransform::from_translation(Vector3::new(1.0, 0.0, 0.0), R);
        assert_eq!(a.interpolate(&b, 0.5).unwrap().translation_array(), [0.5, 0.0, 0.0]);
        let c = RigidTransform::from_axis_angle(Vector3::z(), FRAC_PI_2, Vector3::zeros(), R);
        let mid = a.interpolate(&c, 0.5).unwrap();
        let expect =
            RigidTransform::from_axis_angle(Vector3::z(), FRAC_PI_2 / 2.0, Vector3::zeros(), R);
        assert!(mid.distance(&expect) < 1e-9);
        assert_eq!(a.interpolate(&c, 0.0).unwrap(), a);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn inverse_composes_to_identity(t in arb_transform(R)) {
            let i = t.compose(&t.inverse()).unwrap();
            prop_assert!(matrix_close(&i.to_matrix(), &Matrix4::identity(), 1e-12));
            // Oracle: the 4x4 matrix inverse.
            let inv = t.to_matrix().try_inverse().unwrap();
            prop_assert!(matrix_close(&t.inverse().to_matrix(), &inv, 1e-12));
        }

        #[test]
        fn compose_is_associative(a in arb_transform(R), b in arb_transform(R), c in arb_transform(R)) {
            let ab_c = a.compose(&b).unwrap().compose(&c).unwrap();
            let a_bc = a.compose(&b.compose(&c).unwrap()).unwrap();
            prop_assert!(matrix_close(&ab_c.to_matrix(), &a_bc.to_matrix(), 1e-12));
        }

        #[test]
        fn rotation_stays_proper(a in arb_transform(L)) {
            let rh = a.lh_to_rh().unwrap();
            prop_assert!((rh.rotation_matrix().determinant() - 1.0).abs() < 1e-9);
            prop_assert!((rh.rotation().quaternion().norm() - 1.0).abs() < 1e-9);
            prop_assert!(rh.rotation().w >= 0.0);
        }

        #[test]
        fn handedness_round_trip_is_exact(a in arb_transform(L)) {
            let back = a.lh_to_rh().unwrap().rh_to_lh().unwrap();
            prop_assert!(matrix_close(&back.to_matrix(), &a.to_matrix(), 1e-12));
        }

        #[test]
        fn handedness_conversion_is_isometric(
            a in arb_transform(L),
            p in prop::array::uniform3(-1.0f64..1.0),
            q in prop::array::uniform3(-1.0f64..1.0),
        ) {
            let (p, q) = (Point3::from(p), Point3::from(q));
            let d = MIRROR_AXIS.mirror_diagonal();
            let mirror = |x: &Point3| Point3::from(x.coords.component_mul(&d));
            let rh = a.lh_to_rh().unwrap();
            let pa = a.transform_point(&p);
            let qa = a.transform_point(&q);
            let pr = rh.transform_point(&mirror(&p));
            let qr = rh.transform_point(&mirror(&q));
            prop_assert!(((pa - qa).norm() - (pr - qr).norm()).abs() < 1e-12);
            // The converted transform acts on mirrored points exactly as the original.
            prop_assert!((mirror(&pa) - pr).norm() < 1e-12);
        }

        #[test]
        fn backprojection_round_trip(
            u in 0.0f64..640.0, v in 0.0f64..480.0,
            n in prop::array::uniform3(-1.0f64..1.0),
            b in 0.05f64..2.0,
        ) {
            let k = CameraIntrinsics::new(500.0, 480.0, 320.0, 240.0, 640, 480).unwrap();
            let plane = match Plane::new(Vector3::from(n), b) { Ok(p) => p, Err(_) => return Ok(()) };
            let px = Pixel::new(u, v);
            match backproject_to_plane(px, &k, &plane) {
                Ok(p) => {
                    prop_assert!(plane.signed_distance(&p).abs() <= 1e-9);
                    let back = project(&p, &k).unwrap();
                    prop_assert!(back.distance(&px) <= 1e-9);
                }
                Err(GeometryError::RayParallelToPlane(_)) | Err(GeometryError::PointBehindCamera(_)) => {}
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }

        #[test]
        fn transformed_plane_keeps_mapped_points(
            t in arb_transform(R),
            n in prop::array::uniform3(-1.0f64..1.0),
            b in -1.0f64..1.0,
            seeds in prop::collection::vec(prop::array::uniform2(-1.0f64..1.0), 100),
        ) {
            let plane = match Plane::new(Vector3::from(n), b) { Ok(p) => p, Err(_) => return Ok(()) };
            let moved = transform_plane(&plane, &t);
            // Oracle: sample points on the original plane, map them, test the new equation.
            let base = plane.normal * plane.offset;
            let e1 = plane.normal.cross(&Vector3::new(0.3, 0.5, 0.8)).normalize();
            let e2 = plane.normal.cross(&e1);
            for s in seeds {
                let p = Point3::from(base + e1 * s[0] + e2 * s[1]);
                prop_assert!(plane.signed_distance(&p).abs() < 1e-12);
                prop_assert!(moved.signed_distance(&t.transform_point(&p)).abs() <= 1e-9);
            }
        }

        #[test]
        fn interpolation_is_time_symmetric(a in arb_transform(R), b in arb_transform(R), l in 0.0f64..1.0) {
            let x = a.interpolate(&b, l).unwrap();
            let y = b.interpolate(&a, 1.0 - l).unwrap();
            prop_assert!(matrix_close(&x.to_matrix(), &y.to_matrix(), 1e-12));
            prop_assert!((x.rotation().quaternion().norm() - 1.0).abs() < 1e-12);
        }
    }
}
