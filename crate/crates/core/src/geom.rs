//! Small vector helpers on top of `glam`'s double-precision types.

pub use glam::{DQuat, DVec3};

/// Local forward axis of a viewpoint (right-handed, looking down -Z).
pub const FORWARD: DVec3 = DVec3::NEG_Z;
/// Local up axis of a viewpoint.
pub const UP: DVec3 = DVec3::Y;

pub fn is_finite(v: DVec3) -> bool {
    v.x.is_finite() && v.y.is_finite() && v.z.is_finite()
}

/// Unsigned angle between two nonzero vectors in `[0, pi]`.
///
/// Uses `atan2(|a x b|, a . b)`, which stays accurate near 0 and pi where
/// `acos` loses precision.
pub fn angle_between(a: DVec3, b: DVec3) -> f64 {
    a.cross(b).length().atan2(a.dot(b))
}

/// Rodrigues rotation of `v` about the unit `axis` by `angle` radians.
pub fn rotate_about(v: DVec3, axis: DVec3, angle: f64) -> DVec3 {
    let (s, c) = angle.sin_cos();
    v * c + axis.cross(v) * s + axis * axis.dot(v) * (1.0 - c)
}

/// Quaternion is unit-norm within `tol`.
pub fn quat_is_unit(q: DQuat, tol: f64) -> bool {
    (q.length() - 1.0).abs() <= tol
}
