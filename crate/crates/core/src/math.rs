//! Small vector and rotation helpers shared by the geometry modules.

use nalgebra::{Unit, UnitQuaternion, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Quat = UnitQuaternion<f64>;

/// A unit vector orthogonal to `v`, chosen deterministically.
pub fn any_perpendicular(v: &Vec3) -> Vec3 {
    let axis = if v.x.abs() <= v.y.abs() && v.x.abs() <= v.z.abs() {
        Vec3::x()
    } else if v.y.abs() <= v.z.abs() {
        Vec3::y()
    } else {
        Vec3::z()
    };
    v.cross(&axis).normalize()
}

/// Minimal rotation taking direction `from` onto direction `to`.
///
/// Both inputs must be non-zero. Antiparallel inputs rotate by pi about a
/// deterministic perpendicular axis.
pub fn shortest_arc(from: &Vec3, to: &Vec3) -> Quat {
    let a = from.normalize();
    let b = to.normalize();
    let d = a.dot(&b);
    if d < -1.0 + 1e-12 {
        let axis = Unit::new_normalize(any_perpendicular(&a));
        return Quat::from_axis_angle(&axis, std::f64::consts::PI);
    }
    // Half-angle construction, stable near the identity.
    let c = a.cross(&b);
    let q = nalgebra::Quaternion::new(1.0 + d, c.x, c.y, c.z);
    Quat::new_normalize(q)
}

/// Horizontal (XZ-plane) component of `v`.
pub fn horizontal(v: &Vec3) -> Vec3 {
    Vec3::new(v.x, 0.0, v.z)
}

pub fn quat_to_array(q: &Quat) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

pub fn quat_from_array(a: [f64; 4]) -> nalgebra::Quaternion<f64> {
    nalgebra::Quaternion::new(a[0], a[1], a[2], a[3])
}

/// Angle in radians between two rotations.
pub fn angle_between(a: &Quat, b: &Quat) -> f64 {
    a.angle_to(b)
}
