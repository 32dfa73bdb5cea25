//! Small 3D helpers on top of `nalgebra`.

use nalgebra::Vector3;
use num_complex::Complex64;

pub type Vec3 = Vector3<f64>;
pub type Point3 = Vector3<f64>;
/// Complex 3-vector, used for gradients of complex fields.
pub type CVec3 = Vector3<Complex64>;

pub fn to_complex(v: &Vec3) -> CVec3 {
    CVec3::new(v.x.into(), v.y.into(), v.z.into())
}

/// Bilinear (non-conjugating) dot product of two complex vectors.
pub fn cdot(a: &CVec3, b: &CVec3) -> Complex64 {
    a.x * b.x + a.y * b.y + a.z * b.z
}

/// Axis-aligned bounding box of a set of points.
pub fn bounding_box<'a>(points: impl IntoIterator<Item = &'a Point3>) -> (Point3, Point3) {
    let mut lo = Point3::repeat(f64::INFINITY);
    let mut hi = Point3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}
