//! Exact orientation and in-sphere predicates plus tetrahedron quality measures.
//!
//! Sign convention: `orient3d(a, b, c, d)` is positive when `d` lies on the side
//! of plane `abc` that the right-handed normal `(b - a) x (c - a)` points to.
//! Topology decisions go through adaptive-precision arithmetic; circumcenters
//! and angles are plain floating point.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Sub};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("non-finite coordinate in predicate input")]
    NonFinite,
    #[error("degenerate tetrahedron")]
    Degenerate,
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn dot(self, o: Point3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Point3) -> Point3 {
        Point3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm2(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm2().sqrt()
    }

    pub fn dist2(self, o: Point3) -> f64 {
        (self - o).norm2()
    }

    pub fn axis(&self, i: usize) -> f64 {
        match i {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    pub fn with_axis(mut self, i: usize, v: f64) -> Point3 {
        match i {
            0 => self.x = v,
            1 => self.y = v,
            _ => self.z = v,
        }
        self
    }

    pub fn component_min(self, o: Point3) -> Point3 {
        Point3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn component_max(self, o: Point3) -> Point3 {
        Point3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    fn robust(self) -> robust::Coord3D<f64> {
        robust::Coord3D {
            x: self.x,
            y: self.y,
            z: self.z,
        }
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min: Point3,
    pub max: Point3,
}

impl BBox {
    pub fn new(min: Point3, max: Point3) -> Self {
        BBox { min, max }
    }

    pub fn extent(&self) -> Point3 {
        self.max - self.min
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn contains(&self, p: Point3) -> bool {
        (0..3).all(|i| p.axis(i) >= self.min.axis(i) && p.axis(i) <= self.max.axis(i))
    }

    /// Euclidean projection onto the box.
    pub fn clamp(&self, p: Point3) -> Point3 {
        Point3::new(
            p.x.clamp(self.min.x, self.max.x),
            p.y.clamp(self.min.y, self.max.y),
            p.z.clamp(self.min.z, self.max.z),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Orientation {
    Positive,
    Negative,
    Degenerate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SphereSide {
    Inside,
    Outside,
    Cospherical,
}

fn check_finite(pts: &[Point3]) -> Result<(), GeomError> {
    if pts.iter().all(Point3::is_finite) {
        Ok(())
    } else {
        Err(GeomError::NonFinite)
    }
}

/// Raw determinant with our sign convention. Exact in sign.
#[inline]
pub(crate) fn orient3d_raw(a: Point3, b: Point3, c: Point3, d: Point3) -> f64 {
    // robust's orient3d is positive when d is below the counterclockwise plane abc.
    -robust::orient3d(a.robust(), b.robust(), c.robust(), d.robust())
}

/// In-sphere value for a positively oriented `abcd`: positive means `e` is inside.
#[inline]
pub(crate) fn insphere_raw(a: Point3, b: Point3, c: Point3, d: Point3, e: Point3) -> f64 {
    // robust expects Shewchuk's orientation, which is the mirror of ours; swapping
    // a and b restores it without touching the sphere.
    robust::insphere(b.robust(), a.robust(), c.robust(), d.robust(), e.robust())
}

pub fn orient3d(a: Point3, b: Point3, c: Point3, d: Point3) -> Result<Orientation, GeomError> {
    check_finite(&[a, b, c, d])?;
    Ok(sign_to_orientation(orient3d_raw(a, b, c, d)))
}

#[inline]
pub(crate) fn sign_to_orientation(v: f64) -> Orientation {
    if v > 0.0 {
        Orientation::Positive
    } else if v < 0.0 {
        Orientation::Negative
    } else {
        Orientation::Degenerate
    }
}

/// Exact test of `e` against the circumsphere of the positively oriented tet `abcd`.
pub fn insphere(a: Point3, b: Point3, c: Point3, d: Point3, e: Point3) -> Result<SphereSide, GeomError> {
    check_finite(&[a, b, c, d, e])?;
    if orient3d_raw(a, b, c, d) <= 0.0 {
        return Err(GeomError::Degenerate);
    }
    Ok(sphere_side(insphere_raw(a, b, c, d, e)))
}

#[inline]
pub(crate) fn sphere_side(v: f64) -> SphereSide {
    if v > 0.0 {
        SphereSide::Inside
    } else if v < 0.0 {
        SphereSide::Outside
    } else {
        SphereSide::Cospherical
    }
}

/// Circumcenter in floating point. Returns `None` when the float determinant vanishes.
pub fn circumcenter(t: &[Point3; 4]) -> Option<Point3> {
    let a = t[0];
    let b = t[1] - a;
    let c = t[2] - a;
    let d = t[3] - a;
    let cd = c.cross(d);
    let denom = 2.0 * b.dot(cd);
    if denom == 0.0 || !denom.is_finite() {
        return None;
    }
    let num = cd * b.norm2() + d.cross(b) * c.norm2() + b.cross(c) * d.norm2();
    let off = num * (1.0 / denom);
    let cc = a + off;
    cc.is_finite().then_some(cc)
}

/// Circumcenter of a triangle, in its plane.
pub fn triangle_circumcenter(a: Point3, b: Point3, c: Point3) -> Option<Point3> {
    let u = b - a;
    let v = c - a;
    let n = u.cross(v);
    let denom = 2.0 * n.norm2();
    if denom == 0.0 || !denom.is_finite() {
        return None;
    }
    let off = (v.cross(n) * u.norm2() + n.cross(u) * v.norm2()) * (1.0 / denom);
    let cc = a + off;
    cc.is_finite().then_some(cc)
}

/// Signed area test in the coordinate plane that drops `axis`.
pub(crate) fn orient2d_raw(axis: usize, a: Point3, b: Point3, c: Point3) -> f64 {
    let (i, j) = ((axis + 1) % 3, (axis + 2) % 3);
    let q = |p: Point3| robust::Coord {
        x: p.axis(i),
        y: p.axis(j),
    };
    robust::orient2d(q(a), q(b), q(c))
}

pub fn barycenter(t: &[Point3; 4]) -> Point3 {
    (t[0] + t[1] + t[2] + t[3]) * 0.25
}

/// Local vertex pairs of the six edges.
pub const TET_EDGES: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityVector {
    /// Dihedral angles in degrees, one per entry of [`TET_EDGES`].
    pub dihedrals: [f64; 6],
    pub radius_edge: f64,
    pub circumradius: f64,
    pub circumcenter: Point3,
}

impl QualityVector {
    pub fn min_dihedral(&self) -> f64 {
        self.dihedrals.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_dihedral(&self) -> f64 {
        self.dihedrals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Circumradius and shortest edge, the two numbers refinement needs.
#[derive(Clone, Copy, Debug)]
pub struct SizeMeasure {
    pub circumcenter: Option<Point3>,
    pub circumradius: f64,
    pub shortest_edge: f64,
}

impl SizeMeasure {
    pub fn radius_edge(&self) -> f64 {
        self.circumradius / self.shortest_edge
    }
}

pub fn size_measure(t: &[Point3; 4]) -> SizeMeasure {
    let cc = circumcenter(t);
    let circumradius = match cc {
        Some(c) => c.dist2(t[0]).sqrt(),
        None => f64::INFINITY,
    };
    let shortest_edge = TET_EDGES
        .iter()
        .map(|&(i, j)| t[i].dist2(t[j]))
        .fold(f64::INFINITY, f64::min)
        .sqrt();
    SizeMeasure {
        circumcenter: cc,
        circumradius,
        shortest_edge,
    }
}

/// Dihedral angles, radius-edge ratio and circumradius of a tetrahedron.
pub fn quality(t: &[Point3; 4]) -> Result<QualityVector, GeomError> {
    check_finite(t)?;
    if orient3d_raw(t[0], t[1], t[2], t[3]) == 0.0 {
        return Err(GeomError::Degenerate);
    }
    let sm = size_measure(t);
    let circumcenter = sm.circumcenter.ok_or(GeomError::Degenerate)?;

    // Face k is opposite vertex k; its normal is oriented away from vertex k.
    let mut normals = [Point3::default(); 4];
    for (k, n) in normals.iter_mut().enumerate() {
        let f: Vec<Point3> = (0..4).filter(|&i| i != k).map(|i| t[i]).collect();
        let mut nk = (f[1] - f[0]).cross(f[2] - f[0]);
        if nk.dot(t[k] - f[0]) > 0.0 {
            nk = nk * -1.0;
        }
        let len = nk.norm();
        if len == 0.0 {
            return Err(GeomError::Degenerate);
        }
        *n = nk * (1.0 / len);
    }
    let mut dihedrals = [0.0; 6];
    for (e, &(i, j)) in TET_EDGES.iter().enumerate() {
        // The two faces sharing edge ij are the ones opposite the other two vertices.
        let (k, l) = other_two(i, j);
        let cos = -normals[k].dot(normals[l]);
        dihedrals[e] = cos.clamp(-1.0, 1.0).acos().to_degrees();
    }
    Ok(QualityVector {
        dihedrals,
        radius_edge: sm.radius_edge(),
        circumradius: sm.circumradius,
        circumcenter,
    })
}

fn other_two(i: usize, j: usize) -> (usize, usize) {
    let mut rest = (0..4).filter(|&m| m != i && m != j);
    (rest.next().unwrap(), rest.next().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    const O: Point3 = Point3::new(0.0, 0.0, 0.0);
    const X: Point3 = Point3::new(1.0, 0.0, 0.0);
    const Y: Point3 = Point3::new(0.0, 1.0, 0.0);
    const Z: Point3 = Point3::new(0.0, 0.0, 1.0);

    #[test]
    fn orient_examples() {
        assert_eq!(orient3d(O, X, Y, Z).unwrap(), Orientation::Positive);
        assert_eq!(
            orient3d(O, X, Y, Point3::new(0.0, 0.0, -1.0)).unwrap(),
            Orientation::Negative
        );
        assert_eq!(
            orient3d(O, X, Y, Point3::new(2.0, 3.0, 0.0)).unwrap(),
            Orientation::Degenerate
        );
        assert_eq!(
            orient3d(O, X, Y, Point3::new(f64::NAN, 0.0, 0.0)),
            Err(GeomError::NonFinite)
        );
    }

    #[test]
    fn insphere_examples() {
        let c = Point3::new(0.25, 0.25, 0.25);
        assert_eq!(insphere(O, X, Y, Z, c).unwrap(), SphereSide::Inside);
        let far = Point3::new(10.0, 10.0, 10.0);
        assert_eq!(insphere(O, X, Y, Z, far).unwrap(), SphereSide::Outside);
        // center (0.5,0.5,0.5), r^2 = 0.75; |(1,1,1) - center|^2 = 0.75
        let on = Point3::new(1.0, 1.0, 1.0);
        assert_eq!(insphere(O, X, Y, Z, on).unwrap(), SphereSide::Cospherical);
        assert_eq!(insphere(O, Y, X, Z, c), Err(GeomError::Degenerate));
    }

    #[test]
    fn regular_tet_quality() {
        let t = [
            Point3::new(1.0, 1.0, 1.0),
            Point3::new(1.0, -1.0, -1.0),
            Point3::new(-1.0, 1.0, -1.0),
            Point3::new(-1.0, -1.0, 1.0),
        ];
        let t = if orient3d(t[0], t[1], t[2], t[3]).unwrap() == Orientation::Positive {
            t
        } else {
            [t[1], t[0], t[2], t[3]]
        };
        // edge length 2*sqrt(2); scale to unit edge
        let s = 1.0 / (2.0 * 2f64.sqrt());
        let t = t.map(|p| p * s);
        let q = quality(&t).unwrap();
        let expected = (1.0f64 / 3.0).acos().to_degrees();
        for d in q.dihedrals {
            assert!((d - expected).abs() < 1e-9, "{d}");
        }
        assert!((q.radius_edge - 6f64.sqrt() / 4.0).abs() < 1e-12);
    }

    #[test]
    fn corner_tet_has_three_right_angles() {
        let q = quality(&[O, X, Y, Z]).unwrap();
        let right = q.dihedrals.iter().filter(|d| (**d - 90.0).abs() < 1e-9).count();
        assert_eq!(right, 3);
        assert!((q.circumcenter.x - 0.5).abs() < 1e-15);
    }

    #[test]
    fn flat_tet_rejected() {
        assert_eq!(
            quality(&[O, X, Y, Point3::new(0.3, 0.3, 0.0)]),
            Err(GeomError::Degenerate)
        );
    }
}
