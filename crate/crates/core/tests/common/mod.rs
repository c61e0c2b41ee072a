//! Exact rational geometry, independent of the library's predicates.
#![allow(dead_code)]

use meshpdr::geom::Point3;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use std::cmp::Ordering;

pub type Q = BigRational;

pub fn q(x: f64) -> Q {
    BigRational::from_float(x).expect("finite coordinate")
}

pub fn qp(p: Point3) -> [Q; 3] {
    [q(p.x), q(p.y), q(p.z)]
}

fn sub(a: &[Q; 3], b: &[Q; 3]) -> [Q; 3] {
    [&a[0] - &b[0], &a[1] - &b[1], &a[2] - &b[2]]
}

fn det3(r: [&[Q; 3]; 3]) -> Q {
    &r[0][0] * (&r[1][1] * &r[2][2] - &r[1][2] * &r[2][1]) - &r[0][1] * (&r[1][0] * &r[2][2] - &r[1][2] * &r[2][0])
        + &r[0][2] * (&r[1][0] * &r[2][1] - &r[1][1] * &r[2][0])
}

fn sign(x: &Q) -> Ordering {
    if x.is_zero() {
        Ordering::Equal
    } else if x.is_positive() {
        Ordering::Greater
    } else {
        Ordering::Less
    }
}

/// Sign of det[b-a, c-a, d-a]; `Greater` for a right-handed tet.
pub fn orient_exact(a: Point3, b: Point3, c: Point3, d: Point3) -> Ordering {
    let a = qp(a);
    sign(&det3([&sub(&qp(b), &a), &sub(&qp(c), &a), &sub(&qp(d), &a)]))
}

/// Circumcenter by Cramer's rule on 2(p_i - p_0)·x = |p_i|² - |p_0|².
pub fn circumcenter_exact(t: &[Point3; 4]) -> Option<[Q; 3]> {
    let p: Vec<[Q; 3]> = t.iter().map(|&x| qp(x)).collect();
    let two = Q::from_integer(BigInt::from(2));
    let n2 = |v: &[Q; 3]| &v[0] * &v[0] + &v[1] * &v[1] + &v[2] * &v[2];
    let rows: Vec<[Q; 3]> = (1..4)
        .map(|i| {
            let d = sub(&p[i], &p[0]);
            [&two * &d[0], &two * &d[1], &two * &d[2]]
        })
        .collect();
    let rhs: Vec<Q> = (1..4).map(|i| n2(&p[i]) - n2(&p[0])).collect();
    let det = det3([&rows[0], &rows[1], &rows[2]]);
    if det.is_zero() {
        return None;
    }
    let mut out: [Q; 3] = [Q::zero(), Q::zero(), Q::zero()];
    for (col, o) in out.iter_mut().enumerate() {
        let mut m = rows.clone();
        for r in 0..3 {
            m[r][col] = rhs[r].clone();
        }
        *o = det3([&m[0], &m[1], &m[2]]) / &det;
    }
    Some(out)
}

pub fn dist2_exact(a: &[Q; 3], b: &[Q; 3]) -> Q {
    let d = sub(a, b);
    &d[0] * &d[0] + &d[1] * &d[1] + &d[2] * &d[2]
}

/// `Greater` when `e` is strictly inside the circumsphere of `t`, `Equal` when on it.
pub fn insphere_exact(t: &[Point3; 4], e: Point3) -> Ordering {
    let c = circumcenter_exact(t).expect("non-degenerate tet");
    let r2 = dist2_exact(&c, &qp(t[0]));
    r2.cmp(&dist2_exact(&c, &qp(e)))
}

/// Same test against a precomputed exact centre and squared radius.
pub fn inside_sphere(center: &[Q; 3], r2: &Q, e: Point3) -> bool {
    dist2_exact(center, &qp(e)) < *r2
}

/// Exact circumsphere with a float shadow for quick rejection.
pub struct ExactSphere {
    center: [Q; 3],
    r2: Q,
    fc: Point3,
    fr2: f64,
}

impl ExactSphere {
    pub fn new(t: &[Point3; 4]) -> Self {
        use num_traits::ToPrimitive;
        let center = circumcenter_exact(t).expect("non-degenerate tet");
        let r2 = dist2_exact(&center, &qp(t[0]));
        let fc = Point3::new(
            center[0].to_f64().unwrap(),
            center[1].to_f64().unwrap(),
            center[2].to_f64().unwrap(),
        );
        let fr2 = r2.to_f64().unwrap();
        ExactSphere { center, r2, fc, fr2 }
    }

    /// Float shadow of the centre and squared radius.
    pub fn approx(&self) -> (Point3, f64) {
        (self.fc, self.fr2)
    }

    /// Strictly inside. Decided in floats only when far from the sphere.
    pub fn contains(&self, e: Point3) -> bool {
        let d2 = self.fc.dist2(e);
        if (d2 - self.fr2).abs() > 1e-6 * self.fr2.max(d2) {
            return d2 < self.fr2;
        }
        inside_sphere(&self.center, &self.r2, e)
    }
}
