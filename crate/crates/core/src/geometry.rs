//! Distance and intersection primitives shared by the collision and
//! occlusion queries.

use nalgebra::Vector3;

pub type Vec3 = Vector3<f64>;

/// Closest point on triangle `(a, b, c)` to `p` (Ericson, region tests).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Minimum distance between segments `p1-q1` and `p2-q2`.
pub fn segment_segment_distance(p1: &Vec3, q1: &Vec3, p2: &Vec3, q2: &Vec3) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    let eps = 1e-18;
    let (s, t);
    if a <= eps && e <= eps {
        return r.norm();
    }
    if a <= eps {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= eps {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > eps * a * e { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    let c1 = p1 + d1 * s;
    let c2 = p2 + d2 * t;
    (c1 - c2).norm()
}

/// Parameter `t` in `[0, 1]` at which segment `origin + t * dir` crosses the
/// triangle, if it does (Möller–Trumbore, both faces).
pub fn segment_triangle_hit(origin: &Vec3, dir: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let tvec = origin - a;
    let u = tvec.dot(&pvec) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&qvec) * inv;
    if (0.0..=1.0).contains(&t) {
        Some(t)
    } else {
        None
    }
}

/// Minimum distance between segment `p-q` and triangle `(a, b, c)`.
pub fn segment_triangle_distance(p: &Vec3, q: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    if segment_triangle_hit(p, &(q - p), a, b, c).is_some() {
        return 0.0;
    }
    let mut best = (p - closest_point_on_triangle(p, a, b, c)).norm();
    best = best.min((q - closest_point_on_triangle(q, a, b, c)).norm());
    best = best.min(segment_segment_distance(p, q, a, b));
    best = best.min(segment_segment_distance(p, q, b, c));
    best = best.min(segment_segment_distance(p, q, c, a));
    best
}

/// Distance from point `p` to segment `a-b`.
pub fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(&ab);
    if len2 <= 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Centroid and bounding radius of a triangle, used for culling.
pub fn triangle_bounds(a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, f64) {
    let centroid = (a + b + c) / 3.0;
    let r = (a - centroid).norm().max((b - centroid).norm()).max((c - centroid).norm());
    (centroid, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    /// Dense sampling oracle for segment-triangle distance.
    fn brute_distance(p: &Vec3, q: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
        let n = 60;
        let mut best = f64::INFINITY;
        for i in 0..=n {
            let s = p + (q - p) * (i as f64 / n as f64);
            best = best.min((s - closest_point_on_triangle(&s, a, b, c)).norm());
        }
        best
    }

    #[test]
    fn closest_point_regions() {
        let (a, b, c) = (v(0., 0., 0.), v(1., 0., 0.), v(0., 1., 0.));
        assert!((closest_point_on_triangle(&v(0.2, 0.2, 5.0), &a, &b, &c) - v(0.2, 0.2, 0.0)).norm() < 1e-15);
        assert_eq!(closest_point_on_triangle(&v(-1., -1., 0.), &a, &b, &c), a);
        assert_eq!(closest_point_on_triangle(&v(2., -0.5, 0.), &a, &b, &c), b);
    }

    #[test]
    fn tangent_segment_distance_is_exact() {
        let (a, b, c) = (v(0., 0., 0.), v(10., 0., 0.), v(0., 10., 0.));
        let d = segment_triangle_distance(&v(-5., 2., 3.), &v(5., 2., 3.), &a, &b, &c);
        assert!((d - 3.0).abs() < 1e-12);
    }

    #[test]
    fn piercing_segment_has_zero_distance() {
        let (a, b, c) = (v(0., 0., 0.), v(10., 0., 0.), v(0., 10., 0.));
        assert_eq!(segment_triangle_distance(&v(2., 2., -3.), &v(2., 2., 3.), &a, &b, &c), 0.0);
    }

    proptest! {
        #[test]
        fn segment_triangle_distance_upper_bounded_by_samples(
            pts in proptest::collection::vec(-10.0..10.0f64, 15)
        ) {
            let p = v(pts[0], pts[1], pts[2]);
            let q = v(pts[3], pts[4], pts[5]);
            let a = v(pts[6], pts[7], pts[8]);
            let b = v(pts[9], pts[10], pts[11]);
            let c = v(pts[12], pts[13], pts[14]);
            let d = segment_triangle_distance(&p, &q, &a, &b, &c);
            let brute = brute_distance(&p, &q, &a, &b, &c);
            prop_assert!(d <= brute + 1e-9);
            // sampling step is |q-p|/60, so the oracle overshoots by at most half of it
            prop_assert!(brute - d <= (q - p).norm() / 120.0 + 1e-9);
        }

        #[test]
        fn segment_segment_symmetric(pts in proptest::collection::vec(-10.0..10.0f64, 12)) {
            let p1 = v(pts[0], pts[1], pts[2]);
            let q1 = v(pts[3], pts[4], pts[5]);
            let p2 = v(pts[6], pts[7], pts[8]);
            let q2 = v(pts[9], pts[10], pts[11]);
            let d1 = segment_segment_distance(&p1, &q1, &p2, &q2);
            let d2 = segment_segment_distance(&p2, &q2, &p1, &q1);
            prop_assert!((d1 - d2).abs() < 1e-9);
        }
    }
}
