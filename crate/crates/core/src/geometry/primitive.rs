use nalgebra::{Isometry3, Rotation3, Unit, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Convex collision primitive in world coordinates (metres).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Sphere {
        center: Vector3<f64>,
        radius: f64,
    },
    /// Segment `a`–`b` swept by a ball of `radius`.
    Capsule {
        a: Vector3<f64>,
        b: Vector3<f64>,
        radius: f64,
    },
    /// Oriented box; `rotation` maps box-frame vectors to world.
    Box {
        center: Vector3<f64>,
        half_extents: Vector3<f64>,
        #[serde(default = "Rotation3::identity")]
        rotation: Rotation3<f64>,
    },
    /// Vertical extrusion of a convex counter-clockwise polygon between
    /// `z_min` and `z_max`.
    Prism {
        polygon: Vec<Vector2<f64>>,
        z_min: f64,
        z_max: f64,
    },
}

/// Result of a distance query between two primitives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proximity {
    /// Signed distance: positive separation, negative penetration.
    pub distance: f64,
    /// Witness point on the first primitive.
    pub point_a: Vector3<f64>,
    /// Witness point on the second primitive.
    pub point_b: Vector3<f64>,
    /// Unit direction from the first primitive toward the second. Moving the
    /// first primitive by `δ` changes the distance by `−normal·δ` to first order.
    pub normal: Vector3<f64>,
}

impl Proximity {
    fn swapped(self) -> Self {
        Proximity {
            distance: self.distance,
            point_a: self.point_b,
            point_b: self.point_a,
            normal: -self.normal,
        }
    }
}

impl Primitive {
    pub fn sphere(center: Vector3<f64>, radius: f64) -> Self {
        Primitive::Sphere { center, radius }
    }

    pub fn capsule(a: Vector3<f64>, b: Vector3<f64>, radius: f64) -> Self {
        Primitive::Capsule { a, b, radius }
    }

    pub fn cuboid(center: Vector3<f64>, half_extents: Vector3<f64>, rotation: Rotation3<f64>) -> Self {
        Primitive::Box {
            center,
            half_extents,
            rotation,
        }
    }

    pub fn aabb(center: Vector3<f64>, half_extents: Vector3<f64>) -> Self {
        Self::cuboid(center, half_extents, Rotation3::identity())
    }

    pub fn prism(polygon: Vec<Vector2<f64>>, z_min: f64, z_max: f64) -> Self {
        Primitive::Prism { polygon, z_min, z_max }
    }

    /// Checks radii, extents, rotation properness and prism convexity.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: &str| Err(GeometryError::InvalidPrimitive(m.to_string()));
        match self {
            Primitive::Sphere { radius, .. } | Primitive::Capsule { radius, .. } => {
                if !(*radius > 0.0) {
                    return bad("radius must be positive");
                }
            }
            Primitive::Box {
                half_extents, rotation, ..
            } => {
                if !half_extents.iter().all(|h| *h > 0.0) {
                    return bad("half extents must be positive");
                }
                let m = rotation.matrix();
                let ortho = (m.transpose() * m - nalgebra::Matrix3::identity()).abs().max();
                if ortho > 1e-9 || (m.determinant() - 1.0).abs() > 1e-9 {
                    return bad("box orientation is not a proper rotation");
                }
            }
            Primitive::Prism { polygon, z_min, z_max } => {
                if !(z_max > z_min) {
                    return bad("prism needs z_max > z_min");
                }
                if polygon.len() < 3 {
                    return bad("prism polygon needs at least three vertices");
                }
                let n = polygon.len();
                for i in 0..n {
                    let (p0, p1, p2) = (polygon[i], polygon[(i + 1) % n], polygon[(i + 2) % n]);
                    let e0 = p1 - p0;
                    let e1 = p2 - p1;
                    if e0.x * e1.y - e0.y * e1.x <= 0.0 {
                        return bad("prism polygon must be convex and counter-clockwise");
                    }
                }
            }
        }
        Ok(())
    }

    /// Applies a rigid transform. Prisms are vertical extrusions, so only the
    /// translation and the heading of the rotation are applied to them.
    pub fn transformed(&self, iso: &Isometry3<f64>) -> Self {
        match self {
            Primitive::Sphere { center, radius } => Primitive::Sphere {
                center: (iso * nalgebra::Point3::from(*center)).coords,
                radius: *radius,
            },
            Primitive::Capsule { a, b, radius } => Primitive::Capsule {
                a: (iso * nalgebra::Point3::from(*a)).coords,
                b: (iso * nalgebra::Point3::from(*b)).coords,
                radius: *radius,
            },
            Primitive::Box {
                center,
                half_extents,
                rotation,
            } => Primitive::Box {
                center: (iso * nalgebra::Point3::from(*center)).coords,
                half_extents: *half_extents,
                rotation: iso.rotation.to_rotation_matrix() * rotation,
            },
            Primitive::Prism { polygon, z_min, z_max } => {
                let yaw = iso.rotation.euler_angles().2;
                let (s, c) = yaw.sin_cos();
                let t = iso.translation.vector;
                Primitive::Prism {
                    polygon: polygon
                        .iter()
                        .map(|p| Vector2::new(c * p.x - s * p.y + t.x, s * p.x + c * p.y + t.y))
                        .collect(),
                    z_min: z_min + t.z,
                    z_max: z_max + t.z,
                }
            }
        }
    }

    pub fn translated(&self, d: &Vector3<f64>) -> Self {
        self.transformed(&Isometry3::from_parts(
            nalgebra::Translation3::from(*d),
            UnitQuaternion::identity(),
        ))
    }

    /// Centre and radius of a ball enclosing the primitive.
    pub fn bounding_sphere(&self) -> (Vector3<f64>, f64) {
        match self {
            Primitive::Sphere { center, radius } => (*center, *radius),
            Primitive::Capsule { a, b, radius } => ((a + b) * 0.5, (b - a).norm() * 0.5 + radius),
            Primitive::Box {
                center, half_extents, ..
            } => (*center, half_extents.norm()),
            Primitive::Prism { polygon, z_min, z_max } => {
                let c2 = polygon.iter().fold(Vector2::zeros(), |acc, p| acc + p) / polygon.len() as f64;
                let r2 = polygon.iter().map(|p| (p - c2).norm()).fold(0.0, f64::max);
                let hz = 0.5 * (z_max - z_min);
                (
                    Vector3::new(c2.x, c2.y, 0.5 * (z_max + z_min)),
                    (r2 * r2 + hz * hz).sqrt(),
                )
            }
        }
    }
}

// Core geometric representation: an inflated point/segment, or a polytope
// with an exact signed distance function.
enum Core<'a> {
    Point(Vector3<f64>, f64),
    Segment(Vector3<f64>, Vector3<f64>, f64),
    Poly(&'a Primitive),
}

fn core(p: &Primitive) -> Core<'_> {
    match p {
        Primitive::Sphere { center, radius } => Core::Point(*center, *radius),
        Primitive::Capsule { a, b, radius } => Core::Segment(*a, *b, *radius),
        _ => Core::Poly(p),
    }
}

fn unit_or_x(v: Vector3<f64>) -> Vector3<f64> {
    let n = v.norm();
    if n > 1e-300 {
        v / n
    } else {
        Vector3::x()
    }
}

/// Closest point on segment `a`–`b` to `p`, as the segment parameter.
fn closest_param(a: &Vector3<f64>, b: &Vector3<f64>, p: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let l2 = ab.norm_squared();
    if l2 <= 0.0 {
        return 0.0;
    }
    ((p - a).dot(&ab) / l2).clamp(0.0, 1.0)
}

/// Closest points between segments `p1`–`q1` and `p2`–`q2`.
fn segment_segment(
    p1: &Vector3<f64>,
    q1: &Vector3<f64>,
    p2: &Vector3<f64>,
    q2: &Vector3<f64>,
) -> (Vector3<f64>, Vector3<f64>) {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    const EPS: f64 = 1e-18;
    let (s, t);
    if a <= EPS && e <= EPS {
        return (*p1, *p2);
    }
    if a <= EPS {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= EPS {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > EPS * a * e {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
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
    (p1 + d1 * s, p2 + d2 * t)
}

/// Signed distance of a point to a box or prism, with the outward gradient.
fn poly_sdf(poly: &Primitive, p: &Vector3<f64>) -> (f64, Vector3<f64>) {
    match poly {
        Primitive::Box {
            center,
            half_extents,
            rotation,
        } => {
            let q = rotation.inverse() * (p - center);
            let d = q.abs() - half_extents;
            let outside = d.map(|x| x.max(0.0));
            let on = outside.norm();
            if on > 0.0 {
                let g = Vector3::new(
                    outside.x * q.x.signum(),
                    outside.y * q.y.signum(),
                    outside.z * q.z.signum(),
                ) / on;
                (on, rotation * g)
            } else {
                let (k, m) = d.argmax();
                let mut g = Vector3::zeros();
                g[k] = if q[k] >= 0.0 { 1.0 } else { -1.0 };
                (m, rotation * g)
            }
        }
        Primitive::Prism { polygon, z_min, z_max } => {
            let (dxy, gxy) = polygon_sdf(polygon, &Vector2::new(p.x, p.y));
            let zc = 0.5 * (z_min + z_max);
            let hz = 0.5 * (z_max - z_min);
            let dz = (p.z - zc).abs() - hz;
            let sz = if p.z >= zc { 1.0 } else { -1.0 };
            if dxy > 0.0 && dz > 0.0 {
                let n = (dxy * dxy + dz * dz).sqrt();
                (n, Vector3::new(gxy.x * dxy / n, gxy.y * dxy / n, sz * dz / n))
            } else if dxy > 0.0 || (dz <= 0.0 && dxy >= dz) {
                (dxy, Vector3::new(gxy.x, gxy.y, 0.0))
            } else {
                (dz, Vector3::new(0.0, 0.0, sz))
            }
        }
        _ => unreachable!("not a polytope"),
    }
}

/// Signed distance to a convex CCW polygon with the outward gradient.
fn polygon_sdf(poly: &[Vector2<f64>], p: &Vector2<f64>) -> (f64, Vector2<f64>) {
    let n = poly.len();
    let mut max_line = f64::NEG_INFINITY;
    let mut max_normal = Vector2::zeros();
    let mut best = f64::INFINITY;
    let mut best_vec = Vector2::zeros();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let e = b - a;
        let normal = Vector2::new(e.y, -e.x).normalize();
        let line = (p - a).dot(&normal);
        if line > max_line {
            max_line = line;
            max_normal = normal;
        }
        let s = ((p - a).dot(&e) / e.norm_squared()).clamp(0.0, 1.0);
        let c = a + e * s;
        let dv = p - c;
        let dn = dv.norm();
        if dn < best {
            best = dn;
            best_vec = dv;
        }
    }
    if max_line <= 0.0 {
        (max_line, max_normal)
    } else if best > 0.0 {
        (best, best_vec / best)
    } else {
        (0.0, max_normal)
    }
}

fn poly_edges(poly: &Primitive) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    match poly {
        Primitive::Box {
            center,
            half_extents,
            rotation,
        } => {
            let h = half_extents;
            let corner = |i: usize| -> Vector3<f64> {
                let s = Vector3::new(
                    if i & 1 == 0 { -1.0 } else { 1.0 },
                    if i & 2 == 0 { -1.0 } else { 1.0 },
                    if i & 4 == 0 { -1.0 } else { 1.0 },
                );
                center + rotation * s.component_mul(h)
            };
            let mut edges = Vec::with_capacity(12);
            for i in 0..8usize {
                for bit in [1usize, 2, 4] {
                    if i & bit == 0 {
                        edges.push((corner(i), corner(i | bit)));
                    }
                }
            }
            edges
        }
        Primitive::Prism { polygon, z_min, z_max } => {
            let n = polygon.len();
            let mut edges = Vec::with_capacity(3 * n);
            for i in 0..n {
                let a = polygon[i];
                let b = polygon[(i + 1) % n];
                for z in [*z_min, *z_max] {
                    edges.push((Vector3::new(a.x, a.y, z), Vector3::new(b.x, b.y, z)));
                }
                edges.push((Vector3::new(a.x, a.y, *z_min), Vector3::new(a.x, a.y, *z_max)));
            }
            edges
        }
        _ => unreachable!("not a polytope"),
    }
}

fn point_poly(p: &Vector3<f64>, r: f64, poly: &Primitive) -> Proximity {
    let (d, g) = poly_sdf(poly, p);
    let g = unit_or_x(g);
    Proximity {
        distance: d - r,
        point_a: p - g * r,
        point_b: p - g * d,
        normal: -g,
    }
}

/// Minimizes the (convex) signed distance along a segment by golden-section
/// search.
fn segment_poly(a: &Vector3<f64>, b: &Vector3<f64>, r: f64, poly: &Primitive) -> Proximity {
    let f = |s: f64| poly_sdf(poly, &(a + (b - a) * s)).0;
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..64 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = f(x2);
        }
    }
    let mut s = 0.5 * (lo + hi);
    let mut fs = f(s);
    for cand in [0.0, 1.0] {
        let fc = f(cand);
        if fc < fs {
            s = cand;
            fs = fc;
        }
    }
    let _ = fs;
    point_poly(&(a + (b - a) * s), r, poly)
}

fn poly_poly(pa: &Primitive, pb: &Primitive) -> Proximity {
    let mut best: Option<Proximity> = None;
    for (a, b) in poly_edges(pa) {
        let p = segment_poly(&a, &b, 0.0, pb);
        if best.map_or(true, |q| p.distance < q.distance) {
            best = Some(p);
        }
    }
    for (a, b) in poly_edges(pb) {
        let p = segment_poly(&a, &b, 0.0, pa).swapped();
        if best.map_or(true, |q| p.distance < q.distance) {
            best = Some(p);
        }
    }
    best.expect("polytopes have edges")
}

/// Signed distance with witness points and normal.
///
/// Exact for sphere/capsule pairs and for sphere or capsule against a box or
/// prism. For two polytopes the separation distance is exact (closest features
/// always include an edge of one of them); for overlapping polytopes the sign
/// is exact and the magnitude is the deepest edge penetration, which can
/// underestimate the true penetration depth.
pub fn proximity(a: &Primitive, b: &Primitive) -> Proximity {
    match (core(a), core(b)) {
        (Core::Point(pa, ra), Core::Point(pb, rb)) => {
            let n = unit_or_x(pb - pa);
            Proximity {
                distance: (pb - pa).norm() - ra - rb,
                point_a: pa + n * ra,
                point_b: pb - n * rb,
                normal: n,
            }
        }
        (Core::Point(p, rp), Core::Segment(s0, s1, rs)) => {
            let c = s0 + (s1 - s0) * closest_param(&s0, &s1, &p);
            let n = unit_or_x(c - p);
            Proximity {
                distance: (c - p).norm() - rp - rs,
                point_a: p + n * rp,
                point_b: c - n * rs,
                normal: n,
            }
        }
        (Core::Segment(..), Core::Point(..)) => proximity(b, a).swapped(),
        (Core::Segment(p1, q1, r1), Core::Segment(p2, q2, r2)) => {
            let (c1, c2) = segment_segment(&p1, &q1, &p2, &q2);
            let n = unit_or_x(c2 - c1);
            Proximity {
                distance: (c2 - c1).norm() - r1 - r2,
                point_a: c1 + n * r1,
                point_b: c2 - n * r2,
                normal: n,
            }
        }
        (Core::Point(p, r), Core::Poly(poly)) => point_poly(&p, r, poly),
        (Core::Segment(s0, s1, r), Core::Poly(poly)) => segment_poly(&s0, &s1, r, poly),
        (Core::Poly(_), Core::Point(..)) | (Core::Poly(_), Core::Segment(..)) => proximity(b, a).swapped(),
        (Core::Poly(pa), Core::Poly(pb)) => poly_poly(pa, pb),
    }
}

/// Signed distance between two primitives (m).
pub fn signed_distance(a: &Primitive, b: &Primitive) -> f64 {
    // symmetric by construction: order the arguments canonically
    if rank(a) <= rank(b) {
        proximity(a, b).distance
    } else {
        proximity(b, a).distance
    }
}

fn rank(p: &Primitive) -> u8 {
    match p {
        Primitive::Sphere { .. } => 0,
        Primitive::Capsule { .. } => 1,
        Primitive::Box { .. } => 2,
        Primitive::Prism { .. } => 3,
    }
}

/// Signed distance from a point to a primitive.
pub fn point_distance(p: &Vector3<f64>, prim: &Primitive) -> f64 {
    match core(prim) {
        Core::Point(c, r) => (p - c).norm() - r,
        Core::Segment(a, b, r) => (a + (b - a) * closest_param(&a, &b, p) - p).norm() - r,
        Core::Poly(poly) => poly_sdf(poly, p).0,
    }
}

/// Signed distance from the segment `a`–`b` to a primitive.
pub fn segment_distance(a: &Vector3<f64>, b: &Vector3<f64>, prim: &Primitive) -> f64 {
    match core(prim) {
        Core::Point(c, r) => (a + (b - a) * closest_param(a, b, &c) - c).norm() - r,
        Core::Segment(s0, s1, r) => {
            let (c1, c2) = segment_segment(a, b, &s0, &s1);
            (c2 - c1).norm() - r
        }
        Core::Poly(poly) => segment_poly(a, b, 0.0, poly).distance,
    }
}

/// Lower bound on the signed distance from bounding spheres.
pub fn distance_lower_bound(a: &Primitive, b: &Primitive) -> f64 {
    let (ca, ra) = a.bounding_sphere();
    let (cb, rb) = b.bounding_sphere();
    (ca - cb).norm() - ra - rb
}

/// Rotation about a unit axis, used by callers building oriented boxes.
pub fn axis_rotation(axis: Vector3<f64>, angle: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    #[test]
    fn sphere_sphere() {
        let a = Primitive::sphere(v(0.0, 0.0, 0.0), 1.0);
        let b = Primitive::sphere(v(3.0, 0.0, 0.0), 1.0);
        assert_relative_eq!(signed_distance(&a, &b), 1.0);
        assert_relative_eq!(signed_distance(&a, &a), -2.0);
    }

    #[test]
    fn capsule_sphere_perpendicular() {
        let c = Primitive::capsule(v(-1.0, 0.0, 0.0), v(1.0, 0.0, 0.0), 0.1);
        let s = Primitive::sphere(v(0.0, 1.0, 0.0), 0.2);
        assert_relative_eq!(signed_distance(&c, &s), 0.7, epsilon = 1e-12);
        assert_relative_eq!(signed_distance(&s, &c), 0.7, epsilon = 1e-12);
    }

    #[test]
    fn sphere_box_outside_edge_and_inside() {
        let b = Primitive::aabb(v(0.0, 0.0, 0.0), v(1.0, 1.0, 1.0));
        let s = Primitive::sphere(v(3.0, 0.0, 0.0), 0.5);
        assert_relative_eq!(signed_distance(&s, &b), 1.5, epsilon = 1e-12);
        let s = Primitive::sphere(v(2.0, 2.0, 0.0), 0.1);
        assert_relative_eq!(signed_distance(&s, &b), 2f64.sqrt() - 0.1, epsilon = 1e-12);
        // centre 0.25 inside the +x face: clamps at the deepest (nearest) face
        let s = Primitive::sphere(v(0.75, 0.0, 0.0), 0.1);
        assert_relative_eq!(signed_distance(&s, &b), -0.35, epsilon = 1e-12);
    }

    #[test]
    fn capsule_box_parallel_face() {
        let b = Primitive::aabb(v(0.0, 0.0, 0.0), v(1.0, 1.0, 1.0));
        let c = Primitive::capsule(v(-0.5, 2.0, 0.0), v(0.5, 2.0, 0.3), 0.25);
        assert_relative_eq!(signed_distance(&c, &b), 0.75, epsilon = 1e-9);
        let c = Primitive::capsule(v(-3.0, 0.0, 0.0), v(3.0, 0.0, 0.0), 0.1);
        assert!(signed_distance(&c, &b) < 0.0);
    }

    #[test]
    fn box_box_separated_is_exact() {
        let a = Primitive::aabb(v(0.0, 0.0, 0.0), v(1.0, 1.0, 1.0));
        let b = Primitive::cuboid(v(4.0, 0.0, 0.0), v(1.0, 1.0, 1.0), axis_rotation(Vector3::z(), 0.3));
        // the rotated box's nearest vertex is at x = 4 − (cos .3 + sin .3)
        let expected = 4.0 - (0.3f64.cos() + 0.3f64.sin()) - 1.0;
        assert_relative_eq!(signed_distance(&a, &b), expected, epsilon = 1e-9);
        let c = Primitive::aabb(v(1.5, 0.2, 0.0), v(1.0, 1.0, 1.0));
        assert!(signed_distance(&a, &c) < 0.0);
        // containment
        let d = Primitive::aabb(v(0.1, 0.0, 0.0), v(0.2, 0.2, 0.2));
        assert!(signed_distance(&a, &d) < 0.0);
    }

    #[test]
    fn prism_sdf_matches_box() {
        let poly = vec![
            Vector2::new(-1.0, -1.0),
            Vector2::new(1.0, -1.0),
            Vector2::new(1.0, 1.0),
            Vector2::new(-1.0, 1.0),
        ];
        let prism = Primitive::prism(poly, -1.0, 1.0);
        prism.validate().unwrap();
        let cube = Primitive::aabb(Vector3::zeros(), v(1.0, 1.0, 1.0));
        for p in [v(3.0, 0.2, 0.1), v(2.0, 2.0, 2.0), v(0.3, -0.2, 0.5), v(0.0, 0.0, -3.0)] {
            assert_relative_eq!(point_distance(&p, &prism), point_distance(&p, &cube), epsilon = 1e-12);
        }
    }

    #[test]
    fn clockwise_prism_is_rejected() {
        let poly = vec![Vector2::new(0.0, 0.0), Vector2::new(0.0, 1.0), Vector2::new(1.0, 0.0)];
        assert!(Primitive::prism(poly, 0.0, 1.0).validate().is_err());
    }

    #[test]
    fn witness_normal_predicts_distance_change() {
        let b = Primitive::cuboid(v(0.0, 0.0, 0.0), v(0.5, 0.7, 1.0), axis_rotation(v(1.0, 2.0, 3.0), 0.7));
        let c = Primitive::capsule(v(1.5, -0.3, 0.2), v(2.0, 0.8, 1.1), 0.1);
        let p = proximity(&c, &b);
        let delta = v(1e-6, -2e-6, 0.5e-6);
        let moved = c.translated(&delta);
        let predicted = p.distance - p.normal.dot(&delta);
        assert_relative_eq!(proximity(&moved, &b).distance, predicted, epsilon = 1e-10);
    }
}
