//! Planar rigid-body math, unicycle kinematics and obstacle queries.
//!
//! Every module that reasons about space goes through this one: the
//! simulator, the differentiable objective, the planner and the localizer
//! share one integrator so their pose tables agree bit for bit.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Control period of the robot loop (3 Hz).
pub const DT: f64 = 1.0 / 3.0;
/// Linear velocity envelope, m/s.
pub const V_MIN: f64 = 0.0;
pub const V_MAX: f64 = 0.5;
/// Angular velocity envelope, rad/s.
pub const OMEGA_MAX: f64 = 1.0;
/// Radius of the circular robot footprint including margin.
pub const ROBOT_RADIUS: f64 = 0.5;

pub type Point2 = [f64; 2];

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[inline]
pub fn dist(a: Point2, b: Point2) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub const fn origin() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
        }
    }

    pub fn position(&self) -> Point2 {
        [self.x, self.y]
    }

    pub fn to_transform(&self) -> Transform2 {
        Transform2::new(self.theta, [self.x, self.y])
    }

    pub fn distance_to(&self, other: &Pose2) -> f64 {
        dist(self.position(), other.position())
    }

    /// Expresses `other` in the frame of `self`.
    pub fn relative(&self, other: &Pose2) -> Pose2 {
        self.to_transform()
            .inverse()
            .compose(&other.to_transform())
            .to_pose()
    }

    /// Expresses a world point in the frame of `self`.
    pub fn to_local(&self, p: Point2) -> Point2 {
        self.to_transform().inverse().apply(p)
    }
}

/// SE(2) rigid transform: rotation followed by translation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transform2 {
    pub rotation: f64,
    pub translation: Point2,
}

impl Transform2 {
    pub fn new(rotation: f64, translation: Point2) -> Self {
        Self {
            rotation: wrap_angle(rotation),
            translation,
        }
    }

    pub const fn identity() -> Self {
        Self {
            rotation: 0.0,
            translation: [0.0, 0.0],
        }
    }

    pub fn translation(x: f64, y: f64) -> Self {
        Self::new(0.0, [x, y])
    }

    pub fn rotation(theta: f64) -> Self {
        Self::new(theta, [0.0, 0.0])
    }

    /// `self * other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Transform2) -> Transform2 {
        let (s, c) = self.rotation.sin_cos();
        let [ox, oy] = other.translation;
        Transform2::new(
            self.rotation + other.rotation,
            [
                self.translation[0] + c * ox - s * oy,
                self.translation[1] + s * ox + c * oy,
            ],
        )
    }

    pub fn inverse(&self) -> Transform2 {
        let (s, c) = self.rotation.sin_cos();
        let [tx, ty] = self.translation;
        Transform2::new(-self.rotation, [-(c * tx + s * ty), s * tx - c * ty])
    }

    pub fn apply(&self, p: Point2) -> Point2 {
        let (s, c) = self.rotation.sin_cos();
        [
            self.translation[0] + c * p[0] - s * p[1],
            self.translation[1] + s * p[0] + c * p[1],
        ]
    }

    /// Rotates a free vector (no translation).
    pub fn rotate(&self, v: Point2) -> Point2 {
        let (s, c) = self.rotation.sin_cos();
        [c * v[0] - s * v[1], s * v[0] + c * v[1]]
    }

    pub fn to_pose(&self) -> Pose2 {
        Pose2::new(self.translation[0], self.translation[1], self.rotation)
    }

    pub fn approx_eq(&self, other: &Transform2, tol: f64) -> bool {
        wrap_angle(self.rotation - other.rotation).abs() <= tol
            && (self.translation[0] - other.translation[0]).abs() <= tol
            && (self.translation[1] - other.translation[1]).abs() <= tol
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Twist {
    pub v: f64,
    pub omega: f64,
}

impl Twist {
    pub const ZERO: Twist = Twist { v: 0.0, omega: 0.0 };

    pub const fn new(v: f64, omega: f64) -> Self {
        Self { v, omega }
    }

    pub fn clamped(self) -> Self {
        Self {
            v: self.v.clamp(V_MIN, V_MAX),
            omega: self.omega.clamp(-OMEGA_MAX, OMEGA_MAX),
        }
    }

    pub fn in_bounds(&self) -> bool {
        (V_MIN..=V_MAX).contains(&self.v) && (-OMEGA_MAX..=OMEGA_MAX).contains(&self.omega)
    }
}

// sin(phi)/phi and (1 - cos(phi))/phi with their derivatives, series near 0.
fn arc_coeffs(phi: f64) -> (f64, f64, f64, f64) {
    if phi.abs() < 1e-3 {
        let p2 = phi * phi;
        let s1 = 1.0 - p2 / 6.0 + p2 * p2 / 120.0;
        let c1 = phi / 2.0 - phi * p2 / 24.0 + phi * p2 * p2 / 720.0;
        let ds1 = -phi / 3.0 + phi * p2 / 30.0;
        let dc1 = 0.5 - p2 / 8.0 + p2 * p2 / 144.0;
        (s1, c1, ds1, dc1)
    } else {
        let (s, c) = phi.sin_cos();
        let s1 = s / phi;
        let c1 = (1.0 - c) / phi;
        let ds1 = (phi * c - s) / (phi * phi);
        let dc1 = (phi * s - (1.0 - c)) / (phi * phi);
        (s1, c1, ds1, dc1)
    }
}

/// Exact-arc integration of the unicycle over one control period.
///
/// Below |omega * dt| = 1e-3 the arc terms switch to their Taylor series,
/// which reduces to the straight-line limit as omega goes to zero.
pub fn unicycle_step(p: Pose2, u: Twist, dt: f64) -> Pose2 {
    debug_assert!(dt > 0.0);
    let phi = u.omega * dt;
    let (s1, c1, _, _) = arc_coeffs(phi);
    let (st, ct) = p.theta.sin_cos();
    let a = ct * s1 - st * c1;
    let b = ct * c1 + st * s1;
    Pose2::new(p.x + u.v * dt * a, p.y + u.v * dt * b, p.theta + phi)
}

/// Partial derivatives of one unicycle step.
///
/// `wrt_pose[r][c]` is d(out_r)/d(in_c) over (x, y, theta); `wrt_twist[r]`
/// holds d(out_r)/dv and d(out_r)/domega.
#[derive(Clone, Copy, Debug)]
pub struct StepJacobian {
    pub wrt_pose: [[f64; 3]; 3],
    pub wrt_twist: [[f64; 2]; 3],
}

/// Same as [`unicycle_step`] but also returns the local Jacobian. The output
/// heading is left unwrapped so chained derivatives stay smooth.
pub fn unicycle_step_with_jacobian(p: Pose2, u: Twist, dt: f64) -> (Pose2, StepJacobian) {
    let phi = u.omega * dt;
    let (s1, c1, ds1, dc1) = arc_coeffs(phi);
    let (st, ct) = p.theta.sin_cos();
    let a = ct * s1 - st * c1;
    let b = ct * c1 + st * s1;
    let da_dphi = ct * ds1 - st * dc1;
    let db_dphi = ct * dc1 + st * ds1;
    let vdt = u.v * dt;
    let out = Pose2 {
        x: p.x + vdt * a,
        y: p.y + vdt * b,
        theta: p.theta + phi,
    };
    let jac = StepJacobian {
        wrt_pose: [[1.0, 0.0, -vdt * b], [0.0, 1.0, vdt * a], [0.0, 0.0, 1.0]],
        wrt_twist: [
            [dt * a, vdt * dt * da_dphi],
            [dt * b, vdt * dt * db_dphi],
            [0.0, dt],
        ],
    };
    (out, jac)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: Point2,
    pub radius: f64,
}

impl Circle {
    pub fn distance(&self, p: Point2) -> f64 {
        (dist(self.center, p) - self.radius).max(0.0)
    }

    fn ray_hit(&self, o: Point2, d: Point2) -> Option<f64> {
        let f = [o[0] - self.center[0], o[1] - self.center[1]];
        let b = f[0] * d[0] + f[1] * d[1];
        let c = f[0] * f[0] + f[1] * f[1] - self.radius * self.radius;
        if c <= 0.0 {
            return Some(0.0);
        }
        let disc = b * b - c;
        if disc < 0.0 {
            return None;
        }
        let t = -b - disc.sqrt();
        (t >= 0.0).then_some(t)
    }
}

/// Convex polygon; vertices in either winding order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexPolygon {
    pub vertices: Vec<Point2>,
}

impl ConvexPolygon {
    pub fn new(vertices: Vec<Point2>) -> Self {
        Self { vertices }
    }

    /// Axis-aligned rectangle from two corners.
    pub fn rect(min: Point2, max: Point2) -> Self {
        Self::new(vec![
            [min[0], min[1]],
            [max[0], min[1]],
            [max[0], max[1]],
            [min[0], max[1]],
        ])
    }

    fn edges(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn contains(&self, p: Point2) -> bool {
        if self.vertices.len() < 3 {
            return false;
        }
        let mut sign = 0.0f64;
        for (a, b) in self.edges() {
            let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
            if cross.abs() < 1e-15 {
                continue;
            }
            if sign == 0.0 {
                sign = cross.signum();
            } else if cross.signum() != sign {
                return false;
            }
        }
        true
    }

    pub fn distance(&self, p: Point2) -> f64 {
        if self.contains(p) {
            return 0.0;
        }
        self.edges()
            .map(|(a, b)| point_segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min)
    }

    fn ray_hit(&self, o: Point2, d: Point2) -> Option<f64> {
        if self.contains(o) {
            return Some(0.0);
        }
        self.edges()
            .filter_map(|(a, b)| ray_segment(o, d, a, b))
            .reduce(f64::min)
    }
}

pub fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    dist(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

fn ray_segment(o: Point2, d: Point2, a: Point2, b: Point2) -> Option<f64> {
    let e = [b[0] - a[0], b[1] - a[1]];
    let denom = d[0] * e[1] - d[1] * e[0];
    if denom.abs() < 1e-15 {
        return None;
    }
    let w = [a[0] - o[0], a[1] - o[1]];
    let t = (w[0] * e[1] - w[1] * e[0]) / denom;
    let s = (w[0] * d[1] - w[1] * d[0]) / denom;
    (t >= 0.0 && (0.0..=1.0).contains(&s)).then_some(t)
}

/// Static scene geometry.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSet {
    #[serde(default)]
    pub circles: Vec<Circle>,
    #[serde(default)]
    pub polygons: Vec<ConvexPolygon>,
}

impl ObstacleSet {
    pub fn is_empty(&self) -> bool {
        self.circles.is_empty() && self.polygons.is_empty()
    }

    /// Distance from a point to the nearest obstacle surface (0 inside).
    pub fn distance(&self, p: Point2) -> f64 {
        let c = self.circles.iter().map(|c| c.distance(p));
        let g = self.polygons.iter().map(|g| g.distance(p));
        c.chain(g).fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, p: Point2) -> bool {
        self.circles.iter().any(|c| dist(c.center, p) < c.radius)
            || self.polygons.iter().any(|g| g.contains(p))
    }

    /// Range along a single world-frame bearing, capped at `max_range`.
    pub fn ray(&self, origin: Point2, bearing: f64, max_range: f64) -> f64 {
        let d = [bearing.cos(), bearing.sin()];
        let c = self.circles.iter().filter_map(|c| c.ray_hit(origin, d));
        let g = self.polygons.iter().filter_map(|g| g.ray_hit(origin, d));
        c.chain(g).fold(max_range, f64::min).max(0.0)
    }

    /// `n_rays` evenly spaced rays, ray i at bearing theta + 2*pi*i/n_rays.
    pub fn ray_cast(&self, p: &Pose2, n_rays: usize, max_range: f64) -> Vec<f64> {
        (0..n_rays)
            .map(|i| {
                let bearing = p.theta + 2.0 * PI * i as f64 / n_rays as f64;
                self.ray(p.position(), bearing, max_range)
            })
            .collect()
    }

    /// Ray hit points strictly inside `max_range`, in the robot frame.
    pub fn point_cloud(&self, p: &Pose2, n_rays: usize, max_range: f64) -> Vec<Point2> {
        self.ray_cast(p, n_rays, max_range)
            .into_iter()
            .enumerate()
            .filter(|(_, r)| *r < max_range)
            .map(|(i, r)| {
                let a = 2.0 * PI * i as f64 / n_rays as f64;
                [r * a.cos(), r * a.sin()]
            })
            .collect()
    }

    pub fn extend(&mut self, other: &ObstacleSet) {
        self.circles.extend(other.circles.iter().copied());
        self.polygons.extend(other.polygons.iter().cloned());
    }
}

/// Distance from a point to a polyline (open or closed by the caller).
pub fn polyline_distance(p: Point2, line: &[Point2]) -> f64 {
    match line.len() {
        0 => f64::INFINITY,
        1 => dist(p, line[0]),
        _ => line
            .windows(2)
            .map(|w| point_segment_distance(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn euler(p: Pose2, u: Twist, dt: f64, n: usize) -> Pose2 {
        let h = dt / n as f64;
        let (mut x, mut y, mut th) = (p.x, p.y, p.theta);
        for _ in 0..n {
            // midpoint rule keeps the oracle's own error well under 1e-6
            let mid = th + 0.5 * u.omega * h;
            x += u.v * h * mid.cos();
            y += u.v * h * mid.sin();
            th += u.omega * h;
        }
        Pose2::new(x, y, th)
    }

    #[test]
    fn straight_line_step() {
        let p = unicycle_step(Pose2::origin(), Twist::new(0.5, 0.0), DT);
        assert!((p.x - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(p.y, 0.0);
        assert_eq!(p.theta, 0.0);
    }

    #[test]
    fn pure_rotation() {
        let p = unicycle_step(Pose2::origin(), Twist::new(0.0, 1.0), PI);
        assert_eq!((p.x, p.y), (0.0, 0.0));
        assert!((p.theta - PI).abs() < 1e-15);
    }

    #[test]
    fn arc_matches_fine_euler() {
        let u = Twist::new(0.5, 0.9);
        let exact = unicycle_step(Pose2::origin(), u, 2.664);
        let oracle = euler(Pose2::origin(), u, 2.664, 10_000);
        assert!(dist(exact.position(), oracle.position()) < 1e-6);
        assert!(wrap_angle(exact.theta - oracle.theta).abs() < 1e-9);
    }

    #[test]
    fn euler_error_shrinks_with_substeps() {
        let u = Twist::new(0.5, 0.9);
        let exact = unicycle_step(Pose2::origin(), u, 2.664);
        let errs: Vec<f64> = [10, 100, 1000]
            .iter()
            .map(|&n| dist(exact.position(), euler(Pose2::origin(), u, 2.664, n).position()))
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2]);
    }

    #[test]
    fn composition_identities() {
        let t = Transform2::new(0.7, [1.5, -2.0]);
        assert!(t.compose(&Transform2::identity()).approx_eq(&t, 1e-15));
        assert!(t.compose(&t.inverse()).approx_eq(&Transform2::identity(), 1e-9));
        let r = Transform2::rotation(PI / 2.0).compose(&Transform2::translation(1.0, 0.0));
        let o = r.apply([0.0, 0.0]);
        assert!(o[0].abs() < 1e-15 && (o[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rays_in_empty_scene() {
        let r = ObstacleSet::default().ray_cast(&Pose2::origin(), 16, 5.0);
        assert!(r.iter().all(|&x| x == 5.0));
    }

    #[test]
    fn ray_hits_circle() {
        let obs = ObstacleSet {
            circles: vec![Circle {
                center: [2.0, 0.0],
                radius: 1.0,
            }],
            polygons: vec![],
        };
        let r = obs.ray_cast(&Pose2::origin(), 4, 5.0);
        assert!((r[0] - 1.0).abs() < 1e-12);
        assert_eq!(r[2], 5.0);
    }

    #[test]
    fn square_room_rays() {
        let t = 0.2;
        let obs = ObstacleSet {
            circles: vec![],
            polygons: vec![
                ConvexPolygon::rect([-3.0 - t, -3.0 - t], [3.0 + t, -3.0]),
                ConvexPolygon::rect([-3.0 - t, 3.0], [3.0 + t, 3.0 + t]),
                ConvexPolygon::rect([-3.0 - t, -3.0], [-3.0, 3.0]),
                ConvexPolygon::rect([3.0, -3.0], [3.0 + t, 3.0]),
            ],
        };
        let r = obs.ray_cast(&Pose2::origin(), 4, 10.0);
        for x in r {
            assert!((x - 3.0).abs() < 1e-12, "{x}");
        }
        assert!((obs.distance([0.0, 0.0]) - 3.0).abs() < 1e-12);
        assert!(obs.contains([3.1, 0.0]));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = Pose2::new(0.3, -0.2, 0.8);
        for &u in &[Twist::new(0.4, 0.7), Twist::new(0.3, 1e-5), Twist::new(0.2, 0.0)] {
            let (_, jac) = unicycle_step_with_jacobian(p, u, DT);
            let h = 1e-6;
            let f = |q: Pose2, w: Twist| {
                let o = unicycle_step(q, w, DT);
                [o.x, o.y, q.theta + w.omega * DT]
            };
            for c in 0..3 {
                let mut a = p;
                let mut b = p;
                match c {
                    0 => {
                        a.x += h;
                        b.x -= h
                    }
                    1 => {
                        a.y += h;
                        b.y -= h
                    }
                    _ => {
                        a.theta += h;
                        b.theta -= h
                    }
                }
                let (fa, fb) = (f(a, u), f(b, u));
                for r in 0..3 {
                    let fd = (fa[r] - fb[r]) / (2.0 * h);
                    assert!((fd - jac.wrt_pose[r][c]).abs() < 1e-8);
                }
            }
            for c in 0..2 {
                let (mut a, mut b) = (u, u);
                if c == 0 {
                    a.v += h;
                    b.v -= h;
                } else {
                    a.omega += h;
                    b.omega -= h;
                }
                let (fa, fb) = (f(p, a), f(p, b));
                for r in 0..3 {
                    let fd = (fa[r] - fb[r]) / (2.0 * h);
                    assert!((fd - jac.wrt_twist[r][c]).abs() < 1e-8);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn step_is_se2_equivariant(
            x in -5.0..5.0f64, y in -5.0..5.0f64, th in -3.0..3.0f64,
            v in 0.0..0.5f64, w in -1.0..1.0f64,
            rot in -3.0..3.0f64, tx in -5.0..5.0f64, ty in -5.0..5.0f64,
        ) {
            let p = Pose2::new(x, y, th);
            let u = Twist::new(v, w);
            let t = Transform2::new(rot, [tx, ty]);
            let a = t.compose(&unicycle_step(p, u, DT).to_transform());
            let b = unicycle_step(t.compose(&p.to_transform()).to_pose(), u, DT).to_transform();
            prop_assert!(a.approx_eq(&b, 1e-9));
        }

        #[test]
        fn compose_inverse_is_identity(rot in -3.0..3.0f64, tx in -50.0..50.0f64, ty in -50.0..50.0f64) {
            let t = Transform2::new(rot, [tx, ty]);
            prop_assert!(t.compose(&t.inverse()).approx_eq(&Transform2::identity(), 1e-9));
            prop_assert!(t.inverse().compose(&t).approx_eq(&Transform2::identity(), 1e-9));
        }

        #[test]
        fn ray_cast_is_continuous(x in -1.0..1.0f64, y in -1.0..1.0f64, th in -3.0..3.0f64) {
            let obs = ObstacleSet {
                circles: vec![Circle { center: [2.5, 0.3], radius: 0.6 }],
                polygons: vec![ConvexPolygon::rect([-4.0, -4.0], [-3.0, 4.0])],
            };
            let p = Pose2::new(x, y, th);
            let q = Pose2::new(x + 1e-6, y - 1e-6, th + 1e-6);
            let a = obs.ray_cast(&p, 16, 6.0);
            let b = obs.ray_cast(&q, 16, 6.0);
            for (u, v) in a.iter().zip(&b) {
                prop_assert!((u - v).abs() < 1e-3);
            }
        }
    }
}
