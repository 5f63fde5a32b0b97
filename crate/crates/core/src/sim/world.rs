//! World state and its one-step dynamics.

use crate::geometry::{dist, unicycle_step, Circle, ConvexPolygon, ObstacleSet, Point2, Pose2, Twist, DT, ROBOT_RADIUS};
use crate::objective::INTIMATE_DISTANCE;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Contact is allowed to compress the footprint down to this clearance.
pub const MIN_CLEARANCE: f64 = 0.5 * ROBOT_RADIUS;
/// Minimum speed for a bumpy patch to register.
pub const BUMPY_MIN_SPEED: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SocialForceParams {
    pub desired_speed: f64,
    pub relaxation: f64,
    pub strength: f64,
    pub range: f64,
    pub body_radius: f64,
    pub max_speed_factor: f64,
    pub waypoint_tolerance: f64,
    pub substeps: usize,
}

impl Default for SocialForceParams {
    fn default() -> Self {
        Self {
            desired_speed: 1.2,
            relaxation: 0.5,
            strength: 2.0,
            range: 0.3,
            body_radius: 0.3,
            max_speed_factor: 1.3,
            waypoint_tolerance: 0.5,
            substeps: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pedestrian {
    pub pose: Pose2,
    pub velocity: Point2,
    pub waypoints: Vec<Point2>,
    pub waypoint: usize,
}

impl Pedestrian {
    pub fn new(start: Point2, waypoints: Vec<Point2>) -> Self {
        let heading = waypoints
            .first()
            .map(|w| (w[1] - start[1]).atan2(w[0] - start[0]))
            .unwrap_or(0.0);
        Self {
            pose: Pose2::new(start[0], start[1], heading),
            velocity: [0.0, 0.0],
            waypoints,
            waypoint: 0,
        }
    }

    pub fn position(&self) -> Point2 {
        self.pose.position()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventFlags {
    /// Footprint in contact with a static obstacle or small object.
    pub collision: bool,
    /// Footprint in contact with a pedestrian.
    pub ped_collision: bool,
    pub object_collision: bool,
    pub bumpy: bool,
    pub ped_violation: bool,
    /// Nearest pedestrian (center distance).
    pub d_h: f64,
    /// Nearest static obstacle or small object (surface distance).
    pub d_s: f64,
    pub on_patch: bool,
}

impl EventFlags {
    pub fn any_contact(&self) -> bool {
        self.collision || self.ped_collision
    }
}

/// Distances that define every flag, split by obstacle class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Clearance {
    pub statics: f64,
    pub objects: f64,
    pub peds: f64,
}

impl Clearance {
    pub fn min(&self) -> f64 {
        self.statics.min(self.objects).min(self.peds)
    }

    pub fn surface(&self) -> f64 {
        self.statics.min(self.objects)
    }
}

#[derive(Clone, Debug)]
pub struct WorldState {
    pub robot: Pose2,
    /// Realized twist of the last step.
    pub twist: Twist,
    pub peds: Vec<Pedestrian>,
    pub obstacles: Arc<ObstacleSet>,
    pub small_objects: Vec<Circle>,
    pub bumpy_patches: Arc<Vec<ConvexPolygon>>,
    pub social: SocialForceParams,
    pub time: f64,
}

pub fn object_distance(objects: &[Circle], p: Point2) -> f64 {
    objects.iter().map(|c| c.distance(p)).fold(f64::INFINITY, f64::min)
}

pub fn nearest_ped_distance(peds: impl IntoIterator<Item = Point2>, p: Point2) -> f64 {
    peds.into_iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min)
}

/// Flags implied by a robot position, its realized speed and the scene.
pub fn derive_flags(
    obstacles: &ObstacleSet,
    objects: &[Circle],
    patches: &[ConvexPolygon],
    peds: &[Point2],
    robot: Point2,
    speed: f64,
) -> EventFlags {
    let c = Clearance {
        statics: obstacles.distance(robot),
        objects: object_distance(objects, robot),
        peds: nearest_ped_distance(peds.iter().copied(), robot),
    };
    let on_patch = patches.iter().any(|g| g.contains(robot));
    EventFlags {
        collision: c.surface() < ROBOT_RADIUS,
        ped_collision: c.peds < ROBOT_RADIUS,
        object_collision: c.objects < ROBOT_RADIUS,
        bumpy: on_patch && speed > BUMPY_MIN_SPEED,
        ped_violation: c.peds < INTIMATE_DISTANCE,
        d_h: c.peds,
        d_s: c.surface(),
        on_patch,
    }
}

impl WorldState {
    pub fn new(robot: Pose2, obstacles: ObstacleSet) -> Self {
        Self {
            robot,
            twist: Twist::ZERO,
            peds: Vec::new(),
            obstacles: Arc::new(obstacles),
            small_objects: Vec::new(),
            bumpy_patches: Arc::new(Vec::new()),
            social: SocialForceParams::default(),
            time: 0.0,
        }
    }

    pub fn ped_positions(&self) -> Vec<Point2> {
        self.peds.iter().map(Pedestrian::position).collect()
    }

    pub fn clearance(&self, p: Point2) -> Clearance {
        Clearance {
            statics: self.obstacles.distance(p),
            objects: object_distance(&self.small_objects, p),
            peds: nearest_ped_distance(self.peds.iter().map(Pedestrian::position), p),
        }
    }

    /// Static obstacles plus small objects, as seen by range sensing.
    pub fn all_obstacles(&self) -> ObstacleSet {
        let mut o = (*self.obstacles).clone();
        o.circles.extend(self.small_objects.iter().copied());
        o
    }

    pub fn flags(&self) -> EventFlags {
        derive_flags(
            &self.obstacles,
            &self.small_objects,
            &self.bumpy_patches,
            &self.ped_positions(),
            self.robot.position(),
            self.twist.v.abs(),
        )
    }

    /// Moves the robot to `pose` without dynamics (operator reset).
    pub fn place_robot(&mut self, pose: Pose2) {
        self.robot = pose;
        self.twist = Twist::ZERO;
    }

    /// Advances the world by one control period.
    pub fn step(&mut self, a: Twist) -> EventFlags {
        let a = a.clamped();
        let before = self.clearance(self.robot.position()).min();
        let proposed = unicycle_step(self.robot, a, DT);
        let after = self.clearance(proposed.position()).min();
        let moved = after >= MIN_CLEARANCE || after >= before;
        if moved {
            self.robot = proposed;
        }
        self.step_peds();
        self.time += DT;
        let contact = self.clearance(self.robot.position()).min() < ROBOT_RADIUS;
        self.twist = if moved && !contact { a } else { Twist::ZERO };
        self.flags()
    }

    fn step_peds(&mut self) {
        let sf = self.social;
        let h = DT / sf.substeps.max(1) as f64;
        for _ in 0..sf.substeps.max(1) {
            let positions = self.ped_positions();
            let robot = self.robot.position();
            for i in 0..self.peds.len() {
                let p = positions[i];
                let ped = &mut self.peds[i];
                if let Some(&w) = ped.waypoints.get(ped.waypoint) {
                    if dist(p, w) < sf.waypoint_tolerance {
                        ped.waypoint = (ped.waypoint + 1) % ped.waypoints.len();
                    }
                }
                let mut f = [0.0, 0.0];
                if let Some(&w) = ped.waypoints.get(ped.waypoint) {
                    let d = dist(p, w).max(1e-9);
                    let e = [(w[0] - p[0]) / d, (w[1] - p[1]) / d];
                    f[0] += (sf.desired_speed * e[0] - ped.velocity[0]) / sf.relaxation;
                    f[1] += (sf.desired_speed * e[1] - ped.velocity[1]) / sf.relaxation;
                }
                let mut push = |from: Point2, gap: f64, scale: f64| {
                    let d = dist(p, from).max(1e-9);
                    let m = sf.strength * ((scale - gap) / sf.range).exp();
                    f[0] += m * (p[0] - from[0]) / d;
                    f[1] += m * (p[1] - from[1]) / d;
                };
                for (j, &q) in positions.iter().enumerate() {
                    if j != i {
                        push(q, dist(p, q), 2.0 * sf.body_radius);
                    }
                }
                push(robot, dist(p, robot), 2.0 * sf.body_radius);
                if let Some(c) = nearest_surface(&self.obstacles, &self.small_objects, p) {
                    push(c, dist(p, c), sf.body_radius);
                }
                let ped = &mut self.peds[i];
                ped.velocity[0] += f[0] * h;
                ped.velocity[1] += f[1] * h;
                let speed = ped.velocity[0].hypot(ped.velocity[1]);
                let cap = sf.max_speed_factor * sf.desired_speed;
                if speed > cap {
                    ped.velocity[0] *= cap / speed;
                    ped.velocity[1] *= cap / speed;
                }
                let next = [p[0] + ped.velocity[0] * h, p[1] + ped.velocity[1] * h];
                let blocked = self.obstacles.distance(next) < sf.body_radius * 0.5
                    || object_distance(&self.small_objects, next) < sf.body_radius * 0.5
                    || dist(next, robot) < MIN_CLEARANCE;
                if blocked {
                    ped.velocity = [0.0, 0.0];
                } else {
                    let heading = if speed > 1e-6 {
                        ped.velocity[1].atan2(ped.velocity[0])
                    } else {
                        ped.pose.theta
                    };
                    ped.pose = Pose2::new(next[0], next[1], heading);
                }
            }
        }
    }
}

/// Nearest surface point of static obstacles and small objects, if any lies within 2 m.
fn nearest_surface(obs: &ObstacleSet, objects: &[Circle], p: Point2) -> Option<Point2> {
    const REACH: f64 = 2.0;
    let mut best: Option<(f64, Point2)> = None;
    let mut consider = |d: f64, q: Point2| {
        if d < REACH && best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, q));
        }
    };
    for c in obs.circles.iter().chain(objects) {
        let d = dist(p, c.center).max(1e-9);
        let s = c.radius / d;
        consider(
            (d - c.radius).max(0.0),
            [c.center[0] + (p[0] - c.center[0]) * s, c.center[1] + (p[1] - c.center[1]) * s],
        );
    }
    for g in &obs.polygons {
        let n = g.vertices.len();
        for k in 0..n {
            let a = g.vertices[k];
            let b = g.vertices[(k + 1) % n];
            let q = closest_on_segment(p, a, b);
            consider(dist(p, q), q);
        }
    }
    best.map(|(_, q)| q)
}

fn closest_on_segment(p: Point2, a: Point2, b: Point2) -> Point2 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    [a[0] + t * ab[0], a[1] + t * ab[1]]
}

/// Functional form of [`WorldState::step`].
pub fn step_world(w: &WorldState, a: Twist) -> (WorldState, EventFlags) {
    let mut next = w.clone();
    let flags = next.step(a);
    (next, flags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wall_ahead(gap: f64) -> WorldState {
        let obs = ObstacleSet {
            circles: vec![],
            polygons: vec![ConvexPolygon::rect([gap, -5.0], [gap + 1.0, 5.0])],
        };
        WorldState::new(Pose2::origin(), obs)
    }

    #[test]
    fn free_space_step() {
        let mut w = WorldState::new(Pose2::origin(), ObstacleSet::default());
        let f = w.step(Twist::new(0.5, 0.0));
        assert!((w.robot.x - 1.0 / 6.0).abs() < 1e-12);
        assert!(!f.collision && !f.bumpy && !f.ped_violation && !f.ped_collision);
        assert_eq!(w.twist, Twist::new(0.5, 0.0));
        assert!((w.time - DT).abs() < 1e-15);
    }

    #[test]
    fn wall_contact_within_one_step() {
        let mut w = wall_ahead(0.4);
        let f = w.step(Twist::new(0.5, 0.0));
        assert!(f.collision);
        assert!(f.d_s <= ROBOT_RADIUS);
        assert_eq!(w.twist, Twist::ZERO);
    }

    #[test]
    fn contact_cannot_tunnel() {
        let mut w = wall_ahead(0.7);
        for _ in 0..50 {
            w.step(Twist::new(0.5, 0.0));
        }
        assert!(w.obstacles.distance(w.robot.position()) >= MIN_CLEARANCE);
        assert!(w.flags().collision);
    }

    #[test]
    fn backing_off_is_allowed() {
        let mut w = wall_ahead(0.7);
        for _ in 0..10 {
            w.step(Twist::new(0.5, 0.0));
        }
        w.robot.theta = std::f64::consts::PI;
        for _ in 0..6 {
            w.step(Twist::new(0.5, 0.0));
        }
        assert!(!w.flags().collision);
    }

    #[test]
    fn pedestrian_at_point_nine_violates() {
        let mut w = WorldState::new(Pose2::origin(), ObstacleSet::default());
        w.peds.push(Pedestrian::new([0.9, 0.0], vec![]));
        w.social.strength = 0.0;
        let f = w.flags();
        assert!(f.ped_violation);
        assert!((f.d_h - 0.9).abs() < 1e-12);
    }

    #[test]
    fn boundary_at_one_metre_is_not_a_violation() {
        let mut w = WorldState::new(Pose2::origin(), ObstacleSet::default());
        w.peds.push(Pedestrian::new([1.0, 0.0], vec![]));
        assert!(!w.flags().ped_violation);
    }

    #[test]
    fn bumpy_requires_motion_on_patch() {
        let mut w = WorldState::new(Pose2::origin(), ObstacleSet::default());
        w.bumpy_patches = Arc::new(vec![ConvexPolygon::rect([-1.0, -1.0], [3.0, 1.0])]);
        assert!(!w.step(Twist::ZERO).bumpy);
        assert!(w.step(Twist::new(0.3, 0.0)).bumpy);
    }

    #[test]
    fn pedestrian_walks_to_waypoint() {
        let mut w = WorldState::new(Pose2::new(-20.0, 0.0, 0.0), ObstacleSet::default());
        w.peds.push(Pedestrian::new([0.0, 0.0], vec![[6.0, 0.0], [0.0, 0.0]]));
        for _ in 0..9 {
            w.step(Twist::ZERO);
        }
        let p = w.peds[0].position();
        assert!(p[0] > 2.0 && p[0] < 4.0, "{p:?}");
        let speed = w.peds[0].velocity[0].hypot(w.peds[0].velocity[1]);
        assert!((speed - 1.2).abs() < 0.05);
    }

    proptest! {
        #[test]
        fn pedestrians_stay_out_of_obstacles(x in 1.0f64..5.0, y in -1.0f64..1.0, seed_wp in 0.0f64..std::f64::consts::TAU) {
            let obs = ObstacleSet {
                circles: vec![Circle { center: [3.0, 0.0], radius: 0.8 }],
                polygons: vec![ConvexPolygon::rect([-1.0, 3.0], [7.0, 4.0])],
            };
            let mut w = WorldState::new(Pose2::new(-10.0, -10.0, 0.0), obs);
            let start = if dist([x, y], [3.0, 0.0]) < 1.2 { [x, 2.5] } else { [x, y] };
            let far = [3.0 + 4.0 * seed_wp.cos(), 4.0 * seed_wp.sin().min(0.0)];
            w.peds.push(Pedestrian::new(start, vec![far, [3.0, 0.0]]));
            w.peds.push(Pedestrian::new([0.0, -2.0], vec![[6.0, -2.0], [0.0, 2.0]]));
            for _ in 0..90 {
                w.step(Twist::ZERO);
                prop_assert_eq!(w.peds.len(), 2);
                for p in &w.peds {
                    prop_assert!(!w.obstacles.contains(p.position()));
                }
            }
        }
    }
}
