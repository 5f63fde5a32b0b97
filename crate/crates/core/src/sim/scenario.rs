//! Scenario files: static layout, pedestrians, course, markers and sensing.

use super::course::TopoCourse;
use super::features::SensingConfig;
use super::intervention::InterventionRules;
use super::world::{Pedestrian, SocialForceParams, WorldState};
use crate::error::{Error, Result};
use crate::geometry::{Circle, ConvexPolygon, ObstacleSet, Point2, Pose2, ROBOT_RADIUS};
use crate::localization::{DetectionModel, MarkerRegistry, OdometryModel};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use std::path::Path;
use std::sync::Arc;

const COURSE1: &str = include_str!("../../scenarios/course1.toml");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CourseSpec {
    /// Polyline the nodes are sampled from.
    #[serde(default)]
    pub path: Vec<Point2>,
    /// Explicit nodes (x, y, theta); overrides `path` when non-empty.
    #[serde(default)]
    pub nodes: Vec<[f64; 3]>,
    #[serde(default)]
    pub looped: bool,
    #[serde(default = "default_spacing")]
    pub node_spacing: f64,
    #[serde(default)]
    pub corner_radius: f64,
}

fn default_spacing() -> f64 {
    1.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PedestrianSpec {
    pub start: Point2,
    #[serde(default)]
    pub waypoints: Vec<Point2>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolygonSpec {
    pub vertices: Vec<Point2>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmallObjectSpec {
    pub count: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    pub lateral_offset: f64,
    /// Keep this much path length free after the start and before the finish.
    pub start_clearance: f64,
    /// Minimum path-length separation between objects.
    pub separation: f64,
}

impl Default for SmallObjectSpec {
    fn default() -> Self {
        Self {
            count: 0,
            radius_min: 0.1,
            radius_max: 0.15,
            lateral_offset: 0.3,
            start_clearance: 3.0,
            separation: 4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkerSpec {
    /// Explicit marker poses; generated along the course when empty.
    pub poses: Vec<[f64; 3]>,
    pub spacing: f64,
    /// Positive is to the right of the direction of travel.
    pub lateral_offset: f64,
    /// Path length between the survey viewpoint and the marker.
    pub view_distance: f64,
}

impl Default for MarkerSpec {
    fn default() -> Self {
        Self {
            poses: Vec::new(),
            spacing: 15.0,
            lateral_offset: 1.4,
            view_distance: 2.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub course: CourseSpec,
    /// Start node index.
    #[serde(default)]
    pub start_node: usize,
    #[serde(default)]
    pub walls: Vec<PolygonSpec>,
    #[serde(default)]
    pub circles: Vec<Circle>,
    #[serde(default)]
    pub pedestrians: Vec<PedestrianSpec>,
    #[serde(default)]
    pub bumpy_patches: Vec<PolygonSpec>,
    #[serde(default)]
    pub small_objects: SmallObjectSpec,
    #[serde(default)]
    pub markers: MarkerSpec,
    #[serde(default)]
    pub sensing: SensingConfig,
    #[serde(default)]
    pub social: SocialForceParams,
    #[serde(default)]
    pub odometry: OdometryModel,
    #[serde(default)]
    pub detection: DetectionModel,
    #[serde(default)]
    pub intervention: InterventionRules,
}

/// Everything derived from a scenario that stays fixed during a run.
#[derive(Clone, Debug)]
pub struct SceneAssets {
    pub scenario: Scenario,
    pub course: TopoCourse,
    pub obstacles: Arc<ObstacleSet>,
    pub patches: Arc<Vec<ConvexPolygon>>,
    pub markers: Vec<Pose2>,
    pub registry: MarkerRegistry,
}

impl Scenario {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read scenario {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Built-in scenarios by name.
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "course1" => Self::from_toml_str(COURSE1),
            _ => Err(Error::Config(format!("unknown built-in scenario `{name}`"))),
        }
    }

    /// A path name, or a built-in name prefixed with `builtin:`.
    pub fn resolve(spec: &str, base: Option<&Path>) -> Result<Self> {
        if let Some(name) = spec.strip_prefix("builtin:") {
            return Self::builtin(name);
        }
        let p = Path::new(spec);
        let p = match base {
            Some(b) if p.is_relative() => b.join(p),
            _ => p.to_path_buf(),
        };
        Self::load(&p)
    }

    /// Straight open corridor-free test scene: nodes along +x.
    pub fn open_line(length: f64) -> Self {
        Self {
            name: "open".into(),
            course: CourseSpec {
                path: vec![[0.0, 0.0], [length, 0.0]],
                nodes: vec![],
                looped: false,
                node_spacing: 1.5,
                corner_radius: 0.0,
            },
            start_node: 0,
            walls: vec![],
            circles: vec![],
            pedestrians: vec![],
            bumpy_patches: vec![],
            small_objects: SmallObjectSpec::default(),
            markers: MarkerSpec {
                spacing: 0.0,
                ..MarkerSpec::default()
            },
            sensing: SensingConfig::default(),
            social: SocialForceParams::default(),
            odometry: OdometryModel::default(),
            detection: DetectionModel::default(),
            intervention: InterventionRules::default(),
        }
    }

    pub fn obstacles(&self) -> ObstacleSet {
        ObstacleSet {
            circles: self.circles.clone(),
            polygons: self.walls.iter().map(|w| ConvexPolygon::new(w.vertices.clone())).collect(),
        }
    }

    pub fn build(&self) -> Result<SceneAssets> {
        let course = self.build_course()?;
        let obstacles = self.obstacles();
        for (i, n) in course.nodes.iter().enumerate() {
            if obstacles.distance(n.position()) < ROBOT_RADIUS {
                return Err(Error::Config(format!("course node {i} is within the robot radius of an obstacle")));
            }
        }
        if self.start_node >= course.len() {
            return Err(Error::Config(format!("start_node {} out of range", self.start_node)));
        }
        for (i, p) in self.pedestrians.iter().enumerate() {
            if obstacles.contains(p.start) {
                return Err(Error::Config(format!("pedestrian {i} starts inside an obstacle")));
            }
        }
        let markers = self.marker_poses(&course);
        let viewpoints = self.marker_viewpoints(&course, &markers);
        let registry = MarkerRegistry::survey(&markers, &viewpoints);
        Ok(SceneAssets {
            scenario: self.clone(),
            course,
            obstacles: Arc::new(obstacles),
            patches: Arc::new(
                self.bumpy_patches
                    .iter()
                    .map(|p| ConvexPolygon::new(p.vertices.clone()))
                    .collect(),
            ),
            markers,
            registry,
        })
    }

    fn build_course(&self) -> Result<TopoCourse> {
        let c = &self.course;
        let course = if !c.nodes.is_empty() {
            TopoCourse::new(c.nodes.iter().map(|n| Pose2::new(n[0], n[1], n[2])).collect(), c.looped)
        } else if c.path.len() >= 2 {
            let path = if c.corner_radius > 0.0 {
                round_corners(&c.path, c.looped, c.corner_radius)
            } else {
                c.path.clone()
            };
            TopoCourse::from_path(&path, c.looped, c.node_spacing)
        } else {
            return Err(Error::Config("course needs `nodes` or a `path` with at least two points".into()));
        };
        for k in 0..course.len() {
            let j = course.successor(k);
            if j != k && course.nodes[k].distance_to(&course.nodes[j]) > super::course::MAX_NODE_SPACING + 1e-9 {
                return Err(Error::Config(format!("course nodes {k} and {j} are more than 2 m apart")));
            }
        }
        Ok(course)
    }

    fn marker_poses(&self, course: &TopoCourse) -> Vec<Pose2> {
        let m = &self.markers;
        if !m.poses.is_empty() {
            return m.poses.iter().map(|p| Pose2::new(p[0], p[1], p[2])).collect();
        }
        if m.spacing <= 0.0 {
            return Vec::new();
        }
        let total = course.length();
        let mut out = Vec::new();
        let mut s = 0.5 * m.spacing;
        while s < total {
            let p = course.pose_at(s);
            let right = p.theta - FRAC_PI_2;
            out.push(Pose2::new(
                p.x + m.lateral_offset * right.cos(),
                p.y + m.lateral_offset * right.sin(),
                p.theta + FRAC_PI_2,
            ));
            s += m.spacing;
        }
        out
    }

    fn marker_viewpoints(&self, course: &TopoCourse, markers: &[Pose2]) -> Vec<Pose2> {
        let line = course.polyline();
        markers
            .iter()
            .map(|m| {
                // Walk back from the nearest path point until the marker is in view.
                let s_near = nearest_arc(&line, m.position());
                let mut back = self.markers.view_distance;
                while back > 0.0 {
                    let v = course.pose_at(s_near - back);
                    if self.detection.visible(&v, m) {
                        return v;
                    }
                    back -= 0.25;
                }
                course.pose_at(s_near)
            })
            .collect()
    }

    /// Samples this lap's small objects.
    pub fn place_small_objects<R: Rng + ?Sized>(&self, assets: &SceneAssets, rng: &mut R) -> Vec<Circle> {
        let spec = &self.small_objects;
        let total = assets.course.length();
        let lo = spec.start_clearance;
        let hi = total - spec.start_clearance;
        let mut out: Vec<(f64, Circle)> = Vec::new();
        let mut attempts = 0;
        while out.len() < spec.count && attempts < 1000 && hi > lo {
            attempts += 1;
            let s = rng.random_range(lo..hi);
            let lat = if spec.lateral_offset > 0.0 {
                rng.random_range(-spec.lateral_offset..=spec.lateral_offset)
            } else {
                0.0
            };
            let radius = if spec.radius_max > spec.radius_min {
                rng.random_range(spec.radius_min..=spec.radius_max)
            } else {
                spec.radius_min
            };
            if out.iter().any(|(s2, _)| (s - s2).abs() < spec.separation) {
                continue;
            }
            let p = assets.course.pose_at(s);
            let left = p.theta + FRAC_PI_2;
            let center = [p.x + lat * left.cos(), p.y + lat * left.sin()];
            if assets.obstacles.distance(center) < radius + 0.3 {
                continue;
            }
            out.push((s, Circle { center, radius }));
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out.into_iter().map(|(_, c)| c).collect()
    }

    pub fn initial_world(&self, assets: &SceneAssets) -> WorldState {
        let mut w = WorldState::new(assets.course.nodes[self.start_node], ObstacleSet::default());
        w.obstacles = assets.obstacles.clone();
        w.bumpy_patches = assets.patches.clone();
        w.social = self.social;
        w.peds = self
            .pedestrians
            .iter()
            .map(|p| Pedestrian::new(p.start, p.waypoints.clone()))
            .collect();
        w
    }
}

fn nearest_arc(line: &[Point2], p: Point2) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    let mut s0 = 0.0;
    for w in line.windows(2) {
        let ab = [w[1][0] - w[0][0], w[1][1] - w[0][1]];
        let l2 = ab[0] * ab[0] + ab[1] * ab[1];
        let t = if l2 > 0.0 {
            (((p[0] - w[0][0]) * ab[0] + (p[1] - w[0][1]) * ab[1]) / l2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let q = [w[0][0] + t * ab[0], w[0][1] + t * ab[1]];
        let d = crate::geometry::dist(p, q);
        if d < best.0 {
            best = (d, s0 + t * l2.sqrt());
        }
        s0 += l2.sqrt();
    }
    best.1
}

/// Replaces interior corners by circular arcs of the given radius.
pub fn round_corners(path: &[Point2], looped: bool, radius: f64) -> Vec<Point2> {
    let n = path.len();
    if n < 3 {
        return path.to_vec();
    }
    let mut out = Vec::new();
    let idx: Vec<usize> = if looped { (0..n).collect() } else { (1..n - 1).collect() };
    if !looped {
        out.push(path[0]);
    }
    for &i in &idx {
        let prev = path[(i + n - 1) % n];
        let cur = path[i];
        let next = path[(i + 1) % n];
        let d1 = unit([cur[0] - prev[0], cur[1] - prev[1]]);
        let d2 = unit([next[0] - cur[0], next[1] - cur[1]]);
        let turn = (d1[0] * d2[1] - d1[1] * d2[0]).atan2(d1[0] * d2[0] + d1[1] * d2[1]);
        if turn.abs() < 1e-6 {
            out.push(cur);
            continue;
        }
        let cut = radius * (turn.abs() / 2.0).tan();
        let a = [cur[0] - d1[0] * cut, cur[1] - d1[1] * cut];
        let h0 = d1[1].atan2(d1[0]);
        let segs = 8;
        let sgn = turn.signum();
        let center = [a[0] - sgn * d1[1] * radius, a[1] + sgn * d1[0] * radius];
        for k in 0..=segs {
            let h = h0 + turn * k as f64 / segs as f64;
            out.push([center[0] + sgn * h.sin() * radius, center[1] - sgn * h.cos() * radius]);
        }
    }
    if !looped {
        out.push(path[n - 1]);
    }
    out
}

fn unit(v: Point2) -> Point2 {
    let n = v[0].hypot(v[1]).max(1e-12);
    [v[0] / n, v[1] / n]
}
