//! Sampling planner over a fixed set of constant-twist motion primitives.

use crate::geometry::{dist, unicycle_step, wrap_angle, Point2, Pose2, Twist, DT, ROBOT_RADIUS};
use crate::objective::{PedestrianTrack, HORIZON, INTIMATE_DISTANCE};
use serde::{Deserialize, Serialize};

/// Cost added by either filter.
pub const FILTER_COST: f64 = 1000.0;
pub const HEADING_WEIGHT: f64 = 0.3;

pub const PRIMITIVE_TWISTS: [Twist; 15] = [
    Twist::new(0.0, 0.0),
    Twist::new(0.2, 0.0),
    Twist::new(0.2, 0.3),
    Twist::new(0.2, 0.6),
    Twist::new(0.2, 0.9),
    Twist::new(0.2, -0.3),
    Twist::new(0.2, -0.6),
    Twist::new(0.2, -0.9),
    Twist::new(0.5, 0.0),
    Twist::new(0.5, 0.3),
    Twist::new(0.5, 0.6),
    Twist::new(0.5, 0.9),
    Twist::new(0.5, -0.3),
    Twist::new(0.5, -0.6),
    Twist::new(0.5, -0.9),
];

#[derive(Clone, Debug, PartialEq)]
pub struct MotionPrimitive {
    pub twist: Twist,
    /// Poses after steps 1..=HORIZON, starting from the robot origin.
    pub poses: Vec<Pose2>,
}

impl MotionPrimitive {
    pub fn new(twist: Twist) -> Self {
        let mut p = Pose2::origin();
        let poses = (0..HORIZON)
            .map(|_| {
                p = unicycle_step(p, twist, DT);
                p
            })
            .collect();
        Self { twist, poses }
    }
}

pub fn primitives() -> Vec<MotionPrimitive> {
    PRIMITIVE_TWISTS.iter().map(|&u| MotionPrimitive::new(u)).collect()
}

/// Planner inputs in the robot frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlannerView {
    pub goal: Pose2,
    pub cloud: Vec<Point2>,
    pub peds: Vec<PedestrianTrack>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveCost {
    pub goal: f64,
    pub obstacle: f64,
    pub pedestrian: f64,
    pub d_s: f64,
    pub d_ped: f64,
    pub total: f64,
}

pub fn score_primitive(prim: &MotionPrimitive, view: &PlannerView) -> PrimitiveCost {
    let mut goal = f64::INFINITY;
    let mut d_s = f64::INFINITY;
    let mut d_ped = f64::INFINITY;
    for (i, p) in prim.poses.iter().enumerate() {
        let dx = p.x - view.goal.x;
        let dy = p.y - view.goal.y;
        let dth = wrap_angle(p.theta - view.goal.theta);
        goal = goal.min(dx * dx + dy * dy + HEADING_WEIGHT * dth * dth);
        let q = p.position();
        for &c in &view.cloud {
            d_s = d_s.min(dist(q, c));
        }
        let t = (i + 1) as f64 * DT;
        for ped in &view.peds {
            d_ped = d_ped.min(dist(q, ped.predict(t)));
        }
    }
    let obstacle = if d_s < ROBOT_RADIUS { FILTER_COST } else { 0.0 };
    let pedestrian = if d_ped < INTIMATE_DISTANCE { FILTER_COST } else { 0.0 };
    PrimitiveCost {
        goal,
        obstacle,
        pedestrian,
        d_s,
        d_ped,
        total: goal + obstacle + pedestrian,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanDecision {
    pub index: usize,
    pub twist: Twist,
    pub costs: Vec<PrimitiveCost>,
    pub boxed_in: bool,
}

#[derive(Clone, Debug)]
pub struct Planner {
    prims: Vec<MotionPrimitive>,
}

impl Default for Planner {
    fn default() -> Self {
        Self { prims: primitives() }
    }
}

impl Planner {
    pub fn primitives(&self) -> &[MotionPrimitive] {
        &self.prims
    }

    pub fn select_action(&self, view: &PlannerView) -> PlanDecision {
        let costs: Vec<PrimitiveCost> = self.prims.iter().map(|p| score_primitive(p, view)).collect();
        let mut best = 0;
        for (j, c) in costs.iter().enumerate() {
            if c.total < costs[best].total {
                best = j;
            }
        }
        if costs[best].total >= FILTER_COST {
            return PlanDecision {
                index: 0,
                twist: Twist::ZERO,
                costs,
                boxed_in: true,
            };
        }
        PlanDecision {
            index: best,
            twist: self.prims[best].twist,
            costs,
            boxed_in: false,
        }
    }
}

pub fn select_action(view: &PlannerView) -> PlanDecision {
    Planner::default().select_action(view)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ConvexPolygon, ObstacleSet};

    fn wall_cloud(x: f64) -> Vec<Point2> {
        let obs = ObstacleSet {
            circles: vec![],
            polygons: vec![ConvexPolygon::rect([x, -10.0], [x + 1.0, 10.0])],
        };
        obs.point_cloud(&Pose2::origin(), 64, 5.0)
    }

    #[test]
    fn primitive_set_order_and_size() {
        let p = primitives();
        assert_eq!(p.len(), 15);
        assert_eq!(p[0].twist, Twist::ZERO);
        assert_eq!(p[14].twist, Twist::new(0.5, -0.9));
        for m in &p {
            assert_eq!(m.poses.len(), 8);
        }
        assert!((p[8].poses[7].x - 0.5 * 8.0 * DT).abs() < 1e-12);
    }

    #[test]
    fn pose_tables_follow_the_dynamics() {
        for m in primitives() {
            let mut q = Pose2::origin();
            for p in &m.poses {
                q = unicycle_step(q, m.twist, DT);
                assert_eq!(*p, q);
            }
        }
    }

    #[test]
    fn free_space_goal_ahead_goes_straight_fast() {
        let view = PlannerView {
            goal: Pose2::new(2.0, 0.0, 0.0),
            ..Default::default()
        };
        let d = select_action(&view);
        assert_eq!(d.twist, Twist::new(0.5, 0.0));
        assert!(!d.boxed_in);
    }

    #[test]
    fn wall_at_point_four_boxes_in() {
        let view = PlannerView {
            goal: Pose2::new(2.0, 0.0, 0.0),
            cloud: wall_cloud(0.4),
            peds: vec![],
        };
        let d = select_action(&view);
        assert!(d.costs.iter().all(|c| c.obstacle == FILTER_COST));
        assert!(d.boxed_in);
        assert_eq!(d.twist, Twist::ZERO);
    }

    #[test]
    fn wall_at_point_six_only_stop_survives() {
        let view = PlannerView {
            goal: Pose2::new(2.0, 0.0, 0.0),
            cloud: wall_cloud(0.6),
            peds: vec![],
        };
        let d = select_action(&view);
        assert_eq!(d.costs[0].obstacle, 0.0);
        assert!(d.costs[1..].iter().all(|c| c.obstacle == FILTER_COST));
        assert_eq!(d.index, 0);
        assert!(!d.boxed_in);
    }

    #[test]
    fn crossing_pedestrian_on_the_left_filters_left_turns() {
        let view = PlannerView {
            goal: Pose2::new(2.0, 0.0, 0.0),
            cloud: vec![],
            peds: vec![PedestrianTrack {
                position: [1.6, 0.8],
                velocity: [-0.4, 0.0],
            }],
        };
        let d = select_action(&view);
        for (j, u) in PRIMITIVE_TWISTS.iter().enumerate() {
            if u.omega > 0.0 {
                assert_eq!(d.costs[j].pedestrian, FILTER_COST, "primitive {j}");
            }
        }
        assert!(d.costs.iter().any(|c| c.pedestrian == 0.0));
        assert!(PRIMITIVE_TWISTS[d.index].omega <= 0.0);
    }

    #[test]
    fn ties_go_to_the_lower_index() {
        // Goal straight behind: symmetric left/right turns tie.
        let view = PlannerView {
            goal: Pose2::new(-2.0, 0.0, std::f64::consts::PI),
            ..Default::default()
        };
        let d = select_action(&view);
        let best = d.costs[d.index].total;
        let first = d.costs.iter().position(|c| c.total == best).unwrap();
        assert_eq!(first, d.index);
    }

    #[test]
    fn filters_dominate_goal_term() {
        // Largest goal term on a 30 m scene is still below the filter cost.
        let view = PlannerView {
            goal: Pose2::new(20.0, 20.0, 3.0),
            ..Default::default()
        };
        for c in select_action(&view).costs {
            assert!(c.goal < FILTER_COST);
        }
    }
}
