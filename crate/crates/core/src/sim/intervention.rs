//! Mechanical stand-in for a human supervisor.

use super::course::TopoCourse;
use super::world::{EventFlags, WorldState};
use crate::geometry::{Pose2, DT, ROBOT_RADIUS};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterventionRules {
    pub collision_s: f64,
    pub deviation_m: f64,
    pub no_progress_s: f64,
    /// Extra clearance required around a reset node.
    pub reset_margin: f64,
}

impl Default for InterventionRules {
    fn default() -> Self {
        Self {
            collision_s: 3.0,
            deviation_m: 3.0,
            no_progress_s: 30.0,
            reset_margin: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InterventionReason {
    Collision,
    Deviation,
    NoProgress,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterventionVerdict {
    pub reason: Option<InterventionReason>,
    pub reset_node: usize,
    pub reset_pose: Pose2,
}

/// Running history the rules are evaluated on.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct InterventionMonitor {
    pub contact_steps: u32,
    pub stalled_steps: u32,
}

impl InterventionMonitor {
    pub fn observe(&mut self, flags: &EventFlags, progressed: bool) {
        self.contact_steps = if flags.any_contact() { self.contact_steps + 1 } else { 0 };
        self.stalled_steps = if progressed { 0 } else { self.stalled_steps + 1 };
    }

    pub fn clear(&mut self) {
        *self = Self::default();
    }
}

/// First node at or after the current subgoal with a clear footprint.
pub fn reset_node(w: &WorldState, course: &TopoCourse, rules: &InterventionRules) -> usize {
    let start = course.successor(course.nearest(w.robot.position()));
    let mut k = start;
    for _ in 0..course.len() {
        if w.clearance(course.nodes[k].position()).surface() >= ROBOT_RADIUS + rules.reset_margin {
            return k;
        }
        k = course.successor(k);
    }
    start
}

pub fn check_intervention(
    w: &WorldState,
    course: &TopoCourse,
    monitor: &InterventionMonitor,
    rules: &InterventionRules,
) -> InterventionVerdict {
    let eps = 1e-9;
    let reason = if monitor.contact_steps as f64 * DT >= rules.collision_s - eps {
        Some(InterventionReason::Collision)
    } else if course.lateral_deviation(w.robot.position()) > rules.deviation_m {
        Some(InterventionReason::Deviation)
    } else if monitor.stalled_steps as f64 * DT >= rules.no_progress_s - eps {
        Some(InterventionReason::NoProgress)
    } else {
        None
    };
    let node = reset_node(w, course, rules);
    InterventionVerdict {
        reason,
        reset_node: node,
        reset_pose: course.nodes[node],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ConvexPolygon, ObstacleSet, Twist};

    fn straight_course() -> TopoCourse {
        TopoCourse::new((0..8).map(|i| Pose2::new(i as f64 * 1.5, 0.0, 0.0)).collect(), false)
    }

    #[test]
    fn nominal_tracking_never_intervenes() {
        let course = straight_course();
        let mut w = WorldState::new(course.nodes[0], ObstacleSet::default());
        let mut m = InterventionMonitor::default();
        let mut node = 0;
        for _ in 0..60 {
            let f = w.step(Twist::new(0.5, 0.0));
            let n = course.nearest(w.robot.position());
            m.observe(&f, n > node);
            node = node.max(n);
            assert_eq!(check_intervention(&w, &course, &m, &InterventionRules::default()).reason, None);
        }
    }

    #[test]
    fn wedged_for_three_seconds() {
        let course = straight_course();
        let obs = ObstacleSet {
            circles: vec![],
            polygons: vec![ConvexPolygon::rect([2.4, -0.5], [2.6, 0.5])],
        };
        let mut w = WorldState::new(Pose2::new(1.5, 0.0, 0.0), obs);
        let mut m = InterventionMonitor::default();
        let rules = InterventionRules::default();
        let mut fired = None;
        for k in 0..40 {
            let f = w.step(Twist::new(0.5, 0.0));
            m.observe(&f, false);
            let v = check_intervention(&w, &course, &m, &rules);
            if v.reason.is_some() {
                fired = Some((k, v));
                break;
            }
        }
        let (k, v) = fired.expect("intervention");
        assert_eq!(v.reason, Some(InterventionReason::Collision));
        assert!(m.contact_steps == 9 && k < 15);
        assert!(w.clearance(v.reset_pose.position()).surface() >= ROBOT_RADIUS + rules.reset_margin);
        assert_eq!(v.reset_node, 3);
    }

    #[test]
    fn stationary_thirty_seconds() {
        let course = straight_course();
        let mut w = WorldState::new(course.nodes[2], ObstacleSet::default());
        let mut m = InterventionMonitor::default();
        let rules = InterventionRules::default();
        for k in 1..=90 {
            let f = w.step(Twist::ZERO);
            m.observe(&f, false);
            let r = check_intervention(&w, &course, &m, &rules).reason;
            if k < 90 {
                assert_eq!(r, None);
            } else {
                assert_eq!(r, Some(InterventionReason::NoProgress));
            }
        }
    }

    #[test]
    fn far_from_course() {
        let course = straight_course();
        let w = WorldState::new(Pose2::new(3.0, 3.5, 0.0), ObstacleSet::default());
        let r = check_intervention(&w, &course, &InterventionMonitor::default(), &InterventionRules::default());
        assert_eq!(r.reason, Some(InterventionReason::Deviation));
    }
}
