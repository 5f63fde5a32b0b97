//! Per-step reward.

use crate::geometry::{Pose2, Twist, ROBOT_RADIUS};
use crate::sim::EventFlags;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConstants {
    pub collision: f64,
    pub bumpy: f64,
    pub intimate: f64,
    pub robot_radius: f64,
    pub intimate_margin: f64,
    pub heading_weight: f64,
}

impl Default for RewardConstants {
    fn default() -> Self {
        Self {
            collision: 0.3,
            bumpy: 0.3,
            intimate: 0.1,
            robot_radius: ROBOT_RADIUS,
            intimate_margin: 0.5,
            heading_weight: 0.1,
        }
    }
}

/// Velocity projected on the unit goal direction plus event penalties.
/// Poses are the localization estimate; flags come from onboard sensing.
pub fn compute_reward(
    estimate: &Pose2,
    goal: &Pose2,
    a: Twist,
    flags: &EventFlags,
    k: &RewardConstants,
) -> f64 {
    let g = estimate.relative(goal);
    let n = g.x.hypot(g.y);
    let along = if n > 1e-12 { a.v * g.x / n } else { 0.0 };
    let turn = k.heading_weight * a.omega * g.theta / PI;
    let c_s = if flags.collision || flags.ped_collision {
        -k.collision
    } else if flags.bumpy {
        -k.bumpy
    } else {
        0.0
    };
    let c_d = if flags.d_h < k.intimate_margin + k.robot_radius {
        -k.intimate
    } else {
        0.0
    };
    along + turn + c_s + c_d
}
