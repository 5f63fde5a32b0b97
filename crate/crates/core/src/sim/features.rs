//! Fixed observation map from the world to the policy input.

use super::world::WorldState;
use crate::geometry::{Point2, Pose2, Twist};
use crate::objective::{ObjectiveContext, PedestrianTrack};
use serde::{Deserialize, Serialize};

pub const GOAL_DIM: usize = 4;
pub const PREV_ACTION_DIM: usize = 2;
pub const N_FEATURE_RAYS: usize = 16;
pub const PED_SLOTS: usize = 3;
pub const PED_DIM: usize = 4;
pub const FEATURE_DIM: usize = GOAL_DIM + PREV_ACTION_DIM + N_FEATURE_RAYS + PED_SLOTS * PED_DIM;

/// Offsets of each block inside a feature vector.
pub const RAYS_OFFSET: usize = GOAL_DIM + PREV_ACTION_DIM;
pub const PEDS_OFFSET: usize = RAYS_OFFSET + N_FEATURE_RAYS;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensingConfig {
    pub feature_range: f64,
    pub cloud_rays: usize,
    pub cloud_range: f64,
    /// Pedestrians farther than this are not sensed.
    pub ped_range: f64,
    /// Sub-rays per feature ray; each feature is the minimum over its angular bin.
    pub ray_oversample: usize,
}

impl Default for SensingConfig {
    fn default() -> Self {
        Self {
            feature_range: 4.0,
            cloud_rays: 64,
            cloud_range: 5.0,
            ped_range: 6.0,
            ray_oversample: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn goal_block(&self) -> &[f64] {
        &self.0[..GOAL_DIM]
    }

    pub fn rays(&self) -> &[f64] {
        &self.0[RAYS_OFFSET..PEDS_OFFSET]
    }

    pub fn ped_slot(&self, k: usize) -> &[f64] {
        &self.0[PEDS_OFFSET + k * PED_DIM..PEDS_OFFSET + (k + 1) * PED_DIM]
    }
}

/// Sensed pedestrians in the robot frame, nearest first.
pub fn sensed_pedestrians(w: &WorldState, range: f64) -> Vec<PedestrianTrack> {
    let r = w.robot;
    let mut out: Vec<(f64, PedestrianTrack)> = w
        .peds
        .iter()
        .filter_map(|p| {
            let q = p.position();
            let d = crate::geometry::dist(q, r.position());
            (d <= range).then(|| {
                (
                    d,
                    PedestrianTrack {
                        position: r.to_local(q),
                        velocity: r.to_transform().inverse().rotate(p.velocity),
                    },
                )
            })
        })
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out.into_iter().map(|(_, t)| t).collect()
}

/// Nearest range per angular bin; bin i is centred on bearing 2*pi*i/n.
pub fn binned_ranges(w: &WorldState, n: usize, oversample: usize, range: f64) -> Vec<f64> {
    let m = oversample.max(1);
    let fine = w.all_obstacles().ray_cast(&w.robot, n * m, range);
    let mut out = vec![range; n];
    for (j, r) in fine.into_iter().enumerate() {
        let bin = ((j + m / 2) / m) % n;
        out[bin] = out[bin].min(r);
    }
    out
}

/// `goal` is expressed relative to `estimate`; everything else is sensed from the true pose.
pub fn extract_features(
    w: &WorldState,
    estimate: &Pose2,
    goal: &Pose2,
    prev_action: Twist,
    sensing: &SensingConfig,
) -> FeatureVector {
    let mut f = Vec::with_capacity(FEATURE_DIM);
    let g = estimate.relative(goal);
    f.extend([g.x, g.y, g.theta.sin(), g.theta.cos()]);
    f.extend([prev_action.v, prev_action.omega]);
    f.extend(
        binned_ranges(w, N_FEATURE_RAYS, sensing.ray_oversample, sensing.feature_range)
            .into_iter()
            .map(|r| r / sensing.feature_range),
    );
    let peds = sensed_pedestrians(w, sensing.ped_range);
    let own = [w.twist.v, 0.0];
    for k in 0..PED_SLOTS {
        match peds.get(k) {
            Some(p) => f.extend([
                p.position[0],
                p.position[1],
                p.velocity[0] - own[0],
                p.velocity[1] - own[1],
            ]),
            None => f.extend([0.0; PED_DIM]),
        }
    }
    debug_assert_eq!(f.len(), FEATURE_DIM);
    FeatureVector(f)
}

/// Objective inputs in the robot frame. The range cloud covers static
/// geometry only; small objects are below its resolution.
pub fn objective_context(
    w: &WorldState,
    estimate: &Pose2,
    goal: &Pose2,
    prev_action: Twist,
    sensing: &SensingConfig,
) -> ObjectiveContext {
    let cloud: Vec<Point2> = w
        .obstacles
        .point_cloud(&w.robot, sensing.cloud_rays, sensing.cloud_range);
    ObjectiveContext {
        start: Pose2::origin(),
        goal: estimate.relative(goal),
        cloud,
        peds: sensed_pedestrians(w, sensing.ped_range),
        prev_action,
    }
}
