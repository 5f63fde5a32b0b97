//! Drifting odometry corrected by fiducial markers.
//!
//! A survey pass records, for every marker, the robot pose in the global
//! frame and the marker pose seen from the robot. During operation each
//! detection re-anchors the odometry with a correction transform that is
//! applied until the next detection.

use crate::geometry::{wrap_angle, Pose2, Transform2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OdometryModel {
    /// Per-step translation noise (m per sqrt(step)), each axis.
    pub sigma_t: f64,
    /// Per-step rotation noise (rad per sqrt(step)).
    pub sigma_r: f64,
    /// Constant per-step translation bias in the robot frame.
    pub bias_t: [f64; 2],
    pub bias_r: f64,
}

impl Default for OdometryModel {
    fn default() -> Self {
        Self {
            sigma_t: 0.005,
            sigma_r: 0.002,
            bias_t: [0.0, 0.0],
            bias_r: 0.0,
        }
    }
}

impl OdometryModel {
    pub fn noise_free() -> Self {
        Self {
            sigma_t: 0.0,
            sigma_r: 0.0,
            bias_t: [0.0, 0.0],
            bias_r: 0.0,
        }
    }

    pub fn is_noise_free(&self) -> bool {
        *self == Self::noise_free()
    }

    /// Integrates one measured relative motion onto the odometry pose.
    pub fn propagate<R: Rng + ?Sized>(
        &self,
        odom: &Transform2,
        true_delta: &Transform2,
        rng: &mut R,
    ) -> Transform2 {
        if self.is_noise_free() {
            return odom.compose(true_delta);
        }
        let nt = Normal::new(0.0, self.sigma_t.max(0.0)).expect("finite sigma");
        let nr = Normal::new(0.0, self.sigma_r.max(0.0)).expect("finite sigma");
        let noisy = Transform2::new(
            true_delta.rotation + self.bias_r + nr.sample(rng),
            [
                true_delta.translation[0] + self.bias_t[0] + nt.sample(rng),
                true_delta.translation[1] + self.bias_t[1] + nt.sample(rng),
            ],
        );
        odom.compose(&noisy)
    }
}

/// Survey record of one marker.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkerRecord {
    /// Robot pose in the global frame at survey time.
    pub robot_at_survey: Transform2,
    /// Marker pose in the robot frame at survey time.
    pub marker_in_robot: Transform2,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MarkerRegistry {
    pub markers: Vec<MarkerRecord>,
}

impl MarkerRegistry {
    /// Noise-free survey: the robot stood at `viewpoints[i]` when it saw marker i.
    pub fn survey(markers: &[Pose2], viewpoints: &[Pose2]) -> Self {
        let markers = markers
            .iter()
            .zip(viewpoints)
            .map(|(m, v)| MarkerRecord {
                robot_at_survey: v.to_transform(),
                marker_in_robot: v.to_transform().inverse().compose(&m.to_transform()),
            })
            .collect();
        Self { markers }
    }

    /// Global marker pose implied by the survey.
    pub fn marker_global(&self, i: usize) -> Transform2 {
        let r = &self.markers[i];
        r.robot_at_survey.compose(&r.marker_in_robot)
    }

    pub fn len(&self) -> usize {
        self.markers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.markers.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionModel {
    pub range: f64,
    pub half_fov: f64,
}

impl Default for DetectionModel {
    fn default() -> Self {
        Self {
            range: 4.0,
            half_fov: 60f64.to_radians(),
        }
    }
}

impl DetectionModel {
    pub fn visible(&self, robot: &Pose2, marker: &Pose2) -> bool {
        let d = robot.distance_to(marker);
        if d > self.range {
            return false;
        }
        let bearing = (marker.y - robot.y).atan2(marker.x - robot.x);
        wrap_angle(bearing - robot.theta).abs() <= self.half_fov
    }
}

/// Correction that makes `correction * odom` equal the marker-derived pose
/// at the moment of detection.
pub fn update_correction(
    record: &MarkerRecord,
    marker_in_robot_now: &Transform2,
    odom: &Transform2,
) -> Transform2 {
    record
        .robot_at_survey
        .compose(&record.marker_in_robot)
        .compose(&odom.compose(marker_in_robot_now).inverse())
}

pub fn estimate_pose(correction: &Transform2, odom: &Transform2) -> Pose2 {
    correction.compose(odom).to_pose()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkerEvent {
    pub step: u64,
    pub marker: usize,
    pub error_before: f64,
    pub error_after: f64,
}

/// One estimator instance per environment loop.
#[derive(Clone, Debug)]
pub struct Localizer {
    pub odometry_model: OdometryModel,
    pub detection: DetectionModel,
    pub registry: MarkerRegistry,
    /// Where the markers physically are (used only to synthesize detections).
    marker_truth: Vec<Pose2>,
    odom: Transform2,
    correction: Transform2,
    step: u64,
    pub events: Vec<MarkerEvent>,
}

impl Localizer {
    pub fn new(
        odometry_model: OdometryModel,
        detection: DetectionModel,
        registry: MarkerRegistry,
        marker_truth: Vec<Pose2>,
        start: Pose2,
    ) -> Self {
        Self {
            odometry_model,
            detection,
            registry,
            marker_truth,
            odom: start.to_transform(),
            correction: Transform2::identity(),
            step: 0,
            events: Vec::new(),
        }
    }

    pub fn estimate(&self) -> Pose2 {
        estimate_pose(&self.correction, &self.odom)
    }

    pub fn correction(&self) -> Transform2 {
        self.correction
    }

    pub fn odometry(&self) -> Transform2 {
        self.odom
    }

    /// Advances odometry by the true motion and processes any visible marker.
    pub fn step<R: Rng + ?Sized>(&mut self, prev: &Pose2, next: &Pose2, rng: &mut R) {
        self.step += 1;
        let delta = prev.to_transform().inverse().compose(&next.to_transform());
        self.odom = self.odometry_model.propagate(&self.odom, &delta, rng);
        self.detect(next);
    }

    /// A displacement applied by hand (operator reset); tracked without noise.
    pub fn teleport(&mut self, prev: &Pose2, next: &Pose2) {
        let delta = prev.to_transform().inverse().compose(&next.to_transform());
        self.odom = self.odom.compose(&delta);
    }

    fn detect(&mut self, truth: &Pose2) {
        for i in 0..self.marker_truth.len().min(self.registry.len()) {
            let m = self.marker_truth[i];
            if !self.detection.visible(truth, &m) {
                continue;
            }
            let seen = truth.to_transform().inverse().compose(&m.to_transform());
            let before = self.estimate().distance_to(truth);
            self.correction = update_correction(&self.registry.markers[i], &seen, &self.odom);
            let after = self.estimate().distance_to(truth);
            self.events.push(MarkerEvent {
                step: self.step,
                marker: i,
                error_before: before,
                error_after: after,
            });
        }
    }
}
