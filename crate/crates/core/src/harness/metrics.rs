//! Lap metrics.

use crate::geometry::{DT, ROBOT_RADIUS, V_MAX};
use serde::{Deserialize, Serialize};

/// Near-collision margin beyond the robot radius.
pub const NEAR_COLLISION_MARGIN: f64 = 0.1;
pub const INTIMATE_THRESHOLD: f64 = 1.0;

/// One step of a lap trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub dt: f64,
    pub d_h: f64,
    pub d_s: f64,
    pub on_patch: bool,
    pub ped_collision: bool,
    pub object_collision: bool,
    pub intervention: bool,
    /// Distance travelled during the step.
    pub travelled: f64,
    pub reward: f64,
}

impl StepRecord {
    pub fn idle() -> Self {
        Self {
            dt: DT,
            d_h: f64::INFINITY,
            d_s: f64::INFINITY,
            on_patch: false,
            ped_collision: false,
            object_collision: false,
            intervention: false,
            travelled: 0.0,
            reward: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LapRecord {
    pub lap: usize,
    pub idv: f64,
    pub nco: f64,
    pub ufs: f64,
    pub cp: u32,
    pub co: u32,
    pub interventions: u32,
    pub success: bool,
    pub path_length: f64,
    pub elapsed: f64,
    pub spl: f64,
    pub stl: f64,
    pub reward: f64,
    /// Trainer steps completed at the end of the lap.
    pub trainer_steps: u64,
}

fn rising_edges(it: impl Iterator<Item = bool>) -> u32 {
    let mut prev = false;
    let mut n = 0;
    for x in it {
        if x && !prev {
            n += 1;
        }
        prev = x;
    }
    n
}

/// `optimal_length` is the course length; success is lap completion
/// whether or not anyone intervened.
pub fn accumulate_metrics(lap: usize, trace: &[StepRecord], optimal_length: f64, success: bool) -> LapRecord {
    if trace.is_empty() {
        return LapRecord {
            lap,
            ..Default::default()
        };
    }
    let dur = |f: &dyn Fn(&StepRecord) -> bool| trace.iter().filter(|s| f(s)).map(|s| s.dt).sum::<f64>();
    let path_length: f64 = trace.iter().map(|s| s.travelled).sum();
    let elapsed: f64 = trace.iter().map(|s| s.dt).sum();
    let s = if success { 1.0 } else { 0.0 };
    let t_opt = optimal_length / V_MAX;
    LapRecord {
        lap,
        idv: dur(&|r| r.d_h < INTIMATE_THRESHOLD),
        nco: dur(&|r| r.d_s < ROBOT_RADIUS + NEAR_COLLISION_MARGIN),
        ufs: dur(&|r| r.on_patch),
        cp: rising_edges(trace.iter().map(|r| r.ped_collision)),
        co: rising_edges(trace.iter().map(|r| r.object_collision)),
        interventions: trace.iter().filter(|r| r.intervention).count() as u32,
        success,
        path_length,
        elapsed,
        spl: s * optimal_length / path_length.max(optimal_length),
        stl: s * t_opt / elapsed.max(t_opt),
        reward: trace.iter().map(|r| r.reward).sum(),
        trainer_steps: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lap_of(len: f64, time: f64) -> Vec<StepRecord> {
        let n = (time / DT).round() as usize;
        (0..n)
            .map(|_| StepRecord {
                travelled: len / n as f64,
                ..StepRecord::idle()
            })
            .collect()
    }

    #[test]
    fn empty_trace_is_zeroed() {
        let r = accumulate_metrics(3, &[], 10.0, true);
        assert_eq!(r.lap, 3);
        assert!(!r.success && r.spl == 0.0 && r.elapsed == 0.0);
    }

    #[test]
    fn rising_edges_count_episodes() {
        assert_eq!(rising_edges([false, true, true, false, true].into_iter()), 2);
        assert_eq!(rising_edges([true, true].into_iter()), 1);
    }

    #[test]
    fn failed_lap_scores_zero() {
        let r = accumulate_metrics(0, &lap_of(10.0, 20.0), 10.0, false);
        assert_eq!((r.spl, r.stl), (0.0, 0.0));
    }

    fn arb_step() -> impl Strategy<Value = StepRecord> {
        (0.0f64..3.0, 0.0f64..2.0, any::<bool>(), any::<bool>(), 0.0f64..0.2).prop_map(|(h, s, p, c, t)| StepRecord {
            d_h: h,
            d_s: s,
            on_patch: p,
            ped_collision: c,
            travelled: t,
            ..StepRecord::idle()
        })
    }

    proptest! {
        #[test]
        fn durations_split_additively(trace in prop::collection::vec(arb_step(), 0..60), cut in 0usize..60) {
            let cut = cut.min(trace.len());
            let whole = accumulate_metrics(0, &trace, 10.0, true);
            let a = accumulate_metrics(0, &trace[..cut], 10.0, true);
            let b = accumulate_metrics(0, &trace[cut..], 10.0, true);
            prop_assert!((whole.idv - a.idv - b.idv).abs() < 1e-9);
            prop_assert!((whole.nco - a.nco - b.nco).abs() < 1e-9);
            prop_assert!((whole.ufs - a.ufs - b.ufs).abs() < 1e-9);
            prop_assert!((whole.path_length - a.path_length - b.path_length).abs() < 1e-9);
            prop_assert!(whole.idv <= whole.elapsed + 1e-9 && whole.nco <= whole.elapsed + 1e-9);
        }
    }
}
