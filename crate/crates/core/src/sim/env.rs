//! Closed-loop environment: world, localization, course bookkeeping and rewards.

use super::course::TopoCourse;
use super::features::{extract_features, objective_context, FeatureVector, SensingConfig};
use super::intervention::{check_intervention, InterventionMonitor, InterventionReason, InterventionRules};
use super::scenario::SceneAssets;
use super::world::{derive_flags, EventFlags, WorldState};
use crate::geometry::{dist, Circle, Point2, Pose2, Twist, DT};
use crate::harness::metrics::{accumulate_metrics, LapRecord, StepRecord};
use crate::harness::reward::{compute_reward, RewardConstants};
use crate::localization::Localizer;
use crate::objective::{ActionSeq, ObjectiveContext};
use crate::planner::PlannerView;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub features: FeatureVector,
    pub ctx: ObjectiveContext,
}

impl Observation {
    fn empty() -> Self {
        Self {
            features: FeatureVector(Vec::new()),
            ctx: ObjectiveContext {
                start: Pose2::origin(),
                goal: Pose2::origin(),
                cloud: vec![],
                peds: vec![],
                prev_action: Twist::ZERO,
            },
        }
    }

    pub fn planner_view(&self) -> PlannerView {
        PlannerView {
            goal: self.ctx.goal,
            cloud: self.ctx.cloud.clone(),
            peds: self.ctx.peds.clone(),
        }
    }
}

/// Data kept with a transition so that objective values and flags can be recomputed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionAux {
    pub ctx: ObjectiveContext,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ctx_next: Option<ObjectiveContext>,
    /// Active subgoal (global frame).
    pub goal: Pose2,
    /// Localization estimate the action was chosen from.
    pub estimate: Pose2,
    /// True robot pose after the step.
    pub robot: Pose2,
    pub peds: Vec<Point2>,
    pub small_objects: Vec<Circle>,
    /// Realized speed.
    pub speed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    /// Sequence whose first element was executed.
    pub tau: ActionSeq,
    pub r: f64,
    pub flags: EventFlags,
    pub s_next: Vec<f64>,
    pub done: bool,
    pub aux: TransitionAux,
}

impl Transition {
    /// Flags recomputed from the stored poses.
    pub fn derived_flags(&self, assets: &SceneAssets) -> EventFlags {
        derive_flags(
            &assets.obstacles,
            &self.aux.small_objects,
            &assets.patches,
            &self.aux.peds,
            self.aux.robot.position(),
            self.aux.speed,
        )
    }
}

pub trait Controller {
    fn act(&mut self, obs: &Observation) -> ActionSeq;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvOptions {
    pub reward: RewardConstants,
    /// Store the next state's objective inputs in each transition.
    pub record_next_context: bool,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub transition: Transition,
    pub record: StepRecord,
    pub intervention: Option<InterventionReason>,
    pub lap: Option<LapRecord>,
}

pub struct NavEnv {
    pub assets: SceneAssets,
    pub world: WorldState,
    pub localizer: Localizer,
    pub monitor: InterventionMonitor,
    pub options: EnvOptions,
    rng: ChaCha8Rng,
    i_c: usize,
    subgoal: usize,
    progress: i64,
    best_progress: i64,
    lap_base: i64,
    lap: usize,
    lap_trace: Vec<StepRecord>,
    prev_action: Twist,
    steps: u64,
    current: Observation,
}

impl NavEnv {
    pub fn new(assets: SceneAssets, options: EnvOptions, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sc = &assets.scenario;
        let mut world = sc.initial_world(&assets);
        world.small_objects = sc.place_small_objects(&assets, &mut rng);
        let localizer = Localizer::new(
            sc.odometry,
            sc.detection,
            assets.registry.clone(),
            assets.markers.clone(),
            world.robot,
        );
        let i_c = assets.course.nearest(world.robot.position());
        let subgoal = assets.course.successor(i_c);
        let mut env = Self {
            assets,
            world,
            localizer,
            monitor: InterventionMonitor::default(),
            options,
            rng,
            i_c,
            subgoal,
            progress: 0,
            best_progress: 0,
            lap_base: 0,
            lap: 0,
            lap_trace: Vec::new(),
            prev_action: Twist::ZERO,
            steps: 0,
            current: Observation::empty(),
        };
        env.current = env.compute_observation();
        env
    }

    pub fn course(&self) -> &TopoCourse {
        &self.assets.course
    }

    pub fn sensing(&self) -> &SensingConfig {
        &self.assets.scenario.sensing
    }

    pub fn observation(&self) -> &Observation {
        &self.current
    }

    pub fn subgoal(&self) -> usize {
        self.subgoal
    }

    pub fn lap(&self) -> usize {
        self.lap
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn time(&self) -> f64 {
        self.world.time
    }

    pub fn lap_trace(&self) -> &[StepRecord] {
        &self.lap_trace
    }

    fn compute_observation(&self) -> Observation {
        let est = self.localizer.estimate();
        let goal = self.assets.course.nodes[self.subgoal];
        let sensing = self.assets.scenario.sensing;
        Observation {
            features: extract_features(&self.world, &est, &goal, self.prev_action, &sensing),
            ctx: objective_context(&self.world, &est, &goal, self.prev_action, &sensing),
        }
    }

    fn update_progress(&mut self, p: Point2) -> bool {
        let course = &self.assets.course;
        let n = course.nearest(p);
        self.progress += course.progress(self.i_c, n);
        self.i_c = n;
        self.subgoal = course.successor(n);
        if self.progress > self.best_progress {
            self.best_progress = self.progress;
            true
        } else {
            false
        }
    }

    fn lap_done(&self) -> bool {
        let course = &self.assets.course;
        if course.looped {
            self.progress - self.lap_base >= course.len() as i64
        } else {
            self.i_c + 1 >= course.len()
        }
    }

    /// Executes the first action of `tau`.
    pub fn step(&mut self, tau: &ActionSeq) -> StepOutcome {
        let a = tau.first().clamped();
        let mut tau = if tau.is_empty() { ActionSeq::constant(a, 1) } else { tau.clone() };
        tau.0[0] = a;
        let obs = std::mem::replace(&mut self.current, Observation::empty());
        let est_before = self.localizer.estimate();
        let goal_before = self.assets.course.nodes[self.subgoal];
        let prev_pose = self.world.robot;

        let flags = self.world.step(a);
        self.localizer.step(&prev_pose, &self.world.robot, &mut self.rng);
        self.steps += 1;
        let r = compute_reward(&est_before, &goal_before, self.world.twist, &flags, &self.options.reward);
        let est = self.localizer.estimate();
        let progressed = self.update_progress(est.position());
        self.monitor.observe(&flags, progressed);
        let rules: InterventionRules = self.assets.scenario.intervention;
        let verdict = check_intervention(&self.world, &self.assets.course, &self.monitor, &rules);
        self.prev_action = a;
        let after = self.compute_observation();

        let record = StepRecord {
            dt: DT,
            d_h: flags.d_h,
            d_s: flags.d_s,
            on_patch: flags.on_patch,
            ped_collision: flags.ped_collision,
            object_collision: flags.object_collision,
            intervention: verdict.reason.is_some(),
            travelled: dist(prev_pose.position(), self.world.robot.position()),
            reward: r,
        };
        let transition = Transition {
            s: obs.features.0,
            tau,
            r,
            flags,
            s_next: after.features.0.clone(),
            done: verdict.reason.is_some(),
            aux: TransitionAux {
                ctx: obs.ctx,
                ctx_next: self.options.record_next_context.then(|| after.ctx.clone()),
                goal: goal_before,
                estimate: est_before,
                robot: self.world.robot,
                peds: self.world.ped_positions(),
                small_objects: self.world.small_objects.clone(),
                speed: self.world.twist.v.abs(),
            },
        };
        self.lap_trace.push(record);

        if verdict.reason.is_some() {
            let from = self.world.robot;
            self.world.place_robot(verdict.reset_pose);
            self.localizer.teleport(&from, &verdict.reset_pose);
            self.update_progress(self.localizer.estimate().position());
            self.monitor.clear();
            self.prev_action = Twist::ZERO;
        }

        let mut lap = None;
        if self.lap_done() {
            lap = Some(accumulate_metrics(self.lap, &self.lap_trace, self.assets.course.length(), true));
            self.lap_trace.clear();
            self.lap += 1;
            self.lap_base += self.assets.course.len() as i64;
            let assets = &self.assets;
            self.world.small_objects = assets.scenario.place_small_objects(assets, &mut self.rng);
            if !self.assets.course.looped {
                let from = self.world.robot;
                let start = self.assets.course.nodes[self.assets.scenario.start_node];
                self.world.place_robot(start);
                self.localizer.teleport(&from, &start);
                self.i_c = self.assets.course.nearest(self.localizer.estimate().position());
                self.subgoal = self.assets.course.successor(self.i_c);
                self.progress = 0;
                self.best_progress = 0;
                self.lap_base = 0;
                self.prev_action = Twist::ZERO;
            }
        }
        self.current = if verdict.reason.is_some() || lap.is_some() {
            self.compute_observation()
        } else {
            after
        };
        StepOutcome {
            transition,
            record,
            intervention: verdict.reason,
            lap,
        }
    }

    /// Runs a controller until `laps` laps complete or `max_steps` elapse.
    pub fn run<C: Controller + ?Sized>(&mut self, ctrl: &mut C, laps: usize, max_steps: u64) -> Vec<LapRecord> {
        let mut out = Vec::new();
        let mut n = 0;
        while out.len() < laps && n < max_steps {
            let tau = ctrl.act(&self.current);
            if let Some(l) = self.step(&tau).lap {
                out.push(l);
            }
            n += 1;
        }
        out
    }
}

/// The sampling planner as a controller.
#[derive(Clone, Debug, Default)]
pub struct PlannerController {
    pub planner: crate::planner::Planner,
    pub horizon: usize,
    pub last: Option<crate::planner::PlanDecision>,
}

impl PlannerController {
    pub fn new() -> Self {
        Self {
            horizon: crate::objective::HORIZON,
            ..Default::default()
        }
    }
}

impl Controller for PlannerController {
    fn act(&mut self, obs: &Observation) -> ActionSeq {
        let d = self.planner.select_action(&obs.planner_view());
        let tau = ActionSeq::constant(d.twist, self.horizon.max(1));
        self.last = Some(d);
        tau
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scenario::Scenario;

    #[test]
    fn planner_completes_open_line() {
        let assets = Scenario::open_line(9.0).build().unwrap();
        let mut env = NavEnv::new(assets, EnvOptions::default(), 1);
        let laps = env.run(&mut PlannerController::new(), 1, 400);
        assert_eq!(laps.len(), 1);
        assert_eq!(laps[0].interventions, 0);
        assert!(laps[0].spl > 0.8);
    }

    #[test]
    fn flags_rederive_from_aux() {
        let assets = Scenario::builtin("course1").unwrap().build().unwrap();
        let mut env = NavEnv::new(assets.clone(), EnvOptions::default(), 3);
        let mut ctrl = PlannerController::new();
        for _ in 0..300 {
            let tau = ctrl.act(env.observation());
            let out = env.step(&tau);
            let t = &out.transition;
            assert_eq!(t.derived_flags(&assets), t.flags);
            if t.flags.collision {
                assert!(t.flags.d_s <= crate::geometry::ROBOT_RADIUS);
            }
            assert!(t.r.is_finite());
        }
    }

    #[test]
    fn same_seed_same_trajectory() {
        let assets = Scenario::builtin("course1").unwrap().build().unwrap();
        let run = |seed| {
            let mut env = NavEnv::new(assets.clone(), EnvOptions::default(), seed);
            let mut ctrl = PlannerController::new();
            (0..200).map(|_| {
                let tau = ctrl.act(env.observation());
                env.step(&tau).transition.r
            }).collect::<Vec<_>>()
        };
        assert_eq!(run(4), run(4));
    }

    #[test]
    fn lap_reward_matches_transitions() {
        let assets = Scenario::builtin("course1").unwrap().build().unwrap();
        let mut env = NavEnv::new(assets, EnvOptions::default(), 2);
        let mut ctrl = PlannerController::new();
        let mut sum = 0.0;
        for _ in 0..3000 {
            let tau = ctrl.act(env.observation());
            let out = env.step(&tau);
            sum += out.transition.r;
            if let Some(l) = out.lap {
                assert!((l.reward - sum).abs() < 1e-9);
                return;
            }
        }
        panic!("no lap completed");
    }
}
