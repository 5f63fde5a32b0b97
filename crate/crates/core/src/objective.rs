//! The differentiable model-based trajectory objective.
//!
//! An action sequence is rolled forward through the unicycle model and
//! scored by four penalty terms (goal pose, static geometry, pedestrian
//! proximity, action smoothness). Step t scores the pose reached after
//! executing action t, so every action in the sequence carries gradient.
//! Pedestrians are extrapolated at constant velocity.

use crate::geometry::{
    dist, unicycle_step_with_jacobian, wrap_angle, Point2, Pose2, Twist, DT, OMEGA_MAX,
    ROBOT_RADIUS, V_MAX, V_MIN,
};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Number of virtual actions in a planned sequence.
pub const HORIZON: usize = 8;
/// Robot-to-pedestrian distance below which intimate space is violated.
pub const INTIMATE_DISTANCE: f64 = 0.5 + ROBOT_RADIUS;

/// A sequence of twists; element 0 is the action that gets executed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionSeq(pub Vec<Twist>);

impl ActionSeq {
    pub fn constant(u: Twist, len: usize) -> Self {
        Self(vec![u; len])
    }

    pub fn zeros(len: usize) -> Self {
        Self::constant(Twist::ZERO, len)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> Twist {
        self.0.first().copied().unwrap_or(Twist::ZERO)
    }

    /// Interleaved (v0, w0, v1, w1, ...).
    pub fn to_flat(&self) -> Vec<f64> {
        self.0.iter().flat_map(|u| [u.v, u.omega]).collect()
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        Self(flat.chunks_exact(2).map(|c| Twist::new(c[0], c[1])).collect())
    }

    pub fn in_bounds(&self) -> bool {
        self.0.iter().all(Twist::in_bounds)
    }

    pub fn clamped(&self) -> Self {
        Self(self.0.iter().map(|u| u.clamped()).collect())
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        Self(
            (0..len)
                .map(|_| {
                    Twist::new(
                        rng.random_range(V_MIN..=V_MAX),
                        rng.random_range(-OMEGA_MAX..=OMEGA_MAX),
                    )
                })
                .collect(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PedestrianTrack {
    pub position: Point2,
    pub velocity: Point2,
}

impl PedestrianTrack {
    pub fn predict(&self, t: f64) -> Point2 {
        [
            self.position[0] + self.velocity[0] * t,
            self.position[1] + self.velocity[1] * t,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutPrediction {
    /// `poses[0]` is the start pose; `poses[t]` follows action t-1.
    pub poses: Vec<Pose2>,
    /// `peds[k][t]` is pedestrian k at time t * DT.
    pub peds: Vec<Vec<Point2>>,
}

pub fn rollout(start: Pose2, tau: &ActionSeq, peds: &[PedestrianTrack]) -> RolloutPrediction {
    let mut poses = Vec::with_capacity(tau.len() + 1);
    poses.push(start);
    let mut p = start;
    for &u in &tau.0 {
        p = unicycle_step_with_jacobian(p, u, DT).0;
        poses.push(p);
    }
    let peds = peds
        .iter()
        .map(|k| (0..=tau.len()).map(|t| k.predict(t as f64 * DT)).collect())
        .collect();
    RolloutPrediction { poses, peds }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveWeights {
    pub pose: f64,
    pub heading: f64,
    pub geom: f64,
    pub ped: f64,
    pub reg: f64,
    pub geom_margin: f64,
    pub gamma: f64,
    /// Common factor on all four terms (the units J is expressed in).
    pub scale: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            pose: 1.0,
            heading: 0.3,
            geom: 4.0,
            ped: 2.0,
            reg: 0.1,
            geom_margin: 0.1,
            gamma: 0.97,
            scale: 1.0,
        }
    }
}

impl ObjectiveWeights {
    /// Goal-reaching only; the base policy of plain residual RL.
    pub fn pose_only() -> Self {
        Self {
            geom: 0.0,
            ped: 0.0,
            reg: 0.0,
            ..Self::default()
        }
    }

    pub fn with_scale(self, scale: f64) -> Self {
        Self { scale, ..self }
    }

    /// Term weights with the common factor folded in.
    fn effective(&self) -> Self {
        Self {
            pose: self.pose * self.scale,
            geom: self.geom * self.scale,
            ped: self.ped * self.scale,
            reg: self.reg * self.scale,
            scale: 1.0,
            ..*self
        }
    }
}

/// Everything the objective needs besides the action sequence. All
/// quantities share one planar frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveContext {
    pub start: Pose2,
    pub goal: Pose2,
    pub cloud: Vec<Point2>,
    pub peds: Vec<PedestrianTrack>,
    /// Previously executed action, anchoring the smoothness term.
    pub prev_action: Twist,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct JBreakdown {
    pub pose: Vec<f64>,
    pub geom: Vec<f64>,
    pub ped: Vec<f64>,
    pub reg: Vec<f64>,
    pub total: f64,
}

struct StepTerms {
    values: [f64; 4],
    /// d(sum of undiscounted terms)/d(x, y, theta) of the scored pose.
    pose_grad: [f64; 3],
}

fn hinge_sum(q: Point2, points: impl Iterator<Item = Point2>, radius: f64) -> (f64, [f64; 2]) {
    let mut value = 0.0;
    let mut grad = [0.0; 2];
    for c in points {
        let d = dist(q, c);
        let h = radius - d;
        if h > 0.0 {
            value += h * h;
            if d > 1e-12 {
                // d(h^2)/dq = -2h * (q - c)/d
                grad[0] -= 2.0 * h * (q[0] - c[0]) / d;
                grad[1] -= 2.0 * h * (q[1] - c[1]) / d;
            }
        }
    }
    (value, grad)
}

fn step_terms(
    ctx: &ObjectiveContext,
    w: &ObjectiveWeights,
    pose: &Pose2,
    t_next: usize,
    u: Twist,
    u_prev: Twist,
) -> StepTerms {
    let q = pose.position();
    let ex = pose.x - ctx.goal.x;
    let ey = pose.y - ctx.goal.y;
    let eth = wrap_angle(pose.theta - ctx.goal.theta);
    let r_pose = -w.pose * (ex * ex + ey * ey + w.heading * eth * eth);
    let mut g = [
        -w.pose * 2.0 * ex,
        -w.pose * 2.0 * ey,
        -w.pose * w.heading * 2.0 * eth,
    ];

    let mut r_geom = 0.0;
    if w.geom != 0.0 {
        let (v, gq) = hinge_sum(q, ctx.cloud.iter().copied(), ROBOT_RADIUS + w.geom_margin);
        r_geom = -w.geom * v;
        g[0] -= w.geom * gq[0];
        g[1] -= w.geom * gq[1];
    }

    let mut r_ped = 0.0;
    if w.ped != 0.0 {
        let tt = t_next as f64 * DT;
        let (v, gq) = hinge_sum(q, ctx.peds.iter().map(|k| k.predict(tt)), INTIMATE_DISTANCE);
        r_ped = -w.ped * v;
        g[0] -= w.ped * gq[0];
        g[1] -= w.ped * gq[1];
    }

    let dv = u.v - u_prev.v;
    let dw = u.omega - u_prev.omega;
    let r_reg = -w.reg * (dv * dv + dw * dw);

    StepTerms {
        values: [r_pose, r_geom, r_ped, r_reg],
        pose_grad: g,
    }
}

/// Evaluates the objective and its per-step breakdown.
pub fn eval_j(ctx: &ObjectiveContext, tau: &ActionSeq, w: &ObjectiveWeights) -> JBreakdown {
    let w = &w.effective();
    let mut out = JBreakdown::default();
    let mut p = ctx.start;
    let mut u_prev = ctx.prev_action;
    let mut disc = 1.0;
    for (t, &u) in tau.0.iter().enumerate() {
        p = unicycle_step_with_jacobian(p, u, DT).0;
        let s = step_terms(ctx, w, &p, t + 1, u, u_prev);
        out.pose.push(s.values[0]);
        out.geom.push(s.values[1]);
        out.ped.push(s.values[2]);
        out.reg.push(s.values[3]);
        out.total += disc * s.values.iter().sum::<f64>();
        disc *= w.gamma;
        u_prev = u;
    }
    out
}

/// Objective value and its exact gradient w.r.t. the flattened sequence
/// (v0, w0, v1, w1, ...), by reverse accumulation through the rollout.
pub fn grad_j_tau(ctx: &ObjectiveContext, tau: &ActionSeq, w: &ObjectiveWeights) -> (f64, Vec<f64>) {
    let w = &w.effective();
    let n = tau.len();
    let mut jacs = Vec::with_capacity(n);
    let mut pose_grads = Vec::with_capacity(n);
    let mut grad = vec![0.0; 2 * n];
    let mut total = 0.0;
    let mut p = ctx.start;
    let mut u_prev = ctx.prev_action;
    let mut disc = 1.0;
    for (t, &u) in tau.0.iter().enumerate() {
        let (next, jac) = unicycle_step_with_jacobian(p, u, DT);
        p = next;
        let s = step_terms(ctx, w, &p, t + 1, u, u_prev);
        total += disc * s.values.iter().sum::<f64>();
        pose_grads.push(s.pose_grad.map(|g| g * disc));
        // smoothness couples a_t with a_{t-1}
        let dv = u.v - u_prev.v;
        let dw = u.omega - u_prev.omega;
        grad[2 * t] -= disc * w.reg * 2.0 * dv;
        grad[2 * t + 1] -= disc * w.reg * 2.0 * dw;
        if t > 0 {
            grad[2 * t - 2] += disc * w.reg * 2.0 * dv;
            grad[2 * t - 1] += disc * w.reg * 2.0 * dw;
        }
        jacs.push(jac);
        disc *= w.gamma;
        u_prev = u;
    }
    // adjoint of the pose reached after action t
    let mut lambda = [0.0; 3];
    for t in (0..n).rev() {
        for (l, g) in lambda.iter_mut().zip(pose_grads[t]) {
            *l += g;
        }
        let jac = &jacs[t];
        for c in 0..2 {
            grad[2 * t + c] += (0..3).map(|r| jac.wrt_twist[r][c] * lambda[r]).sum::<f64>();
        }
        let mut prev = [0.0; 3];
        for (c, pv) in prev.iter_mut().enumerate() {
            *pv = (0..3).map(|r| jac.wrt_pose[r][c] * lambda[r]).sum();
        }
        lambda = prev;
    }
    (total, grad)
}

/// Projected gradient ascent on the sequence itself. Used as the
/// trajectory-optimization reference for amortized training.
pub fn optimize_tau(
    ctx: &ObjectiveContext,
    init: &ActionSeq,
    w: &ObjectiveWeights,
    steps: usize,
    step_size: f64,
) -> ActionSeq {
    let mut tau = init.clamped();
    for _ in 0..steps {
        let (_, g) = grad_j_tau(ctx, &tau, w);
        let mut flat = tau.to_flat();
        for (x, gx) in flat.iter_mut().zip(&g) {
            *x += step_size * gx;
        }
        tau = ActionSeq::from_flat(&flat).clamped();
    }
    tau
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Transform2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn free_ctx(goal: Pose2) -> ObjectiveContext {
        ObjectiveContext {
            start: Pose2::origin(),
            goal,
            cloud: vec![],
            peds: vec![],
            prev_action: Twist::ZERO,
        }
    }

    fn random_ctx(rng: &mut ChaCha8Rng) -> ObjectiveContext {
        let cloud = (0..12)
            .map(|_| [rng.random_range(-1.0..2.0), rng.random_range(-1.5..1.5)])
            .collect();
        let peds = (0..2)
            .map(|_| PedestrianTrack {
                position: [rng.random_range(0.0..2.5), rng.random_range(-1.5..1.5)],
                velocity: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            })
            .collect();
        ObjectiveContext {
            start: Pose2::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.5..0.5)),
            goal: Pose2::new(rng.random_range(0.5..2.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
            cloud,
            peds,
            prev_action: Twist::new(rng.random_range(0.0..0.5), rng.random_range(-1.0..1.0)),
        }
    }

    #[test]
    fn scale_multiplies_value_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let ctx = random_ctx(&mut rng);
        let tau = ActionSeq::constant(Twist::new(0.3, 0.4), HORIZON);
        let w = ObjectiveWeights::default();
        let (j1, g1) = grad_j_tau(&ctx, &tau, &w);
        let (j2, g2) = grad_j_tau(&ctx, &tau, &w.with_scale(0.1));
        assert!((j2 - 0.1 * j1).abs() < 1e-12 * j1.abs().max(1.0));
        for (a, b) in g1.iter().zip(&g2) {
            assert!((b - 0.1 * a).abs() < 1e-12 * a.abs().max(1.0));
        }
        assert_eq!(eval_j(&ctx, &tau, &w.with_scale(0.1)).total, j2);
    }

    fn fd_grad(ctx: &ObjectiveContext, tau: &ActionSeq, w: &ObjectiveWeights, h: f64) -> Vec<f64> {
        let base = tau.to_flat();
        (0..base.len())
            .map(|i| {
                let mut a = base.clone();
                let mut b = base.clone();
                a[i] += h;
                b[i] -= h;
                let fa = eval_j(ctx, &ActionSeq::from_flat(&a), w).total;
                let fb = eval_j(ctx, &ActionSeq::from_flat(&b), w).total;
                (fa - fb) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let s: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        d / s
    }

    #[test]
    fn zero_actions_stay_put() {
        let peds = [PedestrianTrack {
            position: [0.0, 4.0],
            velocity: [0.0, -1.0],
        }];
        let r = rollout(Pose2::origin(), &ActionSeq::zeros(HORIZON), &peds);
        assert!(r.poses.iter().all(|p| *p == Pose2::origin()));
        let p4 = r.peds[0][4];
        assert!(p4[0].abs() < 1e-15 && (p4[1] - (4.0 - 4.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn straight_rollout_length() {
        let r = rollout(
            Pose2::origin(),
            &ActionSeq::constant(Twist::new(0.5, 0.0), HORIZON),
            &[],
        );
        let end = r.poses[HORIZON];
        assert!((end.x - 8.0 / 6.0).abs() < 1e-12 && end.y == 0.0);
    }

    #[test]
    fn fixed_point_at_goal_is_zero() {
        let j = eval_j(&free_ctx(Pose2::origin()), &ActionSeq::zeros(HORIZON), &ObjectiveWeights::default());
        assert_eq!(j.total, 0.0);
    }

    #[test]
    fn geom_hinge_arithmetic() {
        let w = ObjectiveWeights::default();
        let mut ctx = free_ctx(Pose2::origin());
        ctx.cloud = vec![[0.3, 0.0]];
        let j = eval_j(&ctx, &ActionSeq::zeros(HORIZON), &w);
        for g in &j.geom {
            assert!((g + w.geom * 0.09).abs() < 1e-12);
        }
    }

    #[test]
    fn distant_pedestrian_contributes_nothing() {
        let mut ctx = free_ctx(Pose2::new(1.0, 0.0, 0.0));
        ctx.peds = vec![PedestrianTrack {
            position: [0.0, 3.0],
            velocity: [0.2, 0.0],
        }];
        let j = eval_j(&ctx, &ActionSeq::constant(Twist::new(0.3, 0.0), HORIZON), &ObjectiveWeights::default());
        assert!(j.ped.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let ctx = random_ctx(&mut rng);
            let tau = ActionSeq::random(HORIZON, &mut rng);
            let w = ObjectiveWeights::default();
            let (_, g) = grad_j_tau(&ctx, &tau, &w);
            assert!(rel_err(&g, &fd_grad(&ctx, &tau, &w, 1e-6)) < 1e-5);
        }
    }

    #[test]
    fn gradient_per_term_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let zero = ObjectiveWeights {
            pose: 0.0,
            geom: 0.0,
            ped: 0.0,
            reg: 0.0,
            ..ObjectiveWeights::default()
        };
        let isolated = [
            ObjectiveWeights { pose: 1.0, ..zero },
            ObjectiveWeights { geom: 4.0, ..zero },
            ObjectiveWeights { ped: 2.0, ..zero },
            ObjectiveWeights { reg: 0.1, ..zero },
        ];
        for w in isolated {
            for _ in 0..5 {
                let ctx = random_ctx(&mut rng);
                let tau = ActionSeq::random(HORIZON, &mut rng);
                let (_, g) = grad_j_tau(&ctx, &tau, &w);
                let fd = fd_grad(&ctx, &tau, &w, 1e-6);
                if fd.iter().all(|x| x.abs() < 1e-12) {
                    assert!(g.iter().all(|x| x.abs() < 1e-9));
                } else {
                    assert!(rel_err(&g, &fd) < 1e-5);
                }
            }
        }
    }

    #[test]
    fn constant_sequence_reg_gradient_only_at_boundary() {
        let w = ObjectiveWeights {
            pose: 0.0,
            geom: 0.0,
            ped: 0.0,
            ..ObjectiveWeights::default()
        };
        let mut ctx = free_ctx(Pose2::origin());
        ctx.prev_action = Twist::new(0.1, 0.2);
        let tau = ActionSeq::constant(Twist::new(0.3, -0.4), HORIZON);
        let (_, g) = grad_j_tau(&ctx, &tau, &w);
        assert!((g[0] + 2.0 * w.reg * 0.2).abs() < 1e-12);
        assert!((g[1] + 2.0 * w.reg * (-0.6)).abs() < 1e-12);
        assert!(g[2..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn interior_optimum_has_zero_gradient() {
        // a strong smoothness anchor keeps the optimum off the envelope
        let w = ObjectiveWeights {
            reg: 5.0,
            ..ObjectiveWeights::default()
        };
        let mut ctx = free_ctx(Pose2::new(0.7, 0.15, 0.2));
        ctx.prev_action = Twist::new(0.25, 0.0);
        let mut tau = optimize_tau(&ctx, &ActionSeq::constant(Twist::new(0.25, 0.0), HORIZON), &w, 500, 0.02);
        for _ in 0..20 {
            tau = optimize_tau(&ctx, &tau, &w, 500, 0.02);
        }
        assert!(tau.0.iter().all(|u| u.v > 0.0 && u.v < 0.5 && u.omega.abs() < 1.0));
        let (_, g) = grad_j_tau(&ctx, &tau, &w);
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "gradient norm {norm}");
    }

    proptest! {
        #[test]
        fn objective_is_nonpositive(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ctx = random_ctx(&mut rng);
            let tau = ActionSeq::random(HORIZON, &mut rng);
            let j = eval_j(&ctx, &tau, &ObjectiveWeights::default());
            prop_assert!(j.total <= 0.0);
            for v in j.pose.iter().chain(&j.geom).chain(&j.ped).chain(&j.reg) {
                prop_assert!(*v <= 0.0);
            }
        }

        #[test]
        fn objective_is_rigid_invariant(seed in 0u64..10_000, rot in -3.0..3.0f64, tx in -10.0..10.0f64, ty in -10.0..10.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ctx = random_ctx(&mut rng);
            let tau = ActionSeq::random(HORIZON, &mut rng);
            let t = Transform2::new(rot, [tx, ty]);
            let moved = ObjectiveContext {
                start: t.compose(&ctx.start.to_transform()).to_pose(),
                goal: t.compose(&ctx.goal.to_transform()).to_pose(),
                cloud: ctx.cloud.iter().map(|&p| t.apply(p)).collect(),
                peds: ctx.peds.iter().map(|k| PedestrianTrack { position: t.apply(k.position), velocity: t.rotate(k.velocity) }).collect(),
                prev_action: ctx.prev_action,
            };
            let w = ObjectiveWeights::default();
            let a = eval_j(&ctx, &tau, &w).total;
            let b = eval_j(&moved, &tau, &w).total;
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }
}
