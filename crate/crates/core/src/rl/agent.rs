//! Twin-critic deterministic actor-critic with an optional model-based term.
//!
//! The actor emits a normalized action sequence `u` in [-1, 1]^(2H). The
//! actor objective is `J(s, tau(u)) + beta * Qbar_1(s, u)`; either term can be
//! switched off, which yields the plain model-based fine-tuner or plain TD3.
//! Residual agents add the actor output to a base policy in normalized space.

use crate::error::{Error, Result};
use crate::geometry::{Twist, OMEGA_MAX, V_MAX, V_MIN};
use crate::nn::{Activation, Adam, Gradient, Mlp};
use crate::objective::{eval_j, grad_j_tau, ActionSeq, ObjectiveContext, ObjectiveWeights, HORIZON};
use crate::sim::{Transition, FEATURE_DIM};
use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::Path;

const V_HALF: f64 = 0.5 * (V_MAX - V_MIN);

pub fn encode_twist(a: Twist) -> [f64; 2] {
    [(a.v - V_MIN) / V_HALF - 1.0, a.omega / OMEGA_MAX]
}

pub fn decode_twist(u: [f64; 2]) -> Twist {
    Twist::new(V_MIN + (u[0] + 1.0) * V_HALF, u[1] * OMEGA_MAX)
}

/// d(physical)/d(normalized) per component.
pub const DECODE_SCALE: [f64; 2] = [V_HALF, OMEGA_MAX];

pub fn decode_seq(u: &[f64]) -> ActionSeq {
    ActionSeq(u.chunks_exact(2).map(|c| decode_twist([c[0], c[1]])).collect())
}

/// Encodes the first `horizon` twists, repeating the last one if `tau` is short.
pub fn encode_seq(tau: &ActionSeq, horizon: usize) -> Vec<f64> {
    let last = tau.0.last().copied().unwrap_or(Twist::ZERO);
    (0..horizon)
        .flat_map(|k| encode_twist(tau.0.get(k).copied().unwrap_or(last)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BetaSchedule {
    pub start: f64,
    pub end: f64,
    pub ramp_steps: u64,
}

impl Default for BetaSchedule {
    fn default() -> Self {
        Self {
            start: 0.0,
            end: 1.0,
            ramp_steps: 2000,
        }
    }
}

impl BetaSchedule {
    pub fn constant(b: f64) -> Self {
        Self {
            start: b,
            end: b,
            ramp_steps: 0,
        }
    }

    pub fn at(&self, step: u64) -> f64 {
        if self.ramp_steps == 0 {
            return self.end;
        }
        let f = (step as f64 / self.ramp_steps as f64).min(1.0);
        self.start + (self.end - self.start) * f
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub state_dim: usize,
    pub horizon: usize,
    pub hidden: usize,
    pub actor_layers: usize,
    pub critic_layers: usize,
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub polyak: f64,
    pub policy_noise: f64,
    pub noise_clip: f64,
    pub policy_delay: u64,
    /// Exploration standard deviation as a fraction of each action range.
    pub explore_sigma: f64,
    pub beta: BetaSchedule,
    pub weights: ObjectiveWeights,
    pub use_j: bool,
    pub use_critic: bool,
    pub residual: bool,
    /// Behavior-cloning strength alpha for the offline TD3+BC phase.
    pub bc_alpha: f64,
    /// Regress Qbar toward y - J(s, tau) instead of cancelling J.
    pub exact_td_target: bool,
    pub critic_init_scale: f64,
    pub actor_init_scale: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            state_dim: FEATURE_DIM,
            horizon: HORIZON,
            hidden: 256,
            actor_layers: 3,
            critic_layers: 5,
            gamma: 0.97,
            actor_lr: 1e-4,
            critic_lr: 1e-4,
            polyak: 0.005,
            policy_noise: 0.2,
            noise_clip: 0.5,
            policy_delay: 2,
            explore_sigma: 0.1,
            beta: BetaSchedule::default(),
            weights: ObjectiveWeights::default().with_scale(0.1),
            use_j: true,
            use_critic: true,
            residual: false,
            bc_alpha: 2.5,
            exact_td_target: false,
            critic_init_scale: 1e-3,
            actor_init_scale: 3e-3,
        }
    }
}

impl AgentConfig {
    pub fn action_dim(&self) -> usize {
        2 * self.horizon
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.horizon == 0 || self.hidden == 0 || self.state_dim == 0 {
            return bad("horizon, hidden and state_dim must be positive");
        }
        if self.actor_layers < 2 || self.critic_layers < 2 {
            return bad("actor_layers and critic_layers must be at least 2");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.polyak) {
            return bad("polyak must lie in [0, 1]");
        }
        if self.weights.scale.is_nan() || self.weights.scale <= 0.0 {
            return bad("objective scale must be positive");
        }
        if self.policy_delay == 0 {
            return bad("policy_delay must be positive");
        }
        if self.residual && self.horizon != 1 {
            return bad("residual agents act on single actions (horizon = 1)");
        }
        Ok(())
    }
}

/// Base policy of a residual agent, evaluated in normalized action space.
#[derive(Clone, Debug, PartialEq)]
pub enum BasePolicy {
    Zero,
    /// First action of a sequence-output actor.
    Actor(Mlp),
}

impl BasePolicy {
    pub fn normalized(&self, s: ArrayView2<f64>) -> Result<Array2<f64>> {
        match self {
            BasePolicy::Zero => Ok(Array2::zeros((s.nrows(), 2))),
            BasePolicy::Actor(net) => Ok(net.forward(s)?.slice(s![.., 0..2]).to_owned()),
        }
    }
}

/// Immutable actor copy used by the environment loop between syncs.
#[derive(Clone, Debug)]
pub struct PolicySnapshot {
    pub actor: Mlp,
    pub base: Option<BasePolicy>,
    pub explore_sigma: f64,
    pub version: u64,
}

impl PolicySnapshot {
    pub fn act<R: Rng + ?Sized>(&self, s: &[f64], explore: bool, rng: &mut R) -> Result<ActionSeq> {
        policy_act(&self.actor, self.base.as_ref(), self.explore_sigma, s, explore, rng)
    }
}

/// Planned sequence; exploration perturbs only the executed first action.
pub fn policy_act<R: Rng + ?Sized>(
    actor: &Mlp,
    base: Option<&BasePolicy>,
    explore_sigma: f64,
    s: &[f64],
    explore: bool,
    rng: &mut R,
) -> Result<ActionSeq> {
    let mut u = actor.forward_vec(s)?;
    if let Some(base) = base {
        let row = ArrayView2::from_shape((1, s.len()), s).expect("row");
        let b = base.normalized(row)?;
        u = vec![(b[[0, 0]] + u[0]).clamp(-1.0, 1.0), (b[[0, 1]] + u[1]).clamp(-1.0, 1.0)];
    }
    let mut tau = decode_seq(&u);
    if explore && explore_sigma > 0.0 {
        let nv = Normal::new(0.0, explore_sigma * (V_MAX - V_MIN)).expect("sigma");
        let nw = Normal::new(0.0, explore_sigma * 2.0 * OMEGA_MAX).expect("sigma");
        let a = tau.0[0];
        tau.0[0] = Twist::new(a.v + nv.sample(rng), a.omega + nw.sample(rng)).clamped();
    }
    Ok(tau)
}

/// Batched training inputs. `u` is the critic's action input.
#[derive(Clone, Debug)]
pub struct Batch {
    pub s: Array2<f64>,
    pub u: Array2<f64>,
    pub r: Array1<f64>,
    pub done: Array1<f64>,
    pub s_next: Array2<f64>,
    pub ctx: Vec<ObjectiveContext>,
    pub ctx_next: Vec<Option<ObjectiveContext>>,
    /// Overrides the target actor's next action (no smoothing noise applied).
    pub next_u: Option<Array2<f64>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.s.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HybridQ {
    pub j: f64,
    pub qbar: f64,
    pub beta: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActorStats {
    pub loss: f64,
    pub mean_j: f64,
    pub mean_q: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: u64,
    pub critic_loss1: f64,
    pub critic_loss2: f64,
    pub actor_loss: f64,
    pub beta: f64,
    pub mean_qbar: f64,
    pub mean_j: f64,
}

#[derive(Clone, Debug)]
pub struct Agent {
    pub cfg: AgentConfig,
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critics: [Mlp; 2],
    pub critic_targets: [Mlp; 2],
    pub actor_opt: Adam,
    pub critic_opts: [Adam; 2],
    pub base: Option<BasePolicy>,
    pub critic_updates: u64,
    pub actor_updates: u64,
    pub trainer_steps: u64,
    /// Behavior-cloning term active (offline TD3+BC phase).
    pub bc: bool,
    rng: ChaCha8Rng,
    last_actor: ActorStats,
}

impl Agent {
    pub fn new(cfg: AgentConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ad = cfg.action_dim();
        let mut sizes = vec![cfg.state_dim];
        sizes.extend(std::iter::repeat_n(cfg.hidden, cfg.actor_layers - 1));
        sizes.push(ad);
        let actor = Mlp::new(&sizes, Activation::Relu, Activation::Tanh, Some(cfg.actor_init_scale), &mut rng);
        let mut csizes = vec![cfg.state_dim + ad];
        csizes.extend(std::iter::repeat_n(cfg.hidden, cfg.critic_layers - 1));
        csizes.push(1);
        let c1 = Mlp::new(&csizes, Activation::Relu, Activation::Linear, Some(cfg.critic_init_scale), &mut rng);
        let c2 = Mlp::new(&csizes, Activation::Relu, Activation::Linear, Some(cfg.critic_init_scale), &mut rng);
        Ok(Self {
            actor_opt: Adam::new(&actor, cfg.actor_lr),
            critic_opts: [Adam::new(&c1, cfg.critic_lr), Adam::new(&c2, cfg.critic_lr)],
            actor_target: actor.clone(),
            critic_targets: [c1.clone(), c2.clone()],
            critics: [c1, c2],
            actor,
            base: cfg.residual.then_some(BasePolicy::Zero),
            critic_updates: 0,
            actor_updates: 0,
            trainer_steps: 0,
            bc: false,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x7d3_0001),
            last_actor: ActorStats::default(),
            cfg,
        })
    }

    /// Replaces the actor (and its target and optimizer state).
    pub fn set_actor(&mut self, actor: Mlp) -> Result<()> {
        if actor.input_dim() != self.cfg.state_dim || actor.output_dim() != self.cfg.action_dim() {
            return Err(Error::Dimension {
                context: "actor replacement",
                expected: self.cfg.action_dim(),
                got: actor.output_dim(),
            });
        }
        self.actor_opt = Adam::new(&actor, self.cfg.actor_lr);
        self.actor_target = actor.clone();
        self.actor = actor;
        Ok(())
    }

    pub fn set_base(&mut self, base: BasePolicy) {
        self.base = Some(base);
    }

    pub fn beta(&self) -> f64 {
        self.cfg.beta.at(self.trainer_steps)
    }

    fn normalized_actions(&self, ts: &[&Transition], s: &Array2<f64>) -> Result<Array2<f64>> {
        let h = self.cfg.horizon;
        let mut u = Array2::zeros((ts.len(), 2 * h));
        for (i, t) in ts.iter().enumerate() {
            let e = encode_seq(&t.tau, h);
            u.row_mut(i).assign(&Array1::from(e));
        }
        if let Some(base) = &self.base {
            let b = base.normalized(s.view())?;
            u = (&u - &b).mapv(|x| x.clamp(-1.0, 1.0));
        }
        Ok(u)
    }

    pub fn batch(&self, ts: &[&Transition]) -> Result<Batch> {
        let sd = self.cfg.state_dim;
        let rows = |f: &dyn Fn(&Transition) -> &Vec<f64>| -> Result<Array2<f64>> {
            let mut m = Array2::zeros((ts.len(), sd));
            for (i, t) in ts.iter().enumerate() {
                let v = f(t);
                if v.len() != sd {
                    return Err(Error::Dimension {
                        context: "transition state",
                        expected: sd,
                        got: v.len(),
                    });
                }
                m.row_mut(i).assign(&ndarray::ArrayView1::from(v.as_slice()));
            }
            Ok(m)
        };
        let s = rows(&|t| &t.s)?;
        let s_next = rows(&|t| &t.s_next)?;
        let u = self.normalized_actions(ts, &s)?;
        Ok(Batch {
            s,
            u,
            r: ts.iter().map(|t| t.r).collect(),
            done: ts.iter().map(|t| if t.done { 1.0 } else { 0.0 }).collect(),
            s_next,
            ctx: ts.iter().map(|t| t.aux.ctx.clone()).collect(),
            ctx_next: ts.iter().map(|t| t.aux.ctx_next.clone()).collect(),
            next_u: None,
        })
    }

    fn critic_input(s: ArrayView2<f64>, u: ArrayView2<f64>) -> Array2<f64> {
        concatenate(Axis(1), &[s, u]).expect("row counts match")
    }

    pub fn qbar(&self, s: &[f64], u: &[f64]) -> Result<f64> {
        let x: Vec<f64> = s.iter().chain(u).copied().collect();
        Ok(self.critics[0].forward_vec(&x)?[0])
    }

    /// Total value of a planned sequence: J + beta * Qbar (terms off per configuration).
    pub fn hybrid_q(&self, ctx: &ObjectiveContext, s: &[f64], tau: &ActionSeq) -> Result<HybridQ> {
        let beta = self.beta();
        let j = if self.cfg.use_j { eval_j(ctx, tau, &self.cfg.weights).total } else { 0.0 };
        let qbar = if self.cfg.use_critic {
            self.qbar(s, &encode_seq(tau, self.cfg.horizon))?
        } else {
            0.0
        };
        Ok(HybridQ {
            j,
            qbar,
            beta,
            total: j + beta * qbar,
        })
    }

    fn target_actions(&mut self, b: &Batch) -> Result<Array2<f64>> {
        if let Some(u) = &b.next_u {
            return Ok(u.clone());
        }
        let mut u = self.actor_target.forward(b.s_next.view())?;
        if self.cfg.policy_noise > 0.0 {
            let n = Normal::new(0.0, self.cfg.policy_noise).expect("sigma");
            let c = self.cfg.noise_clip;
            let rng = &mut self.rng;
            u.mapv_inplace(|x| (x + n.sample(rng).clamp(-c, c)).clamp(-1.0, 1.0));
        }
        Ok(u)
    }

    /// Regression targets for both critics.
    pub fn td_target(&mut self, b: &Batch) -> Result<Array1<f64>> {
        let u_next = self.target_actions(b)?;
        let x = Self::critic_input(b.s_next.view(), u_next.view());
        let q1 = self.critic_targets[0].forward(x.view())?;
        let q2 = self.critic_targets[1].forward(x.view())?;
        let g = self.cfg.gamma;
        let mut y = Array1::zeros(b.len());
        for i in 0..b.len() {
            let q = q1[[i, 0]].min(q2[[i, 0]]);
            y[i] = b.r[i] + g * (1.0 - b.done[i]) * q;
        }
        if self.cfg.exact_td_target && self.cfg.use_j {
            let w = self.cfg.weights;
            for i in 0..b.len() {
                let ctx_next = b.ctx_next[i].as_ref().ok_or_else(|| {
                    Error::Config("exact TD targets need transitions recorded with next-state contexts".into())
                })?;
                let j_next = eval_j(ctx_next, &decode_seq(u_next.row(i).as_slice().expect("contiguous")), &w).total;
                let j_now = eval_j(&b.ctx[i], &decode_seq(b.u.row(i).as_slice().expect("contiguous")), &w).total;
                y[i] += g * (1.0 - b.done[i]) * j_next - j_now;
            }
        }
        Ok(y)
    }

    /// Mean squared TD error of critic `k` against fixed targets.
    pub fn critic_loss(&self, k: usize, b: &Batch, y: &Array1<f64>) -> Result<f64> {
        let x = Self::critic_input(b.s.view(), b.u.view());
        let q = self.critics[k].forward(x.view())?;
        Ok(q.column(0).iter().zip(y).map(|(a, t)| (a - t).powi(2)).sum::<f64>() / b.len() as f64)
    }

    pub fn critic_gradient(&self, k: usize, b: &Batch, y: &Array1<f64>) -> Result<(f64, Gradient)> {
        let x = Self::critic_input(b.s.view(), b.u.view());
        let cache = self.critics[k].forward_cached(x.view())?;
        let n = b.len() as f64;
        let q = cache.output();
        let mut up = Array2::zeros((b.len(), 1));
        let mut loss = 0.0;
        for i in 0..b.len() {
            let d = q[[i, 0]] - y[i];
            loss += d * d / n;
            up[[i, 0]] = 2.0 * d / n;
        }
        let (g, _) = self.critics[k].backward(&cache, up.view())?;
        Ok((loss, g))
    }

    pub fn critic_update(&mut self, b: &Batch) -> Result<[f64; 2]> {
        let y = self.td_target(b)?;
        let mut losses = [0.0; 2];
        for k in 0..2 {
            let (loss, g) = self.critic_gradient(k, b, &y)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("critic {k} loss is {loss} at update {}", self.critic_updates)));
            }
            self.critic_opts[k].step(&mut self.critics[k], &g)?;
            losses[k] = loss;
        }
        self.critic_updates += 1;
        Ok(losses)
    }

    /// Batch-mean actor objective (to be maximized) and its gradient with
    /// respect to the actor output.
    fn objective_and_output_grad(&self, b: &Batch, u: &Array2<f64>, beta: f64) -> Result<(ActorStats, f64, Array2<f64>)> {
        let n = b.len();
        let nf = n as f64;
        let mut grad = Array2::zeros(u.dim());
        let mut obj = 0.0;
        let mut sum_j = 0.0;
        let mut sum_q = 0.0;
        if self.cfg.use_j {
            for i in 0..n {
                let row = u.row(i);
                let tau = decode_seq(row.as_slice().expect("contiguous"));
                let (j, g) = grad_j_tau(&b.ctx[i], &tau, &self.cfg.weights);
                sum_j += j;
                for (k, gk) in g.iter().enumerate() {
                    grad[[i, k]] += gk * DECODE_SCALE[k % 2];
                }
            }
            obj += sum_j;
        }
        if self.cfg.use_critic && beta != 0.0 {
            let x = Self::critic_input(b.s.view(), u.view());
            let cache = self.critics[0].forward_cached(x.view())?;
            let q = cache.output().column(0).to_owned();
            sum_q = q.sum();
            let lambda = if self.bc {
                self.cfg.bc_alpha / (q.mapv(f64::abs).mean().unwrap_or(1.0)).max(1e-6)
            } else {
                1.0
            };
            let ones = Array2::from_elem((n, 1), 1.0);
            let (_, dx) = self.critics[0].backward(&cache, ones.view())?;
            let sd = self.cfg.state_dim;
            grad.scaled_add(beta * lambda, &dx.slice(s![.., sd..]));
            obj += beta * lambda * sum_q;
        }
        if self.bc {
            let diff = u - &b.u;
            obj -= diff.mapv(|d| d * d).sum();
            grad.scaled_add(-2.0, &diff);
        }
        let stats = ActorStats {
            loss: -obj / nf,
            mean_j: sum_j / nf,
            mean_q: sum_q / nf,
        };
        Ok((stats, obj / nf, grad / nf))
    }

    pub fn actor_objective(&self, b: &Batch, beta: f64) -> Result<f64> {
        let u = self.actor.forward(b.s.view())?;
        Ok(self.objective_and_output_grad(b, &u, beta)?.1)
    }

    /// Gradient of the batch-mean actor objective with respect to the actor parameters.
    pub fn actor_gradient(&self, b: &Batch, beta: f64) -> Result<(ActorStats, Gradient)> {
        let cache = self.actor.forward_cached(b.s.view())?;
        let u = cache.output().clone();
        let (stats, _, g_out) = self.objective_and_output_grad(b, &u, beta)?;
        let (g, _) = self.actor.backward(&cache, g_out.view())?;
        Ok((stats, g))
    }

    /// One ascent step on the actor objective, followed by target updates.
    pub fn actor_update(&mut self, b: &Batch) -> Result<ActorStats> {
        let beta = self.beta();
        let (stats, mut g) = self.actor_gradient(b, beta)?;
        if !stats.loss.is_finite() || !g.is_finite() {
            return Err(Error::Diverged(format!("actor objective is {} at update {}", -stats.loss, self.actor_updates)));
        }
        g.scale(-1.0);
        self.actor_opt.step(&mut self.actor, &g)?;
        self.actor_updates += 1;
        let rho = self.cfg.polyak;
        self.actor_target.polyak_update(&self.actor, rho);
        if self.cfg.use_critic {
            for k in 0..2 {
                let (t, o) = (&mut self.critic_targets[k], &self.critics[k]);
                t.polyak_update(o, rho);
            }
        }
        self.last_actor = stats;
        Ok(stats)
    }

    /// One trainer step: a critic update and, every `policy_delay` steps, an actor update.
    pub fn train_step(&mut self, b: &Batch) -> Result<TrainLogRow> {
        let mut row = TrainLogRow {
            step: self.trainer_steps,
            beta: self.beta(),
            ..Default::default()
        };
        let due = if self.cfg.use_critic {
            let [l1, l2] = self.critic_update(b)?;
            row.critic_loss1 = l1;
            row.critic_loss2 = l2;
            self.critic_updates.is_multiple_of(self.cfg.policy_delay)
        } else {
            (self.trainer_steps + 1).is_multiple_of(self.cfg.policy_delay)
        };
        if due {
            self.actor_update(b)?;
        }
        row.actor_loss = self.last_actor.loss;
        row.mean_j = self.last_actor.mean_j;
        row.mean_qbar = self.last_actor.mean_q;
        self.trainer_steps += 1;
        Ok(row)
    }

    pub fn sync_policy(&self) -> PolicySnapshot {
        PolicySnapshot {
            actor: self.actor.clone(),
            base: self.base.clone(),
            explore_sigma: self.cfg.explore_sigma,
            version: self.trainer_steps,
        }
    }

    pub fn act<R: Rng + ?Sized>(&self, s: &[f64], explore: bool, rng: &mut R) -> Result<ActionSeq> {
        policy_act(&self.actor, self.base.as_ref(), self.cfg.explore_sigma, s, explore, rng)
    }

    pub fn save_checkpoint(&self, dir: &Path, tag: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.actor.save(&dir.join(format!("actor_{tag}.json")))?;
        if self.cfg.use_critic {
            self.critics[0].save(&dir.join(format!("critic1_{tag}.json")))?;
            self.critics[1].save(&dir.join(format!("critic2_{tag}.json")))?;
        }
        Ok(())
    }
}
