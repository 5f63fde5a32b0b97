//! Social navigation learning stack: simulator, sampling planner, differentiable
//! trajectory objective, hybrid-critic fine-tuning and baselines, experiment harness.

pub mod error;
pub mod geometry;
pub mod nn;
pub mod localization;
pub mod objective;
pub mod planner;
pub mod rl;
pub mod harness;
pub mod sim;

pub use error::{Error, Result};
pub use geometry::{Point2, Pose2, Transform2, Twist};
pub use harness::{ExperimentConfig, LapRecord};
pub use objective::{ActionSeq, ObjectiveContext, ObjectiveWeights};
pub use planner::{PlanDecision, Planner, PlannerView};
pub use rl::{Agent, AgentConfig, Method};
pub use sim::{NavEnv, Scenario, SceneAssets, Transition};
