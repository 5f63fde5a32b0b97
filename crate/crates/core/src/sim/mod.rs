//! Two-dimensional social navigation simulator.

pub mod course;
pub mod dataset;
pub mod env;
pub mod features;
pub mod intervention;
pub mod scenario;
pub mod world;

pub use course::{advance_subgoal, TopoCourse};
pub use dataset::{generate_offline_dataset, load_dataset, save_dataset, DatasetConfig};
pub use env::{Controller, EnvOptions, NavEnv, Observation, PlannerController, StepOutcome, Transition, TransitionAux};
pub use features::{extract_features, FeatureVector, SensingConfig, FEATURE_DIM};
pub use intervention::{check_intervention, InterventionMonitor, InterventionReason, InterventionRules, InterventionVerdict};
pub use scenario::{SceneAssets, Scenario};
pub use world::{step_world, EventFlags, Pedestrian, WorldState};
