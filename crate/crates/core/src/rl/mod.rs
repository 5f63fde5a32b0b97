//! Learning algorithms: offline pretraining, the hybrid-critic fine-tuner and baselines.

pub mod agent;
pub mod methods;
pub mod pretrain;
pub mod replay;

pub use agent::{
    decode_seq, decode_twist, encode_seq, encode_twist, policy_act, ActorStats, Agent, AgentConfig, BasePolicy,
    Batch, BetaSchedule, HybridQ, PolicySnapshot, TrainLogRow,
};
pub use methods::Method;
pub use pretrain::{pretrain_offline, pretrain_td3bc, PretrainConfig};
pub use replay::ReplayBuffer;
