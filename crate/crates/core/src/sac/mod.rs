//! Multi-head multi-agent soft actor-critic.

mod learner;
mod networks;

pub use learner::{
    bootstrap, sample_rows, soft_value, ActMode, JointActions, Learner, LearnerConfig, PolicyStats,
    PolicyTerms, StackLoss, Targets,
};
pub use networks::{ActorForward, ActorNet, CriticNet, NetDims, ValueKind};
