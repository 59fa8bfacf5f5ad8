//! Coordinated exploration for cooperative multi-agent reinforcement learning.
//!
//! A stochastic gridworld with treasures and wormholes, a family of
//! count-based intrinsic rewards, a soft actor-critic learner with one policy
//! head per reward kind, and a bandit that picks which head to follow each
//! episode.

pub mod env;
pub mod error;
pub mod experiment;
pub mod nn;
pub mod novelty;
pub mod replay;
pub mod sac;
pub mod selector;
pub mod trainer;

pub use env::{Action, EnvConfig, EnvState, GridWorld, MapSpec, Observation, Pos, Task};
pub use error::{Error, Result};
pub use novelty::{intrinsic_reward, CentralTable, RewardKind, VisitTable};
pub use replay::{Batch, ReplayBuffer, TransitionRecord};
pub use sac::{ActMode, Learner, LearnerConfig, NetDims};
pub use selector::{SelectorConfig, SelectorState};
pub use trainer::{train, RunConfig, TrainSummary, Trainer};
