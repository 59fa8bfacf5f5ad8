use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, Task};
use crate::error::{Error, Result};
use crate::novelty::{RewardKind, DEFAULT_ZETA};
use crate::sac::LearnerConfig;
use crate::selector::SelectorConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablations {
    /// Heads are drawn uniformly and the selector never learns.
    pub uniform_selector: bool,
    /// Drops the selector's entropy bonus.
    pub no_entropy: bool,
    /// Every head is trained on independent rewards.
    pub all_independent_heads: bool,
    /// Every head is trained on joint-position novelty.
    pub centralized_rewards: bool,
}

/// Everything needed to reproduce a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// `default`, `small`, or a path to an ASCII map.
    pub map: String,
    /// One policy head per entry.
    pub heads: Vec<RewardKind>,
    pub zeta: f64,
    pub total_steps: u64,
    pub steps_per_update: u64,
    /// Gradient iterations per update round.
    pub niters: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Selector steps per finished episode; `niters` when unset.
    pub selector_repetitions: Option<usize>,
    /// Environment steps between checkpoints; 0 saves only at the end.
    pub checkpoint_every: u64,
    /// Environment steps between greedy evaluations; 0 disables them.
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub env: EnvConfig,
    pub ablation: Ablations,
    pub learner: LearnerConfig,
    pub selector: SelectorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            map: "default".into(),
            heads: RewardKind::HEAD_SET.to_vec(),
            zeta: DEFAULT_ZETA,
            total_steps: 1_000_000,
            steps_per_update: 100,
            niters: 50,
            batch_size: 1024,
            buffer_capacity: 1_000_000,
            selector_repetitions: None,
            checkpoint_every: 0,
            eval_every: 0,
            eval_episodes: 10,
            env: EnvConfig::new(Task::Task1, 2),
            ablation: Ablations::default(),
            learner: LearnerConfig::default(),
            selector: SelectorConfig::default(),
        }
    }
}

impl RunConfig {
    /// Short run on the 9x9 map.
    pub fn smoke() -> Self {
        RunConfig {
            map: "small".into(),
            total_steps: 20_000,
            batch_size: 256,
            niters: 10,
            buffer_capacity: 100_000,
            ..RunConfig::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Fills every implicit default so the echo is self-contained.
    pub fn resolved(&self) -> Self {
        RunConfig {
            selector_repetitions: Some(self.selector_repetitions.unwrap_or(self.niters)),
            env: self.env.resolved(),
            ..self.clone()
        }
    }

    pub fn selector_repetitions(&self) -> usize {
        self.selector_repetitions.unwrap_or(self.niters)
    }

    /// Reward kind each head is trained on, after ablations.
    pub fn head_rewards(&self) -> Vec<RewardKind> {
        if self.ablation.all_independent_heads {
            vec![RewardKind::Independent; self.heads.len()]
        } else if self.ablation.centralized_rewards {
            vec![RewardKind::Centralized; self.heads.len()]
        } else {
            self.heads.clone()
        }
    }

    pub fn effective_selector(&self) -> SelectorConfig {
        SelectorConfig {
            uniform: self.selector.uniform || self.ablation.uniform_selector,
            entropy: self.selector.entropy && !self.ablation.no_entropy,
            ..self.selector.clone()
        }
    }

    /// Checks everything that does not need the map.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.heads.is_empty() {
            return bad("heads: at least one head is required".into());
        }
        if self.env.n_agents < 2 && self.head_rewards().contains(&RewardKind::LeaderFollower) {
            return bad("heads: leader_follower needs at least two agents".into());
        }
        if self.ablation.all_independent_heads && self.ablation.centralized_rewards {
            return bad(
                "ablation: all_independent_heads and centralized_rewards are exclusive".into(),
            );
        }
        if !(self.zeta > 0.0 && self.zeta.is_finite()) {
            return bad(format!("zeta: {} must be positive", self.zeta));
        }
        if self.steps_per_update == 0 {
            return bad("steps_per_update: must be positive".into());
        }
        if self.total_steps > 0 && self.steps_per_update > self.total_steps {
            return bad(format!(
                "steps_per_update: {} exceeds total_steps {}",
                self.steps_per_update, self.total_steps
            ));
        }
        if self.niters == 0 {
            return bad("niters: must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size: must be positive".into());
        }
        if self.batch_size > self.buffer_capacity {
            return bad(format!(
                "batch_size: {} exceeds buffer_capacity {}",
                self.batch_size, self.buffer_capacity
            ));
        }
        if self.eval_every > 0 && self.eval_episodes == 0 {
            return bad("eval_episodes: must be positive when eval_every is set".into());
        }
        self.learner.validate()?;
        self.effective_selector().validate()
    }
}
