use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{mean_std, net_dims, stream_rng, Real, RunConfig};
use crate::env::{Action, EnvState, GridWorld, MapSpec, Observation};
use crate::error::{Error, Result};
use crate::nn::Archive;
use crate::sac::{ActMode, Learner};
use crate::selector::SelectorState;

/// How evaluation picks the head for each episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadChoice {
    /// The selector's most probable head.
    Greedy,
    Fixed(usize),
    Uniform,
}

impl FromStr for HeadChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(HeadChoice::Greedy),
            "uniform" => Ok(HeadChoice::Uniform),
            other => other.parse().map(HeadChoice::Fixed).map_err(|_| {
                Error::Usage(format!(
                    "head choice `{other}` is not greedy, uniform or a head index"
                ))
            }),
        }
    }
}

impl fmt::Display for HeadChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeadChoice::Greedy => f.write_str("greedy"),
            HeadChoice::Uniform => f.write_str("uniform"),
            HeadChoice::Fixed(j) => write!(f, "{j}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub treasures: usize,
    pub episode_return: f64,
    pub length: usize,
    pub completed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub head_choice: HeadChoice,
    pub treasures: Vec<f64>,
    pub heads: Vec<usize>,
    pub mean_treasures: f64,
    pub std_treasures: f64,
    /// Fraction of episodes that completed the task.
    pub success_rate: f64,
}

impl EvalReport {
    fn from_outcomes(
        head_choice: HeadChoice,
        outcomes: &[EpisodeOutcome],
        heads: Vec<usize>,
    ) -> Self {
        let treasures: Vec<f64> = outcomes.iter().map(|o| o.treasures as f64).collect();
        let (mean, std) = mean_std(&treasures);
        let done = outcomes.iter().filter(|o| o.completed).count();
        EvalReport {
            head_choice,
            mean_treasures: mean,
            std_treasures: std,
            success_rate: done as f64 / outcomes.len().max(1) as f64,
            treasures,
            heads,
        }
    }
}

/// Plays one episode with `policy` choosing joint actions.
pub fn run_episode<R, P>(env: &GridWorld, rng: &mut R, mut policy: P) -> Result<EpisodeOutcome>
where
    R: Rng + ?Sized,
    P: FnMut(&EnvState, &Observation) -> Result<Vec<Action>>,
{
    let (mut state, mut obs) = env.reset();
    let mut out = EpisodeOutcome {
        treasures: 0,
        episode_return: 0.0,
        length: 0,
        completed: false,
    };
    while !state.done {
        let actions = policy(&state, &obs)?;
        let step = env.step(&mut state, &actions, rng)?;
        out.treasures += step.events.len();
        out.episode_return += step.reward;
        out.length += 1;
        out.completed = step.terminated;
        obs = step.observation;
    }
    Ok(out)
}

/// Greedy-action rollouts of a learner; nothing is updated or recorded.
pub fn evaluate_learner(
    env: &GridWorld,
    learner: &Learner<Real>,
    selector: &SelectorState,
    choice: HeadChoice,
    episodes: usize,
    mut rng: ChaCha8Rng,
) -> Result<EvalReport> {
    let m = learner.dims().n_heads;
    if let HeadChoice::Fixed(j) = choice {
        if j >= m {
            return Err(Error::Usage(format!("head {j} out of range for {m} heads")));
        }
    }
    // Argmax acting draws nothing; this generator only satisfies the signature.
    let mut unused = stream_rng(0, 0);
    let mut outcomes = Vec::with_capacity(episodes);
    let mut heads = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let head = match choice {
            HeadChoice::Greedy => selector.greedy_head(),
            HeadChoice::Fixed(j) => j,
            HeadChoice::Uniform => rng.random_range(0..m),
        };
        heads.push(head);
        let outcome = run_episode(env, &mut rng, |_, obs| {
            (0..env.n_agents())
                .map(|i| {
                    let a = learner.act(i, &obs.obs[i], head, ActMode::Argmax, &mut unused)?;
                    Ok(Action::from_index(a).expect("valid action"))
                })
                .collect()
        })?;
        outcomes.push(outcome);
    }
    Ok(EvalReport::from_outcomes(choice, &outcomes, heads))
}

/// A checkpoint together with the configuration it was trained under.
pub struct LoadedRun {
    pub config: RunConfig,
    pub env: GridWorld,
    pub learner: Learner<Real>,
    pub selector: SelectorState,
}

/// Paths where two JSON values differ, dotted.
fn differing_fields(prefix: &str, a: &Value, b: &Value, out: &mut Vec<(String, String, String)>) {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            for (k, va) in x {
                let path = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                differing_fields(&path, va, y.get(k).unwrap_or(&Value::Null), out);
            }
        }
        _ if a != b => out.push((prefix.to_string(), a.to_string(), b.to_string())),
        _ => {}
    }
}

impl LoadedRun {
    /// Loads a training checkpoint. With `expected`, the environment, map,
    /// heads and network shapes must agree with it.
    pub fn from_checkpoint(path: impl AsRef<Path>, expected: Option<&RunConfig>) -> Result<Self> {
        let archive = Archive::load(path)?;
        let extra = archive
            .meta
            .get("extra")
            .ok_or_else(|| Error::Checkpoint("not a training checkpoint".into()))?;
        let stored: RunConfig = serde_json::from_value(
            extra
                .get("run")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("run configuration missing".into()))?,
        )?;
        let map_text = extra
            .get("map")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Checkpoint("map missing".into()))?;
        let map: MapSpec = map_text.parse()?;
        let selector: SelectorState = serde_json::from_value(
            extra
                .get("selector")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("selector state missing".into()))?,
        )?;

        if let Some(exp) = expected {
            let exp = exp.resolved();
            let want = serde_json::to_value(&exp)?;
            let have = serde_json::to_value(&stored)?;
            for key in ["env", "heads", "ablation"] {
                let mut diffs = Vec::new();
                differing_fields(key, &want[key], &have[key], &mut diffs);
                if let Some((field, expected, found)) = diffs.into_iter().next() {
                    return Err(Error::CheckpointMismatch {
                        field,
                        expected,
                        found,
                    });
                }
            }
            let exp_map = MapSpec::load(&exp.map)?;
            if exp_map != map {
                return Err(Error::CheckpointMismatch {
                    field: "map".into(),
                    expected: exp.map.clone(),
                    found: "a different layout".into(),
                });
            }
        }

        let env = GridWorld::new(stored.env.clone(), map)?;
        let dims = net_dims(&env, stored.heads.len());
        let learner = Learner::from_archive(&archive, Some(&dims))?;
        Ok(LoadedRun {
            config: stored,
            env,
            learner,
            selector,
        })
    }

    pub fn evaluate(&self, choice: HeadChoice, episodes: usize, seed: u64) -> Result<EvalReport> {
        evaluate_learner(
            &self.env,
            &self.learner,
            &self.selector,
            choice,
            episodes,
            stream_rng(seed, 4),
        )
    }
}

/// Loads `checkpoint` and runs `episodes` greedy-action episodes.
pub fn evaluate(
    checkpoint: impl AsRef<Path>,
    episodes: usize,
    choice: HeadChoice,
    seed: u64,
    expected: Option<&RunConfig>,
) -> Result<EvalReport> {
    LoadedRun::from_checkpoint(checkpoint, expected)?.evaluate(choice, episodes, seed)
}
