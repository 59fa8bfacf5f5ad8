//! End-to-end training: rollouts under the selected head, replay writes,
//! periodic learner updates and selector updates at episode ends.
//!
//! Output directory layout, when one is given:
//!
//! | file            | content                                        |
//! |-----------------|------------------------------------------------|
//! | `config.toml`   | fully resolved run configuration               |
//! | `map.txt`       | the map the run used                           |
//! | `metrics.jsonl` | one [`EpisodeRecord`] per finished episode     |
//! | `losses.jsonl`  | one [`LossRecord`] per executed update round   |
//! | `eval.jsonl`    | one [`EvalRecord`] per periodic evaluation     |
//! | `visits.csv`    | `agent,x,y,count` for every visited cell       |
//! | `checkpoint.mxa`| learner, selector and counters                 |
//! | `summary.json`  | the returned [`TrainSummary`]                  |

mod config;
mod eval;
mod metrics;

use std::path::{Path, PathBuf};

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::env::{Action, EnvState, GridWorld, MapSpec, Observation, Pos};
use crate::error::{Error, Result};
use crate::nn::Archive;
use crate::novelty::{intrinsic_reward, CentralTable, RewardKind, VisitTable};
use crate::replay::{Batch, ReplayBuffer, TransitionRecord};
use crate::sac::{ActMode, Learner, NetDims};
use crate::selector::SelectorState;

pub use config::{Ablations, RunConfig};
pub use eval::{
    evaluate, evaluate_learner, run_episode, EpisodeOutcome, EvalReport, HeadChoice, LoadedRun,
};
pub use metrics::{
    mean_std, read_jsonl, running_mean, EpisodeRecord, EvalRecord, JsonlWriter, LossRecord,
};

/// Scalar type of every network trained here.
pub type Real = f32;

const CHECKPOINT_FILE: &str = "checkpoint.mxa";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub env_steps: u64,
    pub episodes: u64,
    /// Rounds due by step count, `total_steps / steps_per_update`.
    pub update_rounds: u64,
    /// Due rounds skipped because the buffer held fewer than `batch_size` records.
    pub skipped_update_rounds: u64,
    pub learner_iterations: u64,
    pub selector_gradient_steps: u64,
    pub treasure_events: u64,
    /// Mean treasures over the last 100 finished episodes.
    pub running_mean_treasures: Option<f64>,
    pub head_counts: Vec<u64>,
    pub final_probabilities: Vec<f64>,
    pub checkpoint: Option<PathBuf>,
}

/// Stream ids derived from the run seed; each consumer owns one.
enum Stream {
    Env = 0,
    Act = 1,
    Learn = 2,
    Selector = 3,
    Eval = 4,
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Network shapes implied by a world and a head count.
pub fn net_dims(env: &GridWorld, n_heads: usize) -> NetDims {
    NetDims::gridworld(
        env.n_agents(),
        n_heads,
        env.n_actions(),
        env.obs_dim(),
        env.state_dim(),
    )
}

struct Outputs {
    dir: PathBuf,
    metrics: JsonlWriter,
    losses: JsonlWriter,
    evals: JsonlWriter,
}

/// Per-episode accumulators.
struct Episode {
    head: usize,
    probabilities: Vec<f64>,
    ret: f64,
    discounted: f64,
    discount: f64,
    treasures: usize,
    length: usize,
    completed: bool,
}

impl Episode {
    fn start(selector: &SelectorState, rng: &mut ChaCha8Rng) -> Self {
        Episode {
            head: selector.sample_head(rng),
            probabilities: selector.probabilities(),
            ret: 0.0,
            discounted: 0.0,
            discount: 1.0,
            treasures: 0,
            length: 0,
            completed: false,
        }
    }
}

pub struct Trainer {
    config: RunConfig,
    rewards: Vec<RewardKind>,
    env: GridWorld,
    learner: Learner<Real>,
    selector: SelectorState,
    buffer: ReplayBuffer,
    visits: VisitTable,
    central: Option<CentralTable>,
    env_rng: ChaCha8Rng,
    act_rng: ChaCha8Rng,
    learn_rng: ChaCha8Rng,
    selector_rng: ChaCha8Rng,
    outputs: Option<Outputs>,
    trajectory: Option<Vec<Vec<Pos>>>,
    episodes: Vec<EpisodeRecord>,
    summary: TrainSummary,
}

impl Trainer {
    /// Loads the configured map and prepares a run; `out` receives logs.
    pub fn new(config: &RunConfig, out: Option<&Path>) -> Result<Self> {
        let map = MapSpec::load(&config.map)?;
        Self::with_map(config, map, out)
    }

    pub fn with_map(config: &RunConfig, map: MapSpec, out: Option<&Path>) -> Result<Self> {
        config.validate()?;
        let config = config.resolved();
        let env = GridWorld::new(config.env.clone(), map)?;
        let rewards = config.head_rewards();
        let m = rewards.len();
        let dims = net_dims(&env, m);
        let mut init_rng = stream_rng(config.seed, Stream::Learn as u64);
        let learner = Learner::new(dims, config.learner.clone(), &mut init_rng)?;
        let selector = SelectorState::new(m, config.effective_selector())?;
        let buffer = ReplayBuffer::new(
            config.buffer_capacity,
            env.n_agents(),
            env.state_dim(),
            env.obs_dim(),
        );
        let visits = VisitTable::for_map(env.map(), env.n_agents(), config.zeta);
        let central = rewards
            .contains(&RewardKind::Centralized)
            .then(|| CentralTable::new(config.zeta));

        let outputs = match out {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                write_file(&dir.join("config.toml"), &config.to_toml_string()?)?;
                write_file(&dir.join("map.txt"), &env.map().to_ascii())?;
                Some(Outputs {
                    dir: dir.to_path_buf(),
                    metrics: JsonlWriter::create(dir.join("metrics.jsonl"))?,
                    losses: JsonlWriter::create(dir.join("losses.jsonl"))?,
                    evals: JsonlWriter::create(dir.join("eval.jsonl"))?,
                })
            }
            None => None,
        };

        Ok(Trainer {
            summary: TrainSummary {
                env_steps: 0,
                episodes: 0,
                update_rounds: 0,
                skipped_update_rounds: 0,
                learner_iterations: 0,
                selector_gradient_steps: 0,
                treasure_events: 0,
                running_mean_treasures: None,
                head_counts: vec![0; m],
                final_probabilities: selector.probabilities(),
                checkpoint: None,
            },
            env_rng: stream_rng(config.seed, Stream::Env as u64),
            act_rng: stream_rng(config.seed, Stream::Act as u64),
            learn_rng: init_rng,
            selector_rng: stream_rng(config.seed, Stream::Selector as u64),
            config,
            rewards,
            env,
            learner,
            selector,
            buffer,
            visits,
            central,
            outputs,
            trajectory: None,
            episodes: Vec::new(),
        })
    }

    /// Keeps every joint position visited, for auditing visit counts.
    pub fn record_trajectory(&mut self, on: bool) {
        self.trajectory = on.then(Vec::new);
    }

    pub fn trajectory(&self) -> Option<&[Vec<Pos>]> {
        self.trajectory.as_deref()
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn env(&self) -> &GridWorld {
        &self.env
    }

    pub fn learner(&self) -> &Learner<Real> {
        &self.learner
    }

    pub fn selector(&self) -> &SelectorState {
        &self.selector
    }

    pub fn visits(&self) -> &VisitTable {
        &self.visits
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn episodes(&self) -> &[EpisodeRecord] {
        &self.episodes
    }

    /// Runs `total_steps` environment steps.
    ///
    /// A non-finite loss, gradient or reward aborts the run; the error names
    /// the last checkpoint written, if any.
    pub fn run(&mut self) -> Result<TrainSummary> {
        match self.run_inner() {
            Ok(()) => {}
            Err(Error::NonFinite(msg)) => {
                let last = match &self.summary.checkpoint {
                    Some(p) => format!("last good checkpoint {}", p.display()),
                    None => "no checkpoint written".to_string(),
                };
                self.flush_outputs()?;
                return Err(Error::NonFinite(format!("{msg} ({last})")));
            }
            Err(e) => return Err(e),
        }
        if let Some(dir) = self.outputs.as_ref().map(|o| o.dir.clone()) {
            self.save_checkpoint(&dir.join(CHECKPOINT_FILE))?;
            let mut csv = Vec::new();
            self.visits
                .write_csv(&mut csv)
                .map_err(|e| Error::io(dir.join("visits.csv"), e))?;
            write_file(&dir.join("visits.csv"), &String::from_utf8_lossy(&csv))?;
            self.flush_outputs()?;
            write_file(
                &dir.join("summary.json"),
                &serde_json::to_string_pretty(&self.summary)?,
            )?;
        }
        Ok(self.summary.clone())
    }

    fn run_inner(&mut self) -> Result<()> {
        let total = self.config.total_steps;
        let spu = self.config.steps_per_update;
        let (mut state, mut obs) = self.env.reset();
        self.record_visits(&state.positions);
        let mut episode = Episode::start(&self.selector, &mut self.selector_rng);

        for _ in 0..total {
            let (next_state, next_obs, done) = self.env_step(&state, &obs, &mut episode)?;
            state = next_state;
            obs = next_obs;
            self.summary.env_steps += 1;
            let steps = self.summary.env_steps;

            if steps.is_multiple_of(spu) {
                self.update_round()?;
            }
            if done {
                self.finish_episode(&episode)?;
                (state, obs) = self.env.reset();
                self.record_visits(&state.positions);
                episode = Episode::start(&self.selector, &mut self.selector_rng);
            }
            if self.config.checkpoint_every > 0
                && steps.is_multiple_of(self.config.checkpoint_every)
            {
                if let Some(dir) = self.outputs.as_ref().map(|o| o.dir.clone()) {
                    self.save_checkpoint(&dir.join(CHECKPOINT_FILE))?;
                }
            }
            if self.config.eval_every > 0 && steps.is_multiple_of(self.config.eval_every) {
                self.periodic_eval()?;
            }
        }
        self.summary.final_probabilities = self.selector.probabilities();
        Ok(())
    }

    fn env_step(
        &mut self,
        state: &EnvState,
        obs: &Observation,
        episode: &mut Episode,
    ) -> Result<(EnvState, Observation, bool)> {
        let actions = (0..self.env.n_agents())
            .map(|i| {
                self.learner.act(
                    i,
                    &obs.obs[i],
                    episode.head,
                    ActMode::Sample,
                    &mut self.act_rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let joint: Vec<Action> = actions
            .iter()
            .map(|&a| Action::from_index(a).expect("policy outputs valid actions"))
            .collect();
        let mut next = state.clone();
        let outcome = self.env.step(&mut next, &joint, &mut self.env_rng)?;
        if !outcome.reward.is_finite() {
            return Err(Error::NonFinite(format!(
                "extrinsic reward {}",
                outcome.reward
            )));
        }
        self.record_visits(&next.positions);
        self.buffer.push(&TransitionRecord {
            state: obs.state.clone(),
            next_state: outcome.observation.state.clone(),
            obs: obs.obs.clone(),
            next_obs: outcome.observation.obs.clone(),
            actions,
            extrinsic_reward: outcome.reward,
            done: outcome.terminated,
            next_cells: next.positions.clone(),
        })?;

        let gamma = self.config.learner.gamma;
        episode.ret += outcome.reward;
        episode.discounted += episode.discount * outcome.reward;
        episode.discount *= gamma;
        episode.treasures += outcome.events.len();
        episode.length += 1;
        episode.completed = outcome.terminated;
        self.summary.treasure_events += outcome.events.len() as u64;
        Ok((next, outcome.observation, outcome.done))
    }

    fn record_visits(&mut self, positions: &[Pos]) {
        for (i, &p) in positions.iter().enumerate() {
            self.visits.record_visit(i, p);
        }
        if let Some(c) = self.central.as_mut() {
            c.record_visit(positions);
        }
        if let Some(t) = self.trajectory.as_mut() {
            t.push(positions.to_vec());
        }
    }

    /// Intrinsic rewards `[head][agent][row]` for the cells each row reached,
    /// read from the current visit counts.
    pub fn intrinsic_rewards(&self, batch: &Batch<Real>) -> Result<Vec<Vec<Array1<Real>>>> {
        let (n, rows) = (self.env.n_agents(), batch.len());
        let m = self.rewards.len();
        let mut out = vec![vec![Array1::<Real>::zeros(rows); n]; m];
        let mut novelties = Vec::with_capacity(n);
        let mut joint = Vec::with_capacity(n);
        for r in 0..rows {
            joint.clear();
            joint.extend((0..n).map(|i| batch.next_cells[i][r]));
            for i in 0..n {
                self.visits.novelties_into(joint[i], &mut novelties);
                for (j, &kind) in self.rewards.iter().enumerate() {
                    let g = match kind {
                        RewardKind::Centralized => self
                            .central
                            .as_ref()
                            .expect("joint counts kept for centralized heads")
                            .centralized_reward(&joint),
                        _ => intrinsic_reward(kind, &novelties, i)?,
                    };
                    out[j][i][r] = g as Real;
                }
            }
        }
        Ok(out)
    }

    fn update_round(&mut self) -> Result<()> {
        self.summary.update_rounds += 1;
        if self.buffer.len() < self.config.batch_size {
            self.summary.skipped_update_rounds += 1;
            return Ok(());
        }
        let niters = self.config.niters;
        let (mut ex, mut inn, mut ent, mut norm) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..niters {
            let batch: Batch<Real> = self
                .buffer
                .sample(self.config.batch_size, &mut self.learn_rng)
                .expect("buffer holds a full batch");
            let intrinsic = self.intrinsic_rewards(&batch)?;
            let losses = self
                .learner
                .update_critics(&batch, &intrinsic, &mut self.learn_rng)?;
            let stats = self.learner.update_policies(&batch, &mut self.learn_rng)?;
            self.learner.soft_update(self.config.learner.tau);
            self.summary.learner_iterations += 1;

            let per_kind = losses.len() as f64 / 2.0;
            for l in &losses {
                match l.kind {
                    crate::sac::ValueKind::Extrinsic => ex += l.loss / per_kind,
                    crate::sac::ValueKind::Intrinsic => inn += l.loss / per_kind,
                }
            }
            let cells = (stats.entropies.len() * stats.entropies[0].len()) as f64;
            ent += stats.entropies.iter().flatten().sum::<f64>() / cells;
            norm += stats.grad_norms.iter().flatten().sum::<f64>() / cells;
        }
        let k = niters as f64;
        let record = LossRecord {
            round: self.summary.update_rounds,
            env_steps: self.summary.env_steps,
            critic_extrinsic: ex / k,
            critic_intrinsic: inn / k,
            policy_entropy: ent / k,
            policy_grad_norm: norm / k,
        };
        if let Some(o) = self.outputs.as_mut() {
            o.losses.write(&record)?;
        }
        Ok(())
    }

    fn finish_episode(&mut self, episode: &Episode) -> Result<()> {
        if self.selector.n_heads() > 1 {
            let reps = self.config.selector_repetitions();
            self.selector
                .update(episode.discounted, episode.head, reps)?;
            if !self.selector.config.uniform {
                self.summary.selector_gradient_steps += reps as u64;
            }
        }
        self.summary.episodes += 1;
        self.summary.head_counts[episode.head] += 1;
        let record = EpisodeRecord {
            episode: self.summary.episodes - 1,
            env_steps: self.summary.env_steps,
            length: episode.length,
            head: episode.head,
            head_kind: self.config.heads[episode.head].to_string(),
            treasures: episode.treasures,
            completed: episode.completed,
            episode_return: episode.ret,
            discounted_return: episode.discounted,
            probabilities: episode.probabilities.clone(),
            mu: self.selector.mu.clone(),
        };
        if let Some(o) = self.outputs.as_mut() {
            o.metrics.write(&record)?;
            o.metrics.flush()?;
        }
        self.episodes.push(record);
        let recent: Vec<f64> = self
            .episodes
            .iter()
            .rev()
            .take(100)
            .map(|e| e.treasures as f64)
            .collect();
        self.summary.running_mean_treasures = Some(mean_std(&recent).0);
        Ok(())
    }

    fn periodic_eval(&mut self) -> Result<()> {
        let seed = self
            .config
            .seed
            .wrapping_add(self.summary.env_steps)
            .wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let report = eval::evaluate_learner(
            &self.env,
            &self.learner,
            &self.selector,
            HeadChoice::Greedy,
            self.config.eval_episodes,
            stream_rng(seed, Stream::Eval as u64),
        )?;
        let record = EvalRecord {
            env_steps: self.summary.env_steps,
            mean_treasures: report.mean_treasures,
            std_treasures: report.std_treasures,
            success_rate: report.success_rate,
        };
        if let Some(o) = self.outputs.as_mut() {
            o.evals.write(&record)?;
            o.evals.flush()?;
        }
        Ok(())
    }

    pub fn to_archive(&self) -> Result<Archive> {
        Ok(self.learner.to_archive(json!({
            "run": serde_json::to_value(&self.config)?,
            "map": self.env.map().to_ascii(),
            "selector": serde_json::to_value(&self.selector)?,
            "env_steps": self.summary.env_steps,
            "episodes": self.summary.episodes,
        })))
    }

    pub fn save_checkpoint(&mut self, path: &Path) -> Result<()> {
        self.to_archive()?.save(path)?;
        self.summary.checkpoint = Some(path.to_path_buf());
        Ok(())
    }

    fn flush_outputs(&mut self) -> Result<()> {
        if let Some(o) = self.outputs.as_mut() {
            o.metrics.flush()?;
            o.losses.flush()?;
            o.evals.flush()?;
        }
        Ok(())
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Convenience wrapper: build a trainer and run it.
pub fn train(config: &RunConfig, out: Option<&Path>) -> Result<TrainSummary> {
    Trainer::new(config, out)?.run()
}

/// Uniform random joint action.
pub fn random_actions<R: Rng + ?Sized>(n_agents: usize, rng: &mut R) -> Vec<Action> {
    (0..n_agents)
        .map(|_| Action::ALL[rng.random_range(0..Action::COUNT)])
        .collect()
}
