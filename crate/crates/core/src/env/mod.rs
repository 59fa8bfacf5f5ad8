//! Multi-agent gridworld with slip noise, stochastic wormholes and three
//! treasure-collection tasks.
//!
//! One call to [`GridWorld::step`] applies, in order: slip noise, moves
//! (walls block), wormhole teleports, treasure collection, wormhole
//! dynamics, reward, termination. Agents may share a cell.

mod map;

use std::cell::RefCell;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use map::{Cell, MapSpec, Pos, DEFAULT_MAP, SMALL_MAP};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Collect every active treasure, any agent may take any of them.
    Task1,
    /// Every agent collects the designated treasure.
    Task2,
    /// Agent `i` collects treasure `i`.
    Task3,
}

impl Task {
    /// Wormhole drift `(mu, sigma)`; task 1 is far more hazardous.
    pub fn default_wormhole_drift(self) -> (f64, f64) {
        match self {
            Task::Task1 => (0.05, 0.05),
            Task::Task2 | Task::Task3 => (0.005, 0.005),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    North,
    East,
    South,
    West,
    Stay,
}

impl Action {
    pub const COUNT: usize = 5;
    pub const ALL: [Action; 5] = [
        Action::North,
        Action::East,
        Action::South,
        Action::West,
        Action::Stay,
    ];

    pub fn from_index(index: usize) -> Option<Action> {
        Self::ALL.get(index).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    fn apply(self, pos: Pos) -> Pos {
        match self {
            Action::North => Pos::new(pos.x, pos.y - 1),
            Action::East => Pos::new(pos.x + 1, pos.y),
            Action::South => Pos::new(pos.x, pos.y + 1),
            Action::West => Pos::new(pos.x - 1, pos.y),
            Action::Stay => pos,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub task: Task,
    pub n_agents: usize,
    #[serde(default = "defaults::slip_prob")]
    pub slip_prob: f64,
    #[serde(default = "defaults::max_ep_length")]
    pub max_ep_length: usize,
    /// Per-step mean drift of wormhole opening probabilities; task default when unset.
    #[serde(default)]
    pub wormhole_mu: Option<f64>,
    #[serde(default)]
    pub wormhole_sigma: Option<f64>,
    #[serde(default = "defaults::step_penalty")]
    pub step_penalty: f64,
    #[serde(default = "defaults::treasure_reward")]
    pub treasure_reward: f64,
    #[serde(default = "defaults::proximity_radius")]
    pub proximity_radius: usize,
    #[serde(default)]
    pub designated_treasure: usize,
}

mod defaults {
    pub fn slip_prob() -> f64 {
        0.1
    }
    pub fn max_ep_length() -> usize {
        500
    }
    pub fn step_penalty() -> f64 {
        0.01
    }
    pub fn treasure_reward() -> f64 {
        1.0
    }
    pub fn proximity_radius() -> usize {
        3
    }
}

impl EnvConfig {
    pub fn new(task: Task, n_agents: usize) -> Self {
        EnvConfig {
            task,
            n_agents,
            slip_prob: defaults::slip_prob(),
            max_ep_length: defaults::max_ep_length(),
            wormhole_mu: None,
            wormhole_sigma: None,
            step_penalty: defaults::step_penalty(),
            treasure_reward: defaults::treasure_reward(),
            proximity_radius: defaults::proximity_radius(),
            designated_treasure: 0,
        }
    }

    pub fn wormhole_drift(&self) -> (f64, f64) {
        let (mu, sigma) = self.task.default_wormhole_drift();
        (
            self.wormhole_mu.unwrap_or(mu),
            self.wormhole_sigma.unwrap_or(sigma),
        )
    }

    /// Copy with every task-dependent default made explicit.
    pub fn resolved(&self) -> Self {
        let (mu, sigma) = self.wormhole_drift();
        EnvConfig {
            wormhole_mu: Some(mu),
            wormhole_sigma: Some(sigma),
            ..self.clone()
        }
    }

    /// Treasures in play: the first `n_agents` treasure ids.
    pub fn active_treasures(&self) -> usize {
        self.n_agents
    }

    pub fn validate(&self, map: &MapSpec) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..=1.0).contains(&self.slip_prob) {
            return bad(format!("slip_prob {} outside [0, 1]", self.slip_prob));
        }
        if self.max_ep_length == 0 {
            return bad("max_ep_length must be at least 1".into());
        }
        if self.n_agents == 0 {
            return bad("n_agents must be at least 1".into());
        }
        if self.n_agents > map.n_treasures() {
            return bad(format!(
                "n_agents {} exceeds the map's {} treasures",
                self.n_agents,
                map.n_treasures()
            ));
        }
        if self.n_agents > map.spawn_cells.len() {
            return bad(format!(
                "n_agents {} exceeds the map's {} spawn cells",
                self.n_agents,
                map.spawn_cells.len()
            ));
        }
        if self.proximity_radius == 0 {
            return bad("proximity_radius must be at least 1".into());
        }
        let (mu, sigma) = self.wormhole_drift();
        if !mu.is_finite() || !sigma.is_finite() || sigma < 0.0 {
            return bad(format!("invalid wormhole drift N({mu}, {sigma})"));
        }
        if self.task == Task::Task2 && self.designated_treasure >= self.active_treasures() {
            return bad(format!(
                "designated_treasure {} is not among the {} active treasures",
                self.designated_treasure,
                self.active_treasures()
            ));
        }
        Ok(())
    }
}

/// Full simulator snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub positions: Vec<Pos>,
    pub rho: Vec<f64>,
    pub open: Vec<bool>,
    /// `collected[agent][treasure]`, over active treasures.
    pub collected: Vec<Vec<bool>>,
    pub t: usize,
    pub done: bool,
}

/// Per-agent local observations plus the global state vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub obs: Vec<Vec<f32>>,
    pub state: Vec<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Collection {
    pub agent: usize,
    pub treasure: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    /// Shared extrinsic reward.
    pub reward: f64,
    /// Episode over, either by task completion or by the length limit.
    pub done: bool,
    /// Task completed; the only case that masks bootstrapping.
    pub terminated: bool,
    pub events: Vec<Collection>,
}

#[derive(Clone, Debug)]
pub struct GridWorld {
    map: MapSpec,
    config: EnvConfig,
}

impl GridWorld {
    pub fn new(config: EnvConfig, map: MapSpec) -> Result<Self> {
        config.validate(&map)?;
        Ok(GridWorld { map, config })
    }

    pub fn map(&self) -> &MapSpec {
        &self.map
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn n_agents(&self) -> usize {
        self.config.n_agents
    }

    pub fn n_actions(&self) -> usize {
        Action::COUNT
    }

    pub fn obs_dim(&self) -> usize {
        2 + 4 + 5 + 3 * (self.config.n_agents - 1) + self.config.active_treasures()
    }

    fn agent_state_dim(&self) -> usize {
        self.map.width + self.map.height + 4 + 5 + self.config.active_treasures()
    }

    pub fn state_dim(&self) -> usize {
        self.config.n_agents * self.agent_state_dim()
    }

    pub fn spawn_of(&self, agent: usize) -> Pos {
        self.map.spawn_cells[agent]
    }

    /// Fresh episode: agent `i` on the `i`-th spawn cell, wormholes closed
    /// at zero probability, nothing collected.
    pub fn reset(&self) -> (EnvState, Observation) {
        let n = self.config.n_agents;
        let state = EnvState {
            positions: (0..n).map(|i| self.spawn_of(i)).collect(),
            rho: vec![0.0; self.map.wormhole_positions.len()],
            open: vec![false; self.map.wormhole_positions.len()],
            collected: vec![vec![false; self.config.active_treasures()]; n],
            t: 0,
            done: false,
        };
        let obs = self.observe(&state);
        (state, obs)
    }

    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &mut EnvState,
        actions: &[Action],
        rng: &mut R,
    ) -> Result<StepOutcome> {
        if state.done {
            return Err(Error::Usage("step called on a finished episode".into()));
        }
        if actions.len() != self.config.n_agents {
            return Err(Error::Usage(format!(
                "expected {} actions, got {}",
                self.config.n_agents,
                actions.len()
            )));
        }

        for (agent, &intended) in actions.iter().enumerate() {
            let mut action = intended;
            if self.config.slip_prob > 0.0 && rng.random::<f64>() < self.config.slip_prob {
                action = Action::ALL[rng.random_range(0..Action::COUNT)];
            }
            let target = action.apply(state.positions[agent]);
            if !self.map.is_wall(target) {
                state.positions[agent] = target;
            }
        }

        for agent in 0..self.config.n_agents {
            if let Some(w) = self.map.wormhole_at(state.positions[agent]) {
                if state.open[w] {
                    state.positions[agent] = self.spawn_of(agent);
                }
            }
        }

        let events = self.collect(state);
        self.advance_wormholes(state, rng);

        let (task_reward, complete) = self.task_reward(&events, &state.collected);
        let reward = task_reward - self.config.step_penalty;
        state.t += 1;
        let truncated = state.t >= self.config.max_ep_length;
        state.done = complete || truncated;

        Ok(StepOutcome {
            observation: self.observe(state),
            reward,
            done: state.done,
            terminated: complete,
            events,
        })
    }

    /// Fires collection events for agents standing on treasures the task
    /// rewards, updating the collected flags.
    fn collect(&self, state: &mut EnvState) -> Vec<Collection> {
        let active = self.config.active_treasures();
        let mut events = Vec::new();
        for agent in 0..self.config.n_agents {
            let Some(treasure) = self.map.treasure_at(state.positions[agent]) else {
                continue;
            };
            if treasure >= active {
                continue;
            }
            let rewarded = match self.config.task {
                Task::Task1 => !state.collected.iter().any(|c| c[treasure]),
                Task::Task2 => {
                    treasure == self.config.designated_treasure && !state.collected[agent][treasure]
                }
                Task::Task3 => treasure == agent && !state.collected[agent][treasure],
            };
            if rewarded {
                state.collected[agent][treasure] = true;
                events.push(Collection { agent, treasure });
            }
        }
        events
    }

    /// Reward from this step's collection events (no step penalty) and
    /// whether the task is complete given the updated flags.
    pub fn task_reward(&self, events: &[Collection], collected: &[Vec<bool>]) -> (f64, bool) {
        let reward = events.len() as f64 * self.config.treasure_reward;
        let n = self.config.n_agents;
        let complete = match self.config.task {
            Task::Task1 => {
                (0..self.config.active_treasures()).all(|t| collected.iter().any(|c| c[t]))
            }
            Task::Task2 => {
                let d = self.config.designated_treasure;
                collected.iter().all(|c| c[d])
            }
            Task::Task3 => (0..n).all(|i| collected[i][i]),
        };
        (reward, complete)
    }

    pub fn advance_wormholes<R: Rng + ?Sized>(&self, state: &mut EnvState, rng: &mut R) {
        let (mu, sigma) = self.config.wormhole_drift();
        let normal = Normal::new(mu, sigma).expect("drift validated at construction");
        let draws = RefCell::new(WormholeDraws::new(rng, normal));
        advance_wormholes_with(
            state,
            |rho| draws.borrow_mut().opens(rho),
            || draws.borrow_mut().drift(),
        );
    }

    /// Hazard level of a cell: 1 for an open wormhole, its opening
    /// probability for a closed one, 0 elsewhere.
    fn hazard(&self, state: &EnvState, pos: Pos) -> f32 {
        match self.map.wormhole_at(pos) {
            Some(w) if state.open[w] => 1.0,
            Some(w) => state.rho[w] as f32,
            None => 0.0,
        }
    }

    fn neighbours(pos: Pos) -> [Pos; 4] {
        [
            Action::North.apply(pos),
            Action::East.apply(pos),
            Action::South.apply(pos),
            Action::West.apply(pos),
        ]
    }

    fn push_local(&self, state: &EnvState, pos: Pos, out: &mut Vec<f32>) {
        let nbrs = Self::neighbours(pos);
        out.extend(nbrs.iter().map(|&p| self.map.is_wall(p) as u8 as f32));
        out.push(self.hazard(state, pos));
        out.extend(nbrs.iter().map(|&p| self.hazard(state, p)));
    }

    pub fn observe(&self, state: &EnvState) -> Observation {
        let n = self.config.n_agents;
        let radius = self.config.proximity_radius;
        let mut obs = Vec::with_capacity(n);
        for i in 0..n {
            let pos = state.positions[i];
            let mut o = Vec::with_capacity(self.obs_dim());
            o.push(pos.x as f32 / self.map.width as f32);
            o.push(pos.y as f32 / self.map.height as f32);
            self.push_local(state, pos, &mut o);
            for (k, &other) in state.positions.iter().enumerate() {
                if k == i {
                    continue;
                }
                if pos.manhattan(other) <= radius {
                    o.push((other.x as f32 - pos.x as f32) / radius as f32);
                    o.push((other.y as f32 - pos.y as f32) / radius as f32);
                    o.push(1.0);
                } else {
                    o.extend([0.0; 3]);
                }
            }
            o.extend(state.collected[i].iter().map(|&c| c as u8 as f32));
            obs.push(o);
        }

        let mut global = Vec::with_capacity(self.state_dim());
        for i in 0..n {
            let pos = state.positions[i];
            let base = global.len();
            global.resize(base + self.map.width + self.map.height, 0.0);
            global[base + pos.x] = 1.0;
            global[base + self.map.width + pos.y] = 1.0;
            self.push_local(state, pos, &mut global);
            global.extend(state.collected[i].iter().map(|&c| c as u8 as f32));
        }
        Observation { obs, state: global }
    }
}

struct WormholeDraws<'a, R: Rng + ?Sized> {
    rng: &'a mut R,
    normal: Normal<f64>,
}

impl<'a, R: Rng + ?Sized> WormholeDraws<'a, R> {
    fn new(rng: &'a mut R, normal: Normal<f64>) -> Self {
        WormholeDraws { rng, normal }
    }

    fn opens(&mut self, rho: f64) -> bool {
        self.rng.random::<f64>() < rho
    }

    fn drift(&mut self) -> f64 {
        self.normal.sample(self.rng)
    }
}

/// Wormhole dynamics with explicit randomness sources.
///
/// An open wormhole closes (it stays open for exactly one step). A closed one
/// opens with probability `rho`, resetting `rho` to zero; otherwise `rho`
/// drifts by one sample and is clipped to `[0, 1]`.
pub fn advance_wormholes_with(
    state: &mut EnvState,
    mut opens: impl FnMut(f64) -> bool,
    mut drift: impl FnMut() -> f64,
) {
    for w in 0..state.rho.len() {
        if state.open[w] {
            state.open[w] = false;
            continue;
        }
        if opens(state.rho[w]) {
            state.open[w] = true;
            state.rho[w] = 0.0;
        } else {
            state.rho[w] = (state.rho[w] + drift()).clamp(0.0, 1.0);
        }
    }
}
