use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::networks::{ActorNet, CriticNet, NetDims, ValueKind};
use crate::error::{Error, Result};
use crate::nn::{softmax_rows, Adam, AdamConfig, Archive, Params, Scalar};
use crate::replay::Batch;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub gamma: f64,
    /// Action-policy reward scale; log-probabilities are divided by it.
    pub reward_scale: f64,
    /// Weight of intrinsic values in the policy advantage.
    pub intrinsic_weight: f64,
    pub tau: f64,
    pub critic_lr: f64,
    pub critic_weight_decay: f64,
    pub policy_lr: f64,
    pub policy_weight_decay: f64,
    /// L2 coefficient on pre-softmax policy outputs.
    pub logit_penalty: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            gamma: 0.99,
            reward_scale: 100.0,
            intrinsic_weight: 0.1,
            tau: 0.005,
            critic_lr: 0.001,
            critic_weight_decay: 0.001,
            policy_lr: 0.001,
            policy_weight_decay: 0.0,
            logit_penalty: 0.001,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma {} outside (0, 1)", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau {} outside (0, 1]", self.tau));
        }
        if self.reward_scale.is_nan() || self.reward_scale <= 0.0 {
            return bad(format!(
                "reward_scale {} must be positive",
                self.reward_scale
            ));
        }
        if !(self.intrinsic_weight >= 0.0) {
            return bad(format!(
                "intrinsic_weight {} must be non-negative",
                self.intrinsic_weight
            ));
        }
        for (name, v) in [
            ("critic_lr", self.critic_lr),
            ("policy_lr", self.policy_lr),
            ("critic_weight_decay", self.critic_weight_decay),
            ("policy_weight_decay", self.policy_weight_decay),
            ("logit_penalty", self.logit_penalty),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} {v} must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Argmax,
}

/// Bootstrapped critic targets for one head, per agent.
#[derive(Clone, Debug)]
pub struct Targets<F: Scalar> {
    pub extrinsic: Vec<Array1<F>>,
    pub intrinsic: Vec<Array1<F>>,
}

impl<F: Scalar> Targets<F> {
    fn get(&self, kind: ValueKind) -> &[Array1<F>] {
        match kind {
            ValueKind::Extrinsic => &self.extrinsic,
            ValueKind::Intrinsic => &self.intrinsic,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StackLoss {
    pub agent: usize,
    pub head: usize,
    pub kind: ValueKind,
    pub loss: f64,
}

/// Score-function coefficients for the policy update, `[head][agent]`.
#[derive(Clone, Debug)]
pub struct PolicyTerms<F: Scalar> {
    /// `-log pi(a)/alpha + A(s, a)` per row; treated as a constant.
    pub coefficients: Vec<Vec<Array1<F>>>,
    pub advantages: Vec<Vec<Array1<F>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyStats {
    /// `[agent][head]` L2 norm of the head's parameter gradient.
    pub grad_norms: Vec<Vec<f64>>,
    /// `[agent][head]` mean policy entropy on the batch.
    pub entropies: Vec<Vec<f64>>,
}

/// Action indices as `[head][agent][row]`.
pub type JointActions = Vec<Vec<Vec<usize>>>;

/// Draws one index per row from row-wise probabilities.
pub fn sample_rows<F: Scalar, R: Rng + ?Sized>(probs: &Array2<F>, rng: &mut R) -> Vec<usize> {
    probs
        .axis_iter(Axis(0))
        .map(|row| {
            let u = rng.random::<f64>();
            let mut acc = 0.0;
            let mut last = 0;
            for (a, &p) in row.iter().enumerate() {
                let p = p.as_f64();
                if p > 0.0 {
                    last = a;
                }
                acc += p;
                if u < acc {
                    return a;
                }
            }
            last
        })
        .collect()
}

/// `sum_a pi(a) (q(a) - log pi(a) / alpha)` per row.
pub fn soft_value<F: Scalar>(
    q: &Array2<F>,
    probs: &Array2<F>,
    logp: &Array2<F>,
    alpha: f64,
) -> Array1<F> {
    let inv_alpha = F::lit(1.0 / alpha);
    let mut out = Array1::zeros(q.nrows());
    for (r, v) in out.iter_mut().enumerate() {
        let mut acc = F::zero();
        for a in 0..q.ncols() {
            acc += probs[[r, a]] * (q[[r, a]] - logp[[r, a]] * inv_alpha);
        }
        *v = acc;
    }
    out
}

/// `r + gamma (1 - done) v` elementwise.
pub fn bootstrap<F: Scalar>(
    rewards: &Array1<F>,
    dones: &Array1<F>,
    gamma: f64,
    values: &Array1<F>,
) -> Array1<F> {
    let g = F::lit(gamma);
    let mut y = rewards.clone();
    ndarray::Zip::from(&mut y)
        .and(dones)
        .and(values)
        .for_each(|y, &d, &v| *y += g * (F::one() - d) * v);
    y
}

fn as_slices(cols: &[Vec<usize>]) -> Vec<&[usize]> {
    cols.iter().map(Vec::as_slice).collect()
}

/// Multi-head multi-agent soft actor-critic.
#[derive(Clone, Debug)]
pub struct Learner<F: Scalar> {
    config: LearnerConfig,
    dims: NetDims,
    actors: Vec<ActorNet<F>>,
    target_actors: Vec<ActorNet<F>>,
    critic: CriticNet<F>,
    target_critic: CriticNet<F>,
    actor_opts: Vec<Adam<F>>,
    critic_opt: Adam<F>,
}

impl<F: Scalar> Learner<F> {
    pub fn new<R: Rng + ?Sized>(dims: NetDims, config: LearnerConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if dims.n_agents == 0 || dims.n_heads == 0 || dims.n_actions == 0 {
            return Err(Error::Config(
                "learner needs agents, heads and actions".into(),
            ));
        }
        let actors: Vec<ActorNet<F>> = (0..dims.n_agents)
            .map(|i| ActorNet::init(&dims, i, rng))
            .collect();
        let critic = CriticNet::init(&dims, rng);
        let actor_opts = actors
            .iter()
            .map(|a| {
                Adam::new(
                    a,
                    AdamConfig::new(config.policy_lr, config.policy_weight_decay),
                )
            })
            .collect();
        let critic_opt = Adam::new(
            &critic,
            AdamConfig::new(config.critic_lr, config.critic_weight_decay),
        );
        Ok(Learner {
            target_actors: actors.clone(),
            target_critic: critic.clone(),
            actors,
            critic,
            actor_opts,
            critic_opt,
            config,
            dims,
        })
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn dims(&self) -> &NetDims {
        &self.dims
    }

    pub fn actor(&self, agent: usize) -> &ActorNet<F> {
        &self.actors[agent]
    }

    pub fn actor_mut(&mut self, agent: usize) -> &mut ActorNet<F> {
        &mut self.actors[agent]
    }

    pub fn target_actor(&self, agent: usize) -> &ActorNet<F> {
        &self.target_actors[agent]
    }

    pub fn target_actor_mut(&mut self, agent: usize) -> &mut ActorNet<F> {
        &mut self.target_actors[agent]
    }

    pub fn critic(&self) -> &CriticNet<F> {
        &self.critic
    }

    pub fn critic_mut(&mut self) -> &mut CriticNet<F> {
        &mut self.critic
    }

    pub fn target_critic(&self) -> &CriticNet<F> {
        &self.target_critic
    }

    pub fn target_critic_mut(&mut self) -> &mut CriticNet<F> {
        &mut self.target_critic
    }

    /// Action probabilities of `agent` under `head` for one observation.
    pub fn action_probabilities(&self, agent: usize, obs: &[f32], head: usize) -> Result<Vec<f64>> {
        let row = Array2::from_shape_fn((1, obs.len()), |(_, c)| F::lit(obs[c] as f64));
        let logits = self.actors[agent].logits(row.view(), head)?;
        let (probs, _) = softmax_rows(logits.view());
        Ok(probs.iter().map(|p| p.as_f64()).collect())
    }

    pub fn act<R: Rng + ?Sized>(
        &self,
        agent: usize,
        obs: &[f32],
        head: usize,
        mode: ActMode,
        rng: &mut R,
    ) -> Result<usize> {
        if head >= self.dims.n_heads {
            return Err(Error::Usage(format!("head {head} out of range")));
        }
        let probs = self.action_probabilities(agent, obs, head)?;
        Ok(match mode {
            ActMode::Argmax => {
                probs
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (a, &p)| {
                        if p > best.1 {
                            (a, p)
                        } else {
                            best
                        }
                    })
                    .0
            }
            ActMode::Sample => {
                let arr = Array2::from_shape_vec((1, probs.len()), probs).expect("one row");
                sample_rows(&arr, rng)[0]
            }
        })
    }

    fn check_batch(&self, batch: &Batch<F>) -> Result<()> {
        let d = &self.dims;
        if batch.n_agents() != d.n_agents
            || batch.states.ncols() != d.state_dim
            || batch.obs.iter().any(|o| o.ncols() != d.obs_dim)
        {
            return Err(Error::Shape(
                "batch does not match learner dimensions".into(),
            ));
        }
        Ok(())
    }

    fn check_intrinsic(&self, batch: &Batch<F>, intrinsic: &[Vec<Array1<F>>]) -> Result<()> {
        let ok = intrinsic.len() == self.dims.n_heads
            && intrinsic.iter().all(|per_agent| {
                per_agent.len() == self.dims.n_agents
                    && per_agent.iter().all(|r| r.len() == batch.len())
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(
                "intrinsic rewards must be [head][agent][row]".into(),
            ))
        }
    }

    /// Targets for `head`: other agents' next actions are sampled from the
    /// target policies, the expectation over the agent's own next action is exact.
    pub fn compute_targets<R: Rng + ?Sized>(
        &self,
        batch: &Batch<F>,
        head: usize,
        intrinsic: &[Array1<F>],
        rng: &mut R,
    ) -> Result<Targets<F>> {
        self.check_batch(batch)?;
        let features = self.target_critic.trunk.predict(batch.next_states.view())?;
        let actor_features = self
            .target_actors
            .iter()
            .zip(&batch.next_obs)
            .map(|(a, o)| a.trunk.predict(o.view()))
            .collect::<Result<Vec<_>>>()?;
        self.targets_for_head(batch, &features, &actor_features, head, intrinsic, rng)
    }

    fn targets_for_head<R: Rng + ?Sized>(
        &self,
        batch: &Batch<F>,
        critic_features: &Array2<F>,
        actor_features: &[Array2<F>],
        head: usize,
        intrinsic: &[Array1<F>],
        rng: &mut R,
    ) -> Result<Targets<F>> {
        let n = self.dims.n_agents;
        let mut policies = Vec::with_capacity(n);
        let mut next_actions = Vec::with_capacity(n);
        for k in 0..n {
            let logits = self.target_actors[k].heads[head].predict(actor_features[k].view())?;
            let (probs, logp) = softmax_rows(logits.view());
            next_actions.push(sample_rows(&probs, rng));
            policies.push((probs, logp));
        }
        let actions = as_slices(&next_actions);
        let mut extrinsic = Vec::with_capacity(n);
        let mut intrinsic_y = Vec::with_capacity(n);
        for i in 0..n {
            let x = self
                .target_critic
                .stack_input(critic_features, i, &actions)?;
            let (probs, logp) = &policies[i];
            for kind in ValueKind::BOTH {
                let q = self.target_critic.stack(i, head, kind).predict(x.view())?;
                let v = soft_value(&q, probs, logp, self.config.reward_scale);
                match kind {
                    ValueKind::Extrinsic => extrinsic.push(bootstrap(
                        &batch.rewards,
                        &batch.dones,
                        self.config.gamma,
                        &v,
                    )),
                    ValueKind::Intrinsic => intrinsic_y.push(bootstrap(
                        &intrinsic[i],
                        &batch.dones,
                        self.config.gamma,
                        &v,
                    )),
                }
            }
        }
        Ok(Targets {
            extrinsic,
            intrinsic: intrinsic_y,
        })
    }

    /// Targets for every head, sharing the target trunk passes.
    pub fn compute_all_targets<R: Rng + ?Sized>(
        &self,
        batch: &Batch<F>,
        intrinsic: &[Vec<Array1<F>>],
        rng: &mut R,
    ) -> Result<Vec<Targets<F>>> {
        self.check_batch(batch)?;
        self.check_intrinsic(batch, intrinsic)?;
        let features = self.target_critic.trunk.predict(batch.next_states.view())?;
        let actor_features = self
            .target_actors
            .iter()
            .zip(&batch.next_obs)
            .map(|(a, o)| a.trunk.predict(o.view()))
            .collect::<Result<Vec<_>>>()?;
        (0..self.dims.n_heads)
            .map(|j| {
                self.targets_for_head(batch, &features, &actor_features, j, &intrinsic[j], rng)
            })
            .collect()
    }

    /// Per-stack mean squared errors at the taken actions, plus the
    /// gradient of their sum with respect to every critic parameter.
    pub fn critic_loss_and_grads(
        &self,
        batch: &Batch<F>,
        targets: &[Targets<F>],
    ) -> Result<(Vec<StackLoss>, CriticNet<F>)> {
        self.check_batch(batch)?;
        let rows = batch.len();
        let scale = F::lit(2.0 / rows as f64);
        let mut grads = self.critic.zeros_like();
        let (features, trunk_cache) = self.critic.trunk.forward(batch.states.view())?;
        let mut feature_grad = Array2::<F>::zeros(features.raw_dim());
        let actions = as_slices(&batch.actions);
        let width = self.dims.trunk_width;
        let mut losses = Vec::with_capacity(self.critic.n_stacks());
        for i in 0..self.dims.n_agents {
            let x = self.critic.stack_input(&features, i, &actions)?;
            for (j, target) in targets.iter().enumerate() {
                for kind in ValueKind::BOTH {
                    let stack = self.critic.stack(i, j, kind);
                    let (q, cache) = stack.forward(x.view())?;
                    let y = &target.get(kind)[i];
                    let mut upstream = Array2::<F>::zeros(q.raw_dim());
                    let mut sq = 0.0;
                    for r in 0..rows {
                        let a = batch.actions[i][r];
                        let diff = q[[r, a]] - y[r];
                        sq += diff.as_f64() * diff.as_f64();
                        upstream[[r, a]] = scale * diff;
                    }
                    let loss = sq / rows as f64;
                    if !loss.is_finite() {
                        return Err(Error::NonFinite(format!(
                            "critic loss for agent {i}, head {j}, {kind:?}: {loss}"
                        )));
                    }
                    losses.push(StackLoss {
                        agent: i,
                        head: j,
                        kind,
                        loss,
                    });
                    let gin = stack
                        .backward(&cache, upstream, grads.stack_mut(i, j, kind), true)
                        .expect("input gradient requested");
                    feature_grad += &gin.slice(s![.., ..width]);
                }
            }
        }
        self.critic
            .trunk
            .backward(&trunk_cache, feature_grad, &mut grads.trunk, false);
        Ok((losses, grads))
    }

    /// Summed critic loss; the value whose gradient `critic_loss_and_grads` returns.
    pub fn critic_loss(&self, batch: &Batch<F>, targets: &[Targets<F>]) -> Result<f64> {
        let (losses, _) = self.critic_loss_and_grads(batch, targets)?;
        Ok(losses.iter().map(|l| l.loss).sum())
    }

    /// One critic step on `batch`; `intrinsic` is `[head][agent][row]`.
    pub fn update_critics<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch<F>,
        intrinsic: &[Vec<Array1<F>>],
        rng: &mut R,
    ) -> Result<Vec<StackLoss>> {
        let targets = self.compute_all_targets(batch, intrinsic, rng)?;
        let (losses, grads) = self.critic_loss_and_grads(batch, &targets)?;
        if !grads.all_finite() {
            return Err(Error::NonFinite("critic gradient".into()));
        }
        self.critic_opt.step(&mut self.critic, &grads)?;
        Ok(losses)
    }

    /// Joint actions drawn from the live policies at the batch observations.
    pub fn sample_policy_actions<R: Rng + ?Sized>(
        &self,
        obs: &[Array2<F>],
        rng: &mut R,
    ) -> Result<JointActions> {
        let mut per_agent_probs = Vec::with_capacity(self.dims.n_agents);
        for (actor, o) in self.actors.iter().zip(obs) {
            let fwd = actor.forward(o.view())?;
            per_agent_probs.push(
                (0..self.dims.n_heads)
                    .map(|j| softmax_rows(fwd.logits(j).view()).0)
                    .collect::<Vec<_>>(),
            );
        }
        Ok((0..self.dims.n_heads)
            .map(|j| {
                (0..self.dims.n_agents)
                    .map(|k| sample_rows(&per_agent_probs[k][j], rng))
                    .collect()
            })
            .collect())
    }

    /// Advantages and score coefficients under the live critic.
    ///
    /// For agent `i` and head `j`, the baseline marginalizes the agent's own
    /// action with the others' sampled actions held fixed:
    /// `A = q(a_i) - sum_a pi(a) q(a)`, `q = Q_ex + beta Q_in`.
    pub fn policy_terms(&self, batch: &Batch<F>, actions: &JointActions) -> Result<PolicyTerms<F>> {
        self.check_batch(batch)?;
        let (n, m, rows) = (self.dims.n_agents, self.dims.n_heads, batch.len());
        let beta = F::lit(self.config.intrinsic_weight);
        let inv_alpha = F::lit(1.0 / self.config.reward_scale);
        let features = self.critic.trunk.predict(batch.states.view())?;
        let mut policies = Vec::with_capacity(n);
        for (actor, o) in self.actors.iter().zip(&batch.obs) {
            let fwd = actor.forward(o.view())?;
            policies.push(
                (0..m)
                    .map(|j| softmax_rows(fwd.logits(j).view()))
                    .collect::<Vec<_>>(),
            );
        }
        let mut coefficients = Vec::with_capacity(m);
        let mut advantages = Vec::with_capacity(m);
        for j in 0..m {
            let acts = as_slices(&actions[j]);
            let mut coef_j = Vec::with_capacity(n);
            let mut adv_j = Vec::with_capacity(n);
            for i in 0..n {
                let x = self.critic.stack_input(&features, i, &acts)?;
                let q_ex = self
                    .critic
                    .stack(i, j, ValueKind::Extrinsic)
                    .predict(x.view())?;
                let q_in = self
                    .critic
                    .stack(i, j, ValueKind::Intrinsic)
                    .predict(x.view())?;
                let q = q_ex + &(q_in * beta);
                let (probs, logp) = &policies[i][j];
                let mut adv = Array1::zeros(rows);
                let mut coef = Array1::zeros(rows);
                for r in 0..rows {
                    let a = acts[i][r];
                    let baseline = probs
                        .row(r)
                        .iter()
                        .zip(q.row(r))
                        .fold(F::zero(), |acc, (&p, &qv)| acc + p * qv);
                    adv[r] = q[[r, a]] - baseline;
                    coef[r] = adv[r] - logp[[r, a]] * inv_alpha;
                }
                coef_j.push(coef);
                adv_j.push(adv);
            }
            coefficients.push(coef_j);
            advantages.push(adv_j);
        }
        Ok(PolicyTerms {
            coefficients,
            advantages,
        })
    }

    /// Gradient of the surrogate `-mean(log pi(a) c) + penalty * mean(z^2)`
    /// with respect to actor parameters, for frozen actions and coefficients.
    pub fn policy_gradients(
        &self,
        obs: &[Array2<F>],
        actions: &JointActions,
        coefficients: &[Vec<Array1<F>>],
    ) -> Result<(Vec<ActorNet<F>>, PolicyStats)> {
        let (n, m) = (self.dims.n_agents, self.dims.n_heads);
        let mut all_grads = Vec::with_capacity(n);
        let mut grad_norms = vec![vec![0.0; m]; n];
        let mut entropies = vec![vec![0.0; m]; n];
        for i in 0..n {
            let actor = &self.actors[i];
            let fwd = actor.forward(obs[i].view())?;
            let rows = obs[i].nrows();
            let inv_rows = F::lit(1.0 / rows as f64);
            let penalty =
                F::lit(2.0 * self.config.logit_penalty / (rows * self.dims.n_actions) as f64);
            let mut upstream = Vec::with_capacity(m);
            for j in 0..m {
                let z = fwd.logits(j);
                let (probs, logp) = softmax_rows(z.view());
                let coef = &coefficients[j][i];
                let mut g = Array2::zeros(z.raw_dim());
                let mut entropy = 0.0;
                for r in 0..rows {
                    let c = coef[r] * inv_rows;
                    for a in 0..self.dims.n_actions {
                        g[[r, a]] = probs[[r, a]] * c + penalty * z[[r, a]];
                        entropy -= (probs[[r, a]] * logp[[r, a]]).as_f64();
                    }
                    let taken = actions[j][i][r];
                    g[[r, taken]] -= c;
                }
                entropies[i][j] = entropy / rows as f64;
                upstream.push(Some(g));
            }
            let mut grads = actor.zeros_like();
            actor.backward(&fwd, upstream, &mut grads);
            for (j, norm) in grad_norms[i].iter_mut().enumerate() {
                *norm = grads.heads[j].sq_norm().as_f64().sqrt();
                if !norm.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "policy gradient for agent {i}, head {j}"
                    )));
                }
            }
            all_grads.push(grads);
        }
        Ok((
            all_grads,
            PolicyStats {
                grad_norms,
                entropies,
            },
        ))
    }

    /// The scalar whose gradient [`Learner::policy_gradients`] computes.
    pub fn policy_surrogate(
        &self,
        obs: &[Array2<F>],
        actions: &JointActions,
        coefficients: &[Vec<Array1<F>>],
    ) -> Result<f64> {
        let mut total = 0.0;
        for (i, actor) in self.actors.iter().enumerate() {
            let fwd = actor.forward(obs[i].view())?;
            let rows = obs[i].nrows() as f64;
            for j in 0..self.dims.n_heads {
                let z = fwd.logits(j);
                let (_, logp) = softmax_rows(z.view());
                let score: f64 = (0..obs[i].nrows())
                    .map(|r| (logp[[r, actions[j][i][r]]] * coefficients[j][i][r]).as_f64())
                    .sum();
                let sq: f64 = z.iter().map(|v| v.as_f64() * v.as_f64()).sum();
                total += -score / rows
                    + self.config.logit_penalty * sq / (rows * self.dims.n_actions as f64);
            }
        }
        Ok(total)
    }

    pub fn update_policies<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch<F>,
        rng: &mut R,
    ) -> Result<PolicyStats> {
        self.check_batch(batch)?;
        let actions = self.sample_policy_actions(&batch.obs, rng)?;
        let terms = self.policy_terms(batch, &actions)?;
        let (grads, stats) = self.policy_gradients(&batch.obs, &actions, &terms.coefficients)?;
        for ((actor, opt), g) in self.actors.iter_mut().zip(&mut self.actor_opts).zip(&grads) {
            if !g.all_finite() {
                return Err(Error::NonFinite("policy gradient".into()));
            }
            opt.step(actor, g)?;
        }
        Ok(stats)
    }

    /// `target <- (1 - tau) target + tau live` for every actor and the critic.
    pub fn soft_update(&mut self, tau: f64) {
        let t = F::lit(tau);
        for (target, live) in self.target_actors.iter_mut().zip(&self.actors) {
            target.blend_from(live, t);
        }
        self.target_critic.blend_from(&self.critic, t);
    }

    /// Q-values of `agent`'s actions for the given joint actions.
    pub fn q_values(
        &self,
        states: ArrayView2<F>,
        actions: &[Vec<usize>],
        agent: usize,
        head: usize,
        kind: ValueKind,
    ) -> Result<Array2<F>> {
        self.critic
            .q_values(states, &as_slices(actions), agent, head, kind)
    }

    fn put_adam(archive: &mut Archive, prefix: &str, opt: &Adam<F>, names: &[String]) {
        let (_, m, v) = opt.state();
        for (k, name) in names.iter().enumerate() {
            archive.put(format!("{prefix}/m/{name}"), vec![m[k].len()], &m[k]);
            archive.put(format!("{prefix}/v/{name}"), vec![v[k].len()], &v[k]);
        }
    }

    fn load_adam(
        archive: &Archive,
        prefix: &str,
        opt: &mut Adam<F>,
        names: &[String],
        t: u64,
    ) -> Result<()> {
        let mut m = Vec::with_capacity(names.len());
        let mut v = Vec::with_capacity(names.len());
        for name in names {
            m.push(archive.get::<F>(&format!("{prefix}/m/{name}"))?.1);
            v.push(archive.get::<F>(&format!("{prefix}/v/{name}"))?.1);
        }
        opt.restore(t, m, v)
    }

    /// Archive with live and target parameters, optimizer moments, dims and config.
    pub fn to_archive(&self, extra: serde_json::Value) -> Archive {
        let opt_steps: Vec<u64> = self
            .actor_opts
            .iter()
            .map(|o| o.steps())
            .chain(std::iter::once(self.critic_opt.steps()))
            .collect();
        let mut archive = Archive::new(json!({
            "kind": "learner",
            "dtype": F::DTYPE,
            "dims": self.dims,
            "learner": self.config,
            "optimizer_steps": opt_steps,
            "extra": extra,
        }));
        for i in 0..self.dims.n_agents {
            archive.put_params(&format!("actor{i}"), &self.actors[i]);
            archive.put_params(&format!("target_actor{i}"), &self.target_actors[i]);
            let names: Vec<String> = self.actors[i]
                .param_meta()
                .into_iter()
                .map(|m| m.name)
                .collect();
            Self::put_adam(
                &mut archive,
                &format!("opt_actor{i}"),
                &self.actor_opts[i],
                &names,
            );
        }
        archive.put_params("critic", &self.critic);
        archive.put_params("target_critic", &self.target_critic);
        let names: Vec<String> = self
            .critic
            .param_meta()
            .into_iter()
            .map(|m| m.name)
            .collect();
        Self::put_adam(&mut archive, "opt_critic", &self.critic_opt, &names);
        archive
    }

    /// Rebuilds a learner; `expected` dims, when given, must match the archive.
    pub fn from_archive(archive: &Archive, expected: Option<&NetDims>) -> Result<Self> {
        let meta = &archive.meta;
        let field = |name: &str| {
            meta.get(name)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("metadata field `{name}` missing")))
        };
        let dtype: String = serde_json::from_value(field("dtype")?)?;
        if dtype != F::DTYPE {
            return Err(Error::CheckpointMismatch {
                field: "dtype".into(),
                expected: F::DTYPE.into(),
                found: dtype,
            });
        }
        let dims: NetDims = serde_json::from_value(field("dims")?)?;
        if let Some(exp) = expected {
            let a = serde_json::to_value(exp)?;
            let b = serde_json::to_value(dims)?;
            for (key, want) in a.as_object().expect("struct") {
                let got = &b[key];
                if got != want {
                    return Err(Error::CheckpointMismatch {
                        field: key.clone(),
                        expected: want.to_string(),
                        found: got.to_string(),
                    });
                }
            }
        }
        let config: LearnerConfig = serde_json::from_value(field("learner")?)?;
        let steps: Vec<u64> = serde_json::from_value(field("optimizer_steps")?)?;
        if steps.len() != dims.n_agents + 1 {
            return Err(Error::Checkpoint(
                "optimizer step count list has wrong length".into(),
            ));
        }
        // Shapes come from dims; values are overwritten below.
        let mut scratch = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut learner = Learner::new(dims, config, &mut scratch)?;
        for i in 0..dims.n_agents {
            archive.load_params(&format!("actor{i}"), &mut learner.actors[i])?;
            archive.load_params(&format!("target_actor{i}"), &mut learner.target_actors[i])?;
            let names: Vec<String> = learner.actors[i]
                .param_meta()
                .into_iter()
                .map(|m| m.name)
                .collect();
            Self::load_adam(
                archive,
                &format!("opt_actor{i}"),
                &mut learner.actor_opts[i],
                &names,
                steps[i],
            )?;
        }
        archive.load_params("critic", &mut learner.critic)?;
        archive.load_params("target_critic", &mut learner.target_critic)?;
        let names: Vec<String> = learner
            .critic
            .param_meta()
            .into_iter()
            .map(|m| m.name)
            .collect();
        Self::load_adam(
            archive,
            "opt_critic",
            &mut learner.critic_opt,
            &names,
            steps[dims.n_agents],
        )?;
        Ok(learner)
    }
}
