use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, MlpCache, MlpSpec, ParamMeta, Params, Scalar};

/// Reward stream an output stack predicts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ValueKind {
    Extrinsic,
    Intrinsic,
}

impl ValueKind {
    pub const BOTH: [ValueKind; 2] = [ValueKind::Extrinsic, ValueKind::Intrinsic];

    fn tag(self) -> &'static str {
        match self {
            ValueKind::Extrinsic => "ex",
            ValueKind::Intrinsic => "in",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetDims {
    pub n_agents: usize,
    pub n_heads: usize,
    pub n_actions: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub trunk_width: usize,
    pub actor_head_width: usize,
    pub critic_head_width: usize,
}

impl NetDims {
    /// Layer widths of the gridworld architecture.
    pub fn gridworld(
        n_agents: usize,
        n_heads: usize,
        n_actions: usize,
        obs_dim: usize,
        state_dim: usize,
    ) -> Self {
        NetDims {
            n_agents,
            n_heads,
            n_actions,
            obs_dim,
            state_dim,
            trunk_width: 128,
            actor_head_width: 32,
            critic_head_width: 128,
        }
    }

    pub fn critic_stack_input(&self) -> usize {
        self.trunk_width + (self.n_agents - 1) * self.n_actions
    }
}

fn concat_slices<'a, F: Scalar>(nets: impl IntoIterator<Item = &'a Mlp<F>>) -> Vec<&'a [F]> {
    nets.into_iter().flat_map(|n| n.param_slices()).collect()
}

/// One agent's policy: a shared trunk and one output head per reward kind.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorNet<F: Scalar> {
    pub trunk: Mlp<F>,
    pub heads: Vec<Mlp<F>>,
}

/// Activations of every head for one observation batch.
pub struct ActorForward<F: Scalar> {
    pub trunk_cache: MlpCache<F>,
    pub head_caches: Vec<MlpCache<F>>,
}

impl<F: Scalar> ActorForward<F> {
    pub fn logits(&self, head: usize) -> &Array2<F> {
        self.head_caches[head].output()
    }
}

impl<F: Scalar> ActorNet<F> {
    pub fn init<R: Rng + ?Sized>(dims: &NetDims, agent: usize, rng: &mut R) -> Self {
        let trunk_spec = MlpSpec {
            widths: vec![dims.obs_dim, dims.trunk_width],
            activations: vec![Activation::Relu],
        };
        let head_spec = MlpSpec {
            widths: vec![dims.trunk_width, dims.actor_head_width, dims.n_actions],
            activations: vec![Activation::Relu, Activation::Identity],
        };
        ActorNet {
            trunk: Mlp::init(&trunk_spec, format!("actor{agent}.trunk"), rng),
            heads: (0..dims.n_heads)
                .map(|j| Mlp::init(&head_spec, format!("actor{agent}.head{j}"), rng))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ActorNet {
            trunk: self.trunk.zeros_like(),
            heads: self.heads.iter().map(Mlp::zeros_like).collect(),
        }
    }

    pub fn logits(&self, obs: ArrayView2<F>, head: usize) -> Result<Array2<F>> {
        let h = self.trunk.predict(obs)?;
        self.heads[head].predict(h.view())
    }

    pub fn forward(&self, obs: ArrayView2<F>) -> Result<ActorForward<F>> {
        let (h, trunk_cache) = self.trunk.forward(obs)?;
        let head_caches = self
            .heads
            .iter()
            .map(|head| head.forward(h.view()).map(|(_, c)| c))
            .collect::<Result<_>>()?;
        Ok(ActorForward {
            trunk_cache,
            head_caches,
        })
    }

    /// Backpropagates per-head logit gradients (`None` skips a head).
    pub fn backward(
        &self,
        fwd: &ActorForward<F>,
        upstream: Vec<Option<Array2<F>>>,
        grads: &mut Self,
    ) {
        let mut trunk_grad: Option<Array2<F>> = None;
        for (j, g) in upstream.into_iter().enumerate() {
            let Some(g) = g else { continue };
            let gin = self.heads[j]
                .backward(&fwd.head_caches[j], g, &mut grads.heads[j], true)
                .expect("input gradient requested");
            match trunk_grad.as_mut() {
                Some(t) => *t += &gin,
                None => trunk_grad = Some(gin),
            }
        }
        if let Some(g) = trunk_grad {
            self.trunk
                .backward(&fwd.trunk_cache, g, &mut grads.trunk, false);
        }
    }
}

impl<F: Scalar> Params<F> for ActorNet<F> {
    fn param_slices(&self) -> Vec<&[F]> {
        concat_slices(std::iter::once(&self.trunk).chain(&self.heads))
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [F]> {
        std::iter::once(&mut self.trunk)
            .chain(self.heads.iter_mut())
            .flat_map(|n| n.param_slices_mut())
            .collect()
    }

    fn param_meta(&self) -> Vec<ParamMeta> {
        std::iter::once(&self.trunk)
            .chain(&self.heads)
            .flat_map(|n| n.param_meta())
            .collect()
    }
}

/// Centralized critic: one trunk over the global state shared by every
/// output stack; one stack per (agent, head, reward stream).
#[derive(Clone, Debug, PartialEq)]
pub struct CriticNet<F: Scalar> {
    pub trunk: Mlp<F>,
    stacks: Vec<Mlp<F>>,
    dims: NetDims,
}

impl<F: Scalar> CriticNet<F> {
    pub fn init<R: Rng + ?Sized>(dims: &NetDims, rng: &mut R) -> Self {
        let trunk_spec = MlpSpec {
            widths: vec![dims.state_dim, dims.trunk_width],
            activations: vec![Activation::Relu],
        };
        let stack_spec = MlpSpec {
            widths: vec![
                dims.critic_stack_input(),
                dims.critic_head_width,
                dims.n_actions,
            ],
            activations: vec![Activation::Relu, Activation::Identity],
        };
        let trunk = Mlp::init(&trunk_spec, "critic.trunk", rng);
        let mut stacks = Vec::with_capacity(2 * dims.n_agents * dims.n_heads);
        for i in 0..dims.n_agents {
            for j in 0..dims.n_heads {
                for kind in ValueKind::BOTH {
                    let group = format!("critic.agent{i}.head{j}.{}", kind.tag());
                    stacks.push(Mlp::init(&stack_spec, group, rng));
                }
            }
        }
        CriticNet {
            trunk,
            stacks,
            dims: *dims,
        }
    }

    pub fn zeros_like(&self) -> Self {
        CriticNet {
            trunk: self.trunk.zeros_like(),
            stacks: self.stacks.iter().map(Mlp::zeros_like).collect(),
            dims: self.dims,
        }
    }

    pub fn n_stacks(&self) -> usize {
        self.stacks.len()
    }

    fn stack_index(&self, agent: usize, head: usize, kind: ValueKind) -> usize {
        (agent * self.dims.n_heads + head) * 2 + kind as usize
    }

    pub fn stack(&self, agent: usize, head: usize, kind: ValueKind) -> &Mlp<F> {
        &self.stacks[self.stack_index(agent, head, kind)]
    }

    pub fn stack_mut(&mut self, agent: usize, head: usize, kind: ValueKind) -> &mut Mlp<F> {
        let k = self.stack_index(agent, head, kind);
        &mut self.stacks[k]
    }

    /// Trunk features followed by one-hot actions of every agent but `agent`.
    pub fn stack_input(
        &self,
        features: &Array2<F>,
        agent: usize,
        actions: &[&[usize]],
    ) -> Result<Array2<F>> {
        let d = &self.dims;
        let rows = features.nrows();
        if actions.len() != d.n_agents || actions.iter().any(|a| a.len() != rows) {
            return Err(Error::Shape(format!(
                "expected {} action columns of {rows} rows",
                d.n_agents
            )));
        }
        let mut x = Array2::zeros((rows, d.critic_stack_input()));
        x.slice_mut(s![.., ..d.trunk_width]).assign(features);
        let mut offset = d.trunk_width;
        for (k, acts) in actions.iter().enumerate() {
            if k == agent {
                continue;
            }
            for (r, &a) in acts.iter().enumerate() {
                if a >= d.n_actions {
                    return Err(Error::Shape(format!("action {a} out of range")));
                }
                x[[r, offset + a]] = F::one();
            }
            offset += d.n_actions;
        }
        Ok(x)
    }

    /// Q-values over agent `agent`'s actions, `(batch, n_actions)`.
    pub fn q_values(
        &self,
        states: ArrayView2<F>,
        actions: &[&[usize]],
        agent: usize,
        head: usize,
        kind: ValueKind,
    ) -> Result<Array2<F>> {
        let h = self.trunk.predict(states)?;
        let x = self.stack_input(&h, agent, actions)?;
        self.stack(agent, head, kind).predict(x.view())
    }
}

impl<F: Scalar> Params<F> for CriticNet<F> {
    fn param_slices(&self) -> Vec<&[F]> {
        concat_slices(std::iter::once(&self.trunk).chain(&self.stacks))
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [F]> {
        std::iter::once(&mut self.trunk)
            .chain(self.stacks.iter_mut())
            .flat_map(|n| n.param_slices_mut())
            .collect()
    }

    fn param_meta(&self) -> Vec<ParamMeta> {
        std::iter::once(&self.trunk)
            .chain(&self.stacks)
            .flat_map(|n| n.param_meta())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn critic_has_two_stacks_per_agent_and_head() {
        let dims = NetDims::gridworld(3, 5, 5, 19, 120);
        let critic: CriticNet<f32> = CriticNet::init(&dims, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(critic.n_stacks(), 30);
        assert_eq!(
            critic.stack(2, 4, ValueKind::Intrinsic).input_dim(),
            128 + 2 * 5
        );
        assert_eq!(critic.stack(0, 0, ValueKind::Extrinsic).output_dim(), 5);
        let groups: std::collections::HashSet<_> =
            critic.param_meta().into_iter().map(|m| m.group).collect();
        assert_eq!(groups.len(), 31);
    }

    #[test]
    fn stack_input_places_other_agents_actions() {
        let mut dims = NetDims::gridworld(3, 1, 4, 2, 3);
        dims.trunk_width = 2;
        let critic: CriticNet<f64> = CriticNet::init(&dims, &mut ChaCha8Rng::seed_from_u64(0));
        let h = Array2::from_elem((2, 2), 0.5);
        let a0 = [0usize, 1];
        let a1 = [2usize, 3];
        let a2 = [1usize, 0];
        let x = critic.stack_input(&h, 1, &[&a0, &a1, &a2]).unwrap();
        assert_eq!(
            x.row(0).to_vec(),
            vec![0.5, 0.5, 1., 0., 0., 0., 0., 1., 0., 0.]
        );
        assert_eq!(
            x.row(1).to_vec(),
            vec![0.5, 0.5, 0., 1., 0., 0., 1., 0., 0., 0.]
        );
        assert!(critic.stack_input(&h, 1, &[&a0, &a1]).is_err());
    }

    #[test]
    fn actor_heads_share_the_trunk() {
        let dims = NetDims::gridworld(2, 3, 5, 16, 80);
        let actor: ActorNet<f64> = ActorNet::init(&dims, 0, &mut ChaCha8Rng::seed_from_u64(1));
        let obs = Array2::from_elem((4, 16), 0.1);
        let fwd = actor.forward(obs.view()).unwrap();
        for j in 0..3 {
            assert_eq!(fwd.logits(j), &actor.logits(obs.view(), j).unwrap());
        }
        assert_eq!(actor.param_meta()[0].group, "actor0.trunk");
        assert_eq!(actor.param_meta().last().unwrap().group, "actor0.head2");
    }
}
