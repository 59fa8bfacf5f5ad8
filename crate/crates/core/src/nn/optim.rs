use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{Params, Scalar};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay: parameters shrink by `lr * weight_decay` before the step.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

/// Adam with decoupled weight decay; moments mirror the parameter layout.
#[derive(Clone, Debug)]
pub struct Adam<F: Scalar> {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    groups: Vec<String>,
    frozen: HashSet<String>,
}

impl<F: Scalar> Adam<F> {
    pub fn new<P: Params<F>>(params: &P, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<F>> = params
            .param_slices()
            .iter()
            .map(|s| vec![F::zero(); s.len()])
            .collect();
        Adam {
            config,
            t: 0,
            m: zeros.clone(),
            v: zeros,
            groups: params.param_meta().into_iter().map(|m| m.group).collect(),
            frozen: HashSet::new(),
        }
    }

    /// Parameters of a frozen group keep their values; their gradients are ignored.
    pub fn set_frozen(&mut self, group: &str, frozen: bool) {
        if frozen {
            self.frozen.insert(group.to_string());
        } else {
            self.frozen.remove(group);
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step<P: Params<F>>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let c = self.config;
        self.t += 1;
        let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
        let bias1 = F::lit(1.0 - c.beta1.powi(self.t as i32));
        let bias2 = F::lit(1.0 - c.beta2.powi(self.t as i32));
        let lr = F::lit(c.lr);
        let eps = F::lit(c.eps);
        let shrink = F::lit(1.0 - c.lr * c.weight_decay);

        let grads = grads.param_slices();
        let mut params = params.param_slices_mut();
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(
                "optimizer state does not match parameters".into(),
            ));
        }
        for (k, (p, g)) in params.iter_mut().zip(&grads).enumerate() {
            if self.frozen.contains(&self.groups[k]) {
                continue;
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (F::one() - b1) * gi;
                v[i] = b2 * v[i] + (F::one() - b2) * gi * gi;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] = p[i] * shrink - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// `(step count, first moments, second moments)` for checkpointing.
    pub fn state(&self) -> (u64, &[Vec<F>], &[Vec<F>]) {
        (self.t, &self.m, &self.v)
    }

    pub fn restore(&mut self, t: u64, m: Vec<Vec<F>>, v: Vec<Vec<F>>) -> Result<()> {
        let same = |a: &[Vec<F>], b: &[Vec<F>]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.len() == y.len())
        };
        if !same(&m, &self.m) || !same(&v, &self.v) {
            return Err(Error::Checkpoint(
                "optimizer moments have the wrong shapes".into(),
            ));
        }
        self.t = t;
        self.m = m;
        self.v = v;
        Ok(())
    }
}

/// Plain gradient descent with decoupled weight decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub lr: f64,
    pub weight_decay: f64,
}

impl Sgd {
    pub fn step<F: Scalar>(&self, params: &mut [F], grads: &[F]) {
        let lr = F::lit(self.lr);
        let shrink = F::lit(1.0 - self.lr * self.weight_decay);
        for (p, &g) in params.iter_mut().zip(grads) {
            *p = *p * shrink - lr * g;
        }
    }
}
