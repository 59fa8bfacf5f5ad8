//! Input-free categorical policy over reward-kind heads, sampled once per
//! episode and trained on discounted extrinsic returns.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{softmax, Sgd};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectorConfig {
    pub lr: f64,
    pub weight_decay: f64,
    /// Entropy scale; `-log p(h) / eta` is added to the return.
    pub eta: f64,
    /// Rate of the per-head running mean of returns.
    pub ema_rate: f64,
    pub entropy: bool,
    /// Draw heads uniformly and never move the logits.
    pub uniform: bool,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        SelectorConfig {
            lr: 0.04,
            weight_decay: 0.001,
            eta: 5.0,
            ema_rate: 0.05,
            entropy: true,
            uniform: false,
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "selector {name} {v} must be finite and non-negative"
                )))
            }
        };
        finite_nonneg("lr", self.lr)?;
        finite_nonneg("weight_decay", self.weight_decay)?;
        if !(self.eta > 0.0) {
            return Err(Error::Config(format!(
                "selector eta {} must be positive",
                self.eta
            )));
        }
        if !(self.ema_rate > 0.0 && self.ema_rate <= 1.0) {
            return Err(Error::Config(format!(
                "selector ema_rate {} outside (0, 1]",
                self.ema_rate
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectorState {
    pub phi: Vec<f64>,
    pub mu: Vec<f64>,
    pub config: SelectorConfig,
}

impl SelectorState {
    pub fn new(n_heads: usize, config: SelectorConfig) -> Result<Self> {
        config.validate()?;
        if n_heads == 0 {
            return Err(Error::Config("selector needs at least one head".into()));
        }
        Ok(SelectorState {
            phi: vec![0.0; n_heads],
            mu: vec![0.0; n_heads],
            config,
        })
    }

    pub fn n_heads(&self) -> usize {
        self.phi.len()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        if self.config.uniform {
            return vec![1.0 / self.n_heads() as f64; self.n_heads()];
        }
        let phi = ndarray::ArrayView1::from(&self.phi);
        softmax(phi)
    }

    pub fn sample_head<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let m = self.n_heads();
        if self.config.uniform {
            return rng.random_range(0..m);
        }
        let u = rng.random::<f64>();
        let mut acc = 0.0;
        for (h, p) in self.probabilities().into_iter().enumerate() {
            acc += p;
            if u < acc {
                return h;
            }
        }
        m - 1
    }

    /// Head with the largest probability; ties go to the lowest index.
    pub fn greedy_head(&self) -> usize {
        let p = self.probabilities();
        (0..p.len()).fold(0, |best, h| if p[h] > p[best] { h } else { best })
    }

    /// `b = sum_h p(h) mu(h)`.
    pub fn baseline(&self) -> f64 {
        self.probabilities()
            .iter()
            .zip(&self.mu)
            .map(|(p, m)| p * m)
            .sum()
    }

    /// Ascent direction `(onehot(h) - p) * (-log p(h) / eta + ret - b)`.
    pub fn gradient(&self, ret: f64, head: usize) -> Result<Vec<f64>> {
        self.check_head(head)?;
        let p = self.probabilities();
        let mut coef = ret - self.baseline();
        if self.config.entropy {
            coef -= p[head].ln() / self.config.eta;
        }
        Ok(p.iter()
            .enumerate()
            .map(|(k, &pk)| ((k == head) as u8 as f64 - pk) * coef)
            .collect())
    }

    /// `repetitions` ascent steps on the same `(ret, head)`, then the running
    /// mean of `head` absorbs `ret`.
    pub fn update(&mut self, ret: f64, head: usize, repetitions: usize) -> Result<()> {
        self.check_head(head)?;
        if !ret.is_finite() {
            return Err(Error::NonFinite(format!("selector return {ret}")));
        }
        if !self.config.uniform {
            let sgd = Sgd {
                lr: self.config.lr,
                weight_decay: self.config.weight_decay,
            };
            for _ in 0..repetitions {
                let descent: Vec<f64> = self.gradient(ret, head)?.iter().map(|g| -g).collect();
                sgd.step(&mut self.phi, &descent);
            }
        }
        let r = self.config.ema_rate;
        self.mu[head] = (1.0 - r) * self.mu[head] + r * ret;
        Ok(())
    }

    fn check_head(&self, head: usize) -> Result<()> {
        if head >= self.n_heads() {
            return Err(Error::Usage(format!(
                "head {head} out of range for {} heads",
                self.n_heads()
            )));
        }
        Ok(())
    }
}
