//! Dense multilayer perceptrons with hand-written backward passes, Adam and
//! SGD, and a flat checkpoint archive.
//!
//! Everything is generic over [`Scalar`] so gradient checks can run in
//! double precision while training runs in single precision. Matrix
//! products go through `ndarray`.

mod checkpoint;
mod mlp;
mod optim;

use std::fmt::{Debug, Display};

use ndarray::{Array2, ArrayView1, ArrayView2, Axis, LinalgScalar, ScalarOperand};
use num_traits::{Float, NumAssign};

pub use checkpoint::{Archive, ArchiveTensor, FORMAT_VERSION};
pub use mlp::{Activation, Linear, Mlp, MlpCache, MlpSpec, ParamMeta, Params};
pub use optim::{Adam, AdamConfig, Sgd};

/// Floating point element type of tensors.
pub trait Scalar:
    LinalgScalar + ScalarOperand + Float + NumAssign + Debug + Display + Default + Send + Sync + 'static
{
    const DTYPE: &'static str;
    const BYTES: usize;

    fn lit(x: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    fn lit(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    fn lit(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Numerically stable softmax of one logit vector.
pub fn softmax<F: Scalar>(logits: ArrayView1<F>) -> Vec<F> {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum = exps.iter().copied().fold(F::zero(), |a, b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax<F: Scalar>(logits: ArrayView1<F>) -> Vec<F> {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let lse = logits
        .iter()
        .map(|&z| (z - max).exp())
        .fold(F::zero(), |a, b| a + b)
        .ln()
        + max;
    logits.iter().map(|&z| z - lse).collect()
}

/// Row-wise softmax and log-softmax of a logit batch.
pub fn softmax_rows<F: Scalar>(logits: ArrayView2<F>) -> (Array2<F>, Array2<F>) {
    let mut probs = logits.to_owned();
    let mut logp = logits.to_owned();
    for (mut p, mut lp) in probs
        .axis_iter_mut(Axis(0))
        .zip(logp.axis_iter_mut(Axis(0)))
    {
        let max = lp.iter().copied().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for (pv, &z) in p.iter_mut().zip(lp.iter()) {
            *pv = (z - max).exp();
            sum += *pv;
        }
        let lse = sum.ln() + max;
        p.mapv_inplace(|e| e / sum);
        lp.mapv_inplace(|z| z - lse);
    }
    (probs, logp)
}
