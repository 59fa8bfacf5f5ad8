use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Scalar;
use crate::error::{Error, Result};

/// Name, group and shape of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamMeta {
    pub name: String,
    pub group: String,
    pub shape: Vec<usize>,
}

/// A fixed, ordered collection of parameter tensors.
///
/// Gradients, optimizer moments and target copies are values of the same
/// type, so the three slice accessors must agree on order and lengths.
pub trait Params<F: Scalar> {
    fn param_slices(&self) -> Vec<&[F]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [F]>;
    fn param_meta(&self) -> Vec<ParamMeta>;

    fn n_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    fn fill_zero(&mut self) {
        for s in self.param_slices_mut() {
            s.fill(F::zero());
        }
    }

    /// `self <- (1 - tau) * self + tau * source`.
    fn blend_from(&mut self, source: &Self, tau: F)
    where
        Self: Sized,
    {
        let keep = F::one() - tau;
        for (dst, src) in self
            .param_slices_mut()
            .into_iter()
            .zip(source.param_slices())
        {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = keep * *d + tau * s;
            }
        }
    }

    fn sq_norm(&self) -> F {
        self.param_slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(F::zero(), |acc, &v| acc + v * v)
    }

    fn all_finite(&self) -> bool {
        self.param_slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
}

/// Layer widths (input first) and the activation after each layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if widths.len() < 2 || activations.len() != widths.len() - 1 {
            return Err(Error::Shape(format!(
                "{} widths need {} activations, got {}",
                widths.len(),
                widths.len().saturating_sub(1),
                activations.len()
            )));
        }
        Ok(MlpSpec {
            widths,
            activations,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated")
    }
}

/// Affine map `x W + b`; `w` is `(in, out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<F: Scalar> {
    pub w: Array2<F>,
    pub b: Array1<F>,
}

impl<F: Scalar> Linear<F> {
    /// Uniform fan-in initialization in `±1/sqrt(in)` for weights and bias.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut draw = || F::lit(rng.random_range(-bound..bound));
        Linear {
            w: Array2::from_shape_simple_fn((inputs, outputs), &mut draw),
            b: Array1::from_shape_simple_fn(outputs, &mut draw),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear {
            w: Array2::zeros((inputs, outputs)),
            b: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: ArrayView2<F>) -> Array2<F> {
        x.dot(&self.w) + &self.b
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<F: Scalar> {
    pub layers: Vec<Linear<F>>,
    pub activations: Vec<Activation>,
    group: String,
}

/// Layer inputs recorded by [`Mlp::forward`]; the last entry is the output.
#[derive(Clone, Debug)]
pub struct MlpCache<F: Scalar> {
    values: Vec<Array2<F>>,
}

impl<F: Scalar> MlpCache<F> {
    pub fn output(&self) -> &Array2<F> {
        self.values.last().expect("non-empty")
    }

    pub fn input(&self) -> &Array2<F> {
        &self.values[0]
    }
}

impl<F: Scalar> Mlp<F> {
    pub fn init<R: Rng + ?Sized>(spec: &MlpSpec, group: impl Into<String>, rng: &mut R) -> Self {
        let layers = spec
            .widths
            .windows(2)
            .map(|w| Linear::init(w[0], w[1], rng))
            .collect();
        Mlp {
            layers,
            activations: spec.activations.clone(),
            group: group.into(),
        }
    }

    pub fn from_layers(
        layers: Vec<Linear<F>>,
        activations: Vec<Activation>,
        group: impl Into<String>,
    ) -> Result<Self> {
        if layers.len() != activations.len() || layers.is_empty() {
            return Err(Error::Shape("one activation per layer required".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::Shape(format!(
                    "layer outputs {} do not feed inputs {}",
                    pair[0].outputs(),
                    pair[1].inputs()
                )));
            }
        }
        Ok(Mlp {
            layers,
            activations,
            group: group.into(),
        })
    }

    /// Same shapes, all zeros; used for gradients and moments.
    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Linear::zeros(l.inputs(), l.outputs()))
                .collect(),
            activations: self.activations.clone(),
            group: self.group.clone(),
        }
    }

    pub fn group(&self) -> &str {
        &self.group
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").outputs()
    }

    fn check_input(&self, x: &ArrayView2<F>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input width {} does not match layer input {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn activate(act: Activation, z: &mut Array2<F>) {
        if act == Activation::Relu {
            z.mapv_inplace(|v| v.max(F::zero()));
        }
    }

    /// Which ReLU units are active in `cache`. Two inputs with different
    /// patterns have a kink of the network between them.
    pub fn relu_pattern(&self, cache: &MlpCache<F>) -> Vec<bool> {
        self.activations
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == Activation::Relu)
            .flat_map(|(l, _)| cache.values[l + 1].iter().map(|&v| v > F::zero()))
            .collect()
    }

    /// Forward pass without recording activations.
    pub fn predict(&self, x: ArrayView2<F>) -> Result<Array2<F>> {
        self.check_input(&x)?;
        let mut h = self.layers[0].forward(x);
        Self::activate(self.activations[0], &mut h);
        for (layer, &act) in self.layers.iter().zip(&self.activations).skip(1) {
            h = layer.forward(h.view());
            Self::activate(act, &mut h);
        }
        Ok(h)
    }

    pub fn forward(&self, x: ArrayView2<F>) -> Result<(Array2<F>, MlpCache<F>)> {
        self.check_input(&x)?;
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(x.to_owned());
        for (layer, &act) in self.layers.iter().zip(&self.activations) {
            let mut h = layer.forward(values.last().expect("non-empty").view());
            Self::activate(act, &mut h);
            values.push(h);
        }
        let out = values.last().expect("non-empty").clone();
        Ok((out, MlpCache { values }))
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the input when `want_input` is set.
    pub fn backward(
        &self,
        cache: &MlpCache<F>,
        upstream: Array2<F>,
        grads: &mut Mlp<F>,
        want_input: bool,
    ) -> Option<Array2<F>> {
        let mut g = upstream;
        let n = self.layers.len();
        for l in (0..n).rev() {
            if self.activations[l] == Activation::Relu {
                let out = &cache.values[l + 1];
                ndarray::Zip::from(&mut g).and(out).for_each(|gv, &o| {
                    if o <= F::zero() {
                        *gv = F::zero();
                    }
                });
            }
            let input = &cache.values[l];
            let gl = &mut grads.layers[l];
            ndarray::linalg::general_mat_mul(F::one(), &input.t(), &g, F::one(), &mut gl.w);
            gl.b += &g.sum_axis(Axis(0));
            if l > 0 || want_input {
                g = g.dot(&self.layers[l].w.t());
            }
        }
        want_input.then_some(g)
    }
}

impl<F: Scalar> Params<F> for Mlp<F> {
    fn param_slices(&self) -> Vec<&[F]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.w.as_slice().expect("standard layout"),
                    l.b.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [F]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.w.as_slice_mut().expect("standard layout"),
                    l.b.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    fn param_meta(&self) -> Vec<ParamMeta> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    ParamMeta {
                        name: format!("{}.fc{}.weight", self.group, i + 1),
                        group: self.group.clone(),
                        shape: vec![l.inputs(), l.outputs()],
                    },
                    ParamMeta {
                        name: format!("{}.fc{}.bias", self.group, i + 1),
                        group: self.group.clone(),
                        shape: vec![l.outputs()],
                    },
                ]
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(widths: &[usize]) -> MlpSpec {
        let mut acts = vec![Activation::Relu; widths.len() - 1];
        *acts.last_mut().unwrap() = Activation::Identity;
        MlpSpec::new(widths.to_vec(), acts).unwrap()
    }

    fn random_input(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = Linear {
            w: Array2::<f64>::eye(3),
            b: Array1::zeros(3),
        };
        let mlp = Mlp::from_layers(vec![layer], vec![Activation::Identity], "id").unwrap();
        let x = arr2(&[[1.0, -2.0, 3.5], [0.0, 4.0, -1.0]]);
        assert_eq!(mlp.predict(x.view()).unwrap(), x);
    }

    #[test]
    fn relu_zeroes_negative_input() {
        let layer = Linear {
            w: Array2::<f64>::eye(2),
            b: Array1::zeros(2),
        };
        let mlp = Mlp::from_layers(vec![layer], vec![Activation::Relu], "r").unwrap();
        let out = mlp.predict(arr2(&[[-1.0, -0.5]]).view()).unwrap();
        assert_eq!(out, arr2(&[[0.0, 0.0]]));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp: Mlp<f64> = Mlp::init(&spec(&[3, 4, 2]), "m", &mut rng);
        let err = mlp.forward(Array2::zeros((2, 5)).view()).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
        assert!(MlpSpec::new(vec![3, 4], vec![]).is_err());
    }

    #[test]
    fn two_layer_forward_matches_straight_line_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mlp: Mlp<f64> = Mlp::init(&spec(&[4, 6, 3]), "m", &mut rng);
        let x = random_input(5, 4, &mut rng);
        let out = mlp.predict(x.view()).unwrap();
        let (l1, l2) = (&mlp.layers[0], &mlp.layers[1]);
        for r in 0..5 {
            let mut hidden = [0.0f64; 6];
            for (j, h) in hidden.iter_mut().enumerate() {
                let mut acc = l1.b[j];
                for k in 0..4 {
                    acc += x[[r, k]] * l1.w[[k, j]];
                }
                *h = acc.max(0.0);
            }
            for j in 0..3 {
                let mut acc = l2.b[j];
                for (k, h) in hidden.iter().enumerate() {
                    acc += h * l2.w[[k, j]];
                }
                assert!((out[[r, j]] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_weight_gradient_is_summed_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mlp: Mlp<f64> = Mlp::init(&spec(&[3, 2]), "m", &mut rng);
        let x = random_input(4, 3, &mut rng);
        let (_, cache) = mlp.forward(x.view()).unwrap();
        let mut grads = mlp.zeros_like();
        let gin = mlp
            .backward(&cache, Array2::ones((4, 2)), &mut grads, true)
            .unwrap();
        let col_sums = x.sum_axis(Axis(0));
        for k in 0..3 {
            for j in 0..2 {
                assert!((grads.layers[0].w[[k, j]] - col_sums[k]).abs() < 1e-14);
            }
        }
        assert_eq!(grads.layers[0].b, Array1::from_elem(2, 4.0));
        let row_sums = mlp.layers[0].w.sum_axis(Axis(1));
        for r in 0..4 {
            for k in 0..3 {
                assert!((gin[[r, k]] - row_sums[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mlp: Mlp<f64> = Mlp::init(&spec(&[5, 7, 4, 3]), "m", &mut rng);
        let x = random_input(6, 5, &mut rng);
        let weights = random_input(6, 3, &mut rng);
        // loss = sum(weights * output)
        let loss = |m: &Mlp<f64>| (m.predict(x.view()).unwrap() * &weights).sum();
        let (_, cache) = mlp.forward(x.view()).unwrap();
        let mut grads = mlp.zeros_like();
        mlp.backward(&cache, weights.clone(), &mut grads, false);

        let eps = 1e-5;
        let analytic: Vec<f64> = grads
            .param_slices()
            .iter()
            .flat_map(|s| s.iter().copied())
            .collect();
        let mut probe = mlp.clone();
        let mut k = 0;
        for p in 0..probe.param_slices().len() {
            for e in 0..probe.param_slices()[p].len() {
                let orig = probe.param_slices()[p][e];
                probe.param_slices_mut()[p][e] = orig + eps;
                let up = loss(&probe);
                probe.param_slices_mut()[p][e] = orig - eps;
                let down = loss(&probe);
                probe.param_slices_mut()[p][e] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let denom = numeric.abs().max(analytic[k].abs()).max(1e-8);
                assert!(
                    (numeric - analytic[k]).abs() / denom < 1e-4
                        || (numeric - analytic[k]).abs() < 1e-9,
                    "param {p}[{e}]: numeric {numeric} analytic {}",
                    analytic[k]
                );
                k += 1;
            }
        }
    }

    #[test]
    fn meta_names_and_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp: Mlp<f32> = Mlp::init(&spec(&[3, 4, 2]), "trunk", &mut rng);
        let meta = mlp.param_meta();
        assert_eq!(meta.len(), 4);
        assert_eq!(meta[0].name, "trunk.fc1.weight");
        assert_eq!(meta[3].shape, vec![2]);
        assert!(meta.iter().all(|m| m.group == "trunk"));
        assert_eq!(mlp.n_params(), 3 * 4 + 4 + 4 * 2 + 2);
    }

    #[test]
    fn blend_from_is_a_convex_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let live: Mlp<f64> = Mlp::init(&spec(&[2, 2]), "m", &mut rng);
        let mut target = live.zeros_like();
        target.blend_from(&live, 0.0);
        assert_eq!(target.sq_norm(), 0.0);
        target.blend_from(&live, 1.0);
        assert_eq!(target, live);
    }
}
