use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernels;
use super::tape::{Gradients, Tape, Var};
use super::{Tensor, TensorError};

/// Named parameter tensors. Ordered by name so iteration and checkpoints are stable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params {
    map: BTreeMap<String, Tensor>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.map.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.map.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.map.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.map.values().map(Tensor::len).sum()
    }

    /// Keeps only parameters whose name starts with `prefix`.
    pub fn filter_prefix(&self, prefix: &str) -> Params {
        Params {
            map: self
                .map
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn extend(&mut self, other: Params) {
        self.map.extend(other.map);
    }

    /// Registers every parameter as a trainable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self
                .map
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
                .collect(),
        }
    }

    /// Polyak averaging: `self = (1 - tau) * self + tau * source`.
    pub fn soft_update_from(&mut self, source: &Params, tau: f64) {
        for (k, t) in self.map.iter_mut() {
            if let Some(s) = source.map.get(k) {
                for (a, b) in t.data_mut().iter_mut().zip(s.data()) {
                    *a = (1.0 - tau) * *a + tau * b;
                }
            }
        }
    }
}

/// Parameter handles on one tape.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    /// Gradients keyed by parameter name; parameters unreachable from the loss get zeros.
    pub fn named_grads(&self, tape_grads: &Gradients, params: &Params) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, v)| {
                let g = tape_grads
                    .get(*v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(params.get(k).expect("bound param").shape()));
                (k.clone(), g)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    /// Negative slope 0.01.
    LeakyRelu,
    Tanh,
}

pub const LEAKY_SLOPE: f64 = 0.01;

impl Activation {
    pub fn apply_tape(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => tape.relu(x),
            Activation::LeakyRelu => tape.leaky_relu(x, LEAKY_SLOPE),
            Activation::Tanh => tape.tanh(x),
        }
    }

    pub fn apply(self, x: Tensor) -> Tensor {
        match self {
            Activation::Identity => x,
            Activation::Relu => kernels::relu(&x),
            Activation::LeakyRelu => kernels::leaky_relu(&x, LEAKY_SLOPE),
            Activation::Tanh => kernels::map(&x, f64::tanh),
        }
    }
}

/// Affine layer `x W + b` with `W: [in, out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: String,
    pub bias: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Registers uniform(-1/sqrt(in), 1/sqrt(in)) weights and biases.
    pub fn new(name: &str, in_dim: usize, out_dim: usize, params: &mut Params, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let mut init = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
        let w = Tensor::from_parts(vec![in_dim, out_dim], init(in_dim * out_dim));
        let b = Tensor::from_parts(vec![1, out_dim], init(out_dim));
        let layer = Linear {
            weight: format!("{name}.weight"),
            bias: format!("{name}.bias"),
            in_dim,
            out_dim,
        };
        params.insert(layer.weight.clone(), w);
        params.insert(layer.bias.clone(), b);
        layer
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var, TensorError> {
        let h = tape.matmul(x, bound.var(&self.weight))?;
        tape.add(h, bound.var(&self.bias))
    }

    pub fn infer(&self, params: &Params, x: &Tensor) -> Result<Tensor, TensorError> {
        let w = params.get(&self.weight).ok_or_else(|| missing(&self.weight))?;
        let b = params.get(&self.bias).ok_or_else(|| missing(&self.bias))?;
        kernels::add(&kernels::matmul(x, w)?, b)
    }
}

fn missing(name: &str) -> TensorError {
    TensorError::Invalid {
        op: "params",
        msg: format!("missing parameter {name}"),
    }
}

/// Multi-layer perceptron with a shared hidden activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl Mlp {
    /// `sizes` lists every layer width including input and output.
    pub fn new(
        name: &str,
        sizes: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        params: &mut Params,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("{name}.{i}"), w[0], w[1], params, rng))
            .collect();
        Mlp {
            layers,
            hidden_activation,
            output_activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, mut x: Var) -> Result<Var, TensorError> {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, bound, x)?;
            let act = if i == last { self.output_activation } else { self.hidden_activation };
            x = act.apply_tape(tape, x);
        }
        Ok(x)
    }

    pub fn infer(&self, params: &Params, x: &Tensor) -> Result<Tensor, TensorError> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.infer(params, &h)?;
            let act = if i == last { self.output_activation } else { self.hidden_activation };
            h = act.apply(h);
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tape_and_inference_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = Params::new();
        let mlp = Mlp::new("m", &[3, 5, 2], Activation::LeakyRelu, Activation::Identity, &mut params, &mut rng);
        let x = Tensor::from_rows(&[vec![0.1, -0.4, 2.0], vec![-1.0, 0.5, 0.0]]).unwrap();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let y = mlp.forward(&mut tape, &bound, xv).unwrap();
        assert_eq!(tape.value(y), &mlp.infer(&params, &x).unwrap());
    }

    #[test]
    fn soft_update_mixes() {
        let mut a = Params::new();
        a.insert("w", Tensor::scalar(0.0));
        let mut b = Params::new();
        b.insert("w", Tensor::scalar(1.0));
        a.soft_update_from(&b, 0.05);
        assert!((a.get("w").unwrap().item() - 0.05).abs() < 1e-15);
    }
}
