use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Activation, Bound, Linear, Mlp, Params, Tape, Tensor, TensorError, Var};

/// Hidden widths of the shared trunk.
pub const HIDDEN: [usize; 2] = [128, 64];

/// Initial scale of the policy head weights, so early actions stay near zero.
const HEAD_GAIN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum HeadKind {
    /// Mean of a diagonal Gaussian with a state-independent log-std.
    Gaussian { dim: usize },
    /// One logit per action slot.
    Categorical { n: usize },
}

impl HeadKind {
    pub fn width(self) -> usize {
        match self {
            HeadKind::Gaussian { dim } => dim,
            HeadKind::Categorical { n } => n,
        }
    }
}

/// `sign(x) ln(1 + |x|)`: keeps raw counts in the observation on a usable scale.
pub fn symlog(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p()
}

/// LeakyReLU trunk `[in, 128, 64]` with a policy head and a value head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    pub in_dim: usize,
    pub head_kind: HeadKind,
    trunk: Mlp,
    head: Linear,
    value: Linear,
}

pub const LOG_STD: &str = "pi.log_std";

impl PolicyNet {
    pub fn new(in_dim: usize, head_kind: HeadKind, params: &mut Params, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trunk = Mlp::new("pi.trunk", &[in_dim, HIDDEN[0], HIDDEN[1]], Activation::LeakyRelu, Activation::LeakyRelu, params, &mut rng);
        let head = Linear::new("pi.head", HIDDEN[1], head_kind.width(), params, &mut rng);
        for name in [&head.weight, &head.bias] {
            let t = params.get_mut(name).expect("just inserted");
            t.data_mut().iter_mut().for_each(|v| *v *= HEAD_GAIN);
        }
        let value = Linear::new("pi.value", HIDDEN[1], 1, params, &mut rng);
        if let HeadKind::Gaussian { dim } = head_kind {
            params.insert(LOG_STD, Tensor::zeros(&[1, dim]));
        }
        Self {
            in_dim,
            head_kind,
            trunk,
            head,
            value,
        }
    }

    pub fn input(&self, obs: &[&[f64]]) -> Result<Tensor, TensorError> {
        let mut data = Vec::with_capacity(obs.len() * self.in_dim);
        for o in obs {
            if o.len() != self.in_dim {
                return Err(TensorError::Invalid {
                    op: "policy",
                    msg: format!("observation width {} != {}", o.len(), self.in_dim),
                });
            }
            data.extend(o.iter().map(|&x| symlog(x)));
        }
        Tensor::new(vec![obs.len(), self.in_dim], data)
    }

    /// Head output and value for one observation.
    pub fn infer(&self, params: &Params, obs: &[f64]) -> Result<(Vec<f64>, f64), TensorError> {
        let x = self.input(&[obs])?;
        let h = self.trunk.infer(params, &x)?;
        let out = self.head.infer(params, &h)?;
        let v = self.value.infer(params, &h)?;
        Ok((out.into_data(), v.item()))
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<(Var, Var), TensorError> {
        let h = self.trunk.forward(tape, bound, x)?;
        let out = self.head.forward(tape, bound, h)?;
        let v = self.value.forward(tape, bound, h)?;
        Ok((out, v))
    }
}
