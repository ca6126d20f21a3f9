use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::nn::Params;
use super::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty added to the gradient (coupled weight decay).
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
            weight_decay: 1e-4,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam without AMSGrad. Moment buffers are created lazily per parameter name.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut Params, grads: &BTreeMap<String, Tensor>) -> Result<(), TensorError> {
        for (name, g) in grads {
            let p = params.get(name).ok_or_else(|| TensorError::Invalid {
                op: "adam",
                msg: format!("gradient for unknown parameter {name}"),
            })?;
            if p.shape() != g.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (name, g) in grads {
            let p = params.get_mut(name).expect("checked above");
            let mom = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
            });
            for (k, x) in p.data_mut().iter_mut().enumerate() {
                let gk = g.data()[k] + c.weight_decay * *x;
                mom.m[k] = c.beta1 * mom.m[k] + (1.0 - c.beta1) * gk;
                mom.v[k] = c.beta2 * mom.v[k] + (1.0 - c.beta2) * gk * gk;
                let mhat = mom.m[k] / bc1;
                let vhat = mom.v[k] / bc2;
                *x -= c.lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

/// Rescales gradients in place so their global L2 norm is at most `max_norm`; returns the original norm.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|t| t.data().iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for t in grads.values_mut() {
            for x in t.data_mut() {
                *x *= k;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(x: f64) -> Params {
        let mut p = Params::new();
        p.insert("x", Tensor::scalar(x));
        p
    }

    fn grad(g: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("x".to_string(), Tensor::scalar(g))])
    }

    #[test]
    fn zero_gradient_without_decay_is_fixed_point() {
        let mut p = single(1.25);
        let mut adam = Adam::new(AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        });
        for _ in 0..5 {
            adam.step(&mut p, &grad(0.0)).unwrap();
        }
        assert_eq!(p.get("x").unwrap().item(), 1.25);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // Bias correction makes the first step g / (|g| + eps) * lr.
        let mut p = single(0.0);
        let mut adam = Adam::new(AdamConfig {
            lr: 0.001,
            weight_decay: 0.0,
            ..AdamConfig::default()
        });
        adam.step(&mut p, &grad(1.0)).unwrap();
        let expected = -0.001 / (1.0 + 1e-7);
        assert!((p.get("x").unwrap().item() - expected).abs() < 1e-15);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = single(5.0);
        let mut adam = Adam::new(AdamConfig::with_lr(0.01));
        let mut steps = 0;
        while p.get("x").unwrap().item().abs() >= 0.1 && steps < 10_000 {
            let x = p.get("x").unwrap().item();
            adam.step(&mut p, &grad(2.0 * x)).unwrap();
            steps += 1;
        }
        assert!(p.get("x").unwrap().item().abs() < 0.1, "took {steps} steps");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = single(0.0);
        let mut adam = Adam::new(AdamConfig::default());
        let g = BTreeMap::from([("x".to_string(), Tensor::zeros(&[2, 1]))]);
        assert!(matches!(adam.step(&mut p, &g), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = BTreeMap::from([("a".to_string(), Tensor::row(vec![3.0, 4.0]))]);
        let n = clip_grad_norm(&mut g, 0.5);
        assert_eq!(n, 5.0);
        let d = g["a"].data();
        assert!(((d[0] * d[0] + d[1] * d[1]).sqrt() - 0.5).abs() < 1e-12);
    }
}
