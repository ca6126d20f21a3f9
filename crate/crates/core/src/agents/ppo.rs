use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::policy::{HeadKind, PolicyNet, LOG_STD};
use super::{AgentError, RewardNormalizer};
use crate::parallel::split_seed;
use crate::tensor::{clip_grad_norm, Adam, AdamConfig, Params, Reduce, Tape, Tensor, MASKED_LOG_PROB};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub lr: f64,
    pub batch: usize,
    pub gamma: f64,
    pub rollout: usize,
    pub ent_coef: f64,
    pub max_grad_norm: f64,
    pub clip: f64,
    pub gae_lambda: f64,
    pub epochs: usize,
    pub vf_coef: f64,
    /// Divide rewards by the running std of the discounted return.
    pub normalize_reward: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            batch: 64,
            gamma: 0.9,
            rollout: 2048,
            ent_coef: 0.01,
            max_grad_norm: 0.5,
            clip: 0.2,
            gae_lambda: 0.95,
            epochs: 10,
            vf_coef: 0.5,
            normalize_reward: false,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || self.clip <= 0.0 || self.batch == 0 || self.rollout == 0 {
            return Err(AgentError::Config(format!("invalid PPO config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PpoAction {
    /// Raw Gaussian sample, before clamping to the latent box.
    Continuous(Vec<f64>),
    Discrete(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub action: PpoAction,
    pub log_prob: f64,
    pub value: f64,
}

/// On-policy transitions in collection order.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<PpoAction>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    /// Episode ended after this transition (no bootstrap).
    pub dones: Vec<bool>,
    /// Padded validity mask for masked categorical policies.
    pub masks: Vec<Option<Vec<bool>>>,
    /// Value of the observation following the last transition.
    pub last_value: f64,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn push(&mut self, obs: Vec<f64>, sample: Sample, reward: f64, done: bool, mask: Option<Vec<bool>>) {
        self.obs.push(obs);
        self.actions.push(sample.action);
        self.log_probs.push(sample.log_prob);
        self.values.push(sample.value);
        self.rewards.push(reward);
        self.dones.push(done);
        self.masks.push(mask);
    }

    pub fn clear(&mut self) {
        *self = Self::default();
    }

    /// GAE-lambda advantages and lambda-returns.
    pub fn advantages(&self, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.len();
        let mut adv = vec![0.0; n];
        let mut last = 0.0;
        for t in (0..n).rev() {
            let next_value = if t + 1 < n { self.values[t + 1] } else { self.last_value };
            let live = if self.dones[t] { 0.0 } else { 1.0 };
            let delta = self.rewards[t] + gamma * next_value * live - self.values[t];
            last = delta + gamma * lambda * live * last;
            adv[t] = last;
        }
        let ret = adv.iter().zip(&self.values).map(|(a, v)| a + v).collect();
        (adv, ret)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Clipped-surrogate PPO on the shared policy network.
#[derive(Debug, Clone)]
pub struct Ppo {
    pub cfg: PpoConfig,
    pub head: HeadKind,
    pub net: PolicyNet,
    pub params: Params,
    pub reward_norm: Option<RewardNormalizer>,
    adam: Adam,
    rng: ChaCha8Rng,
}

fn masked_log_softmax(logits: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
    let ok = |i: usize| mask.is_none_or(|m| m[i]);
    let mx = logits.iter().enumerate().filter(|(i, _)| ok(*i)).map(|(_, &v)| v).fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + logits.iter().enumerate().filter(|(i, _)| ok(*i)).map(|(_, &v)| (v - mx).exp()).sum::<f64>().ln();
    logits.iter().enumerate().map(|(i, &v)| if ok(i) { v - lse } else { MASKED_LOG_PROB }).collect()
}

impl Ppo {
    pub fn new(obs_dim: usize, head: HeadKind, cfg: PpoConfig, seed: u64) -> Self {
        let mut params = Params::new();
        let net = PolicyNet::new(obs_dim, head, &mut params, seed);
        Self {
            cfg,
            head,
            net,
            params,
            reward_norm: cfg.normalize_reward.then(|| RewardNormalizer::new(cfg.gamma)),
            adam: Adam::new(AdamConfig::with_lr(cfg.lr)),
            rng: ChaCha8Rng::seed_from_u64(split_seed(seed, 0x990)),
        }
    }

    pub fn value(&self, obs: &[f64]) -> Result<f64, AgentError> {
        Ok(self.net.infer(&self.params, obs)?.1)
    }

    /// Action probabilities of a categorical head (zero on masked slots).
    pub fn probabilities(&self, obs: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>, AgentError> {
        let (logits, _) = self.net.infer(&self.params, obs)?;
        Ok(masked_log_softmax(&logits, mask).iter().map(|&l| if l <= MASKED_LOG_PROB { 0.0 } else { l.exp() }).collect())
    }

    /// Samples (or takes the mode of) the policy distribution.
    pub fn sample(&self, obs: &[f64], mask: Option<&[bool]>, rng: &mut impl Rng, deterministic: bool) -> Result<Sample, AgentError> {
        let (out, value) = self.net.infer(&self.params, obs)?;
        match self.head {
            HeadKind::Gaussian { dim } => {
                let log_std = self.params.get(LOG_STD).expect("gaussian head").data();
                let a: Vec<f64> = if deterministic {
                    out.clone()
                } else {
                    (0..dim).map(|i| out[i] + log_std[i].exp() * rng.sample::<f64, _>(StandardNormal)).collect()
                };
                let lp = (0..dim)
                    .map(|i| {
                        let z = (a[i] - out[i]) / log_std[i].exp();
                        -0.5 * z * z - log_std[i] - 0.5 * LN_2PI
                    })
                    .sum();
                Ok(Sample {
                    action: PpoAction::Continuous(a),
                    log_prob: lp,
                    value,
                })
            }
            HeadKind::Categorical { .. } => {
                let ls = masked_log_softmax(&out, mask);
                let ok = |i: usize| mask.is_none_or(|m| m[i]);
                let idx = if deterministic {
                    (0..ls.len()).filter(|&i| ok(i)).fold(None, |b: Option<usize>, i| match b {
                        Some(j) if ls[j] >= ls[i] => Some(j),
                        _ => Some(i),
                    })
                } else {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut pick = None;
                    for i in (0..ls.len()).filter(|&i| ok(i)) {
                        acc += ls[i].exp();
                        pick = Some(i);
                        if u < acc {
                            break;
                        }
                    }
                    pick
                }
                .ok_or(AgentError::NoValidAction)?;
                Ok(Sample {
                    action: PpoAction::Discrete(idx),
                    log_prob: ls[idx],
                    value,
                })
            }
        }
    }

    /// Scales a reward if reward normalization is on.
    pub fn shape_reward(&mut self, reward: f64, done: bool) -> f64 {
        match &mut self.reward_norm {
            Some(n) => n.normalize(reward, done),
            None => reward,
        }
    }

    /// Runs `epochs` passes of shuffled minibatches over `buf`.
    pub fn update(&mut self, buf: &RolloutBuffer) -> Result<PpoStats, AgentError> {
        let n = buf.len();
        if n < self.cfg.batch {
            return Err(AgentError::Underfull { have: n, need: self.cfg.batch });
        }
        let (adv, ret) = buf.advantages(self.cfg.gamma, self.cfg.gae_lambda);
        let mut idx: Vec<usize> = (0..n).collect();
        let mut stats = PpoStats::default();
        let mut batches = 0.0;
        for _ in 0..self.cfg.epochs {
            idx.shuffle(&mut self.rng);
            for chunk in idx.chunks(self.cfg.batch) {
                let s = self.minibatch(buf, chunk, &adv, &ret)?;
                stats.policy_loss += s.policy_loss;
                stats.value_loss += s.value_loss;
                stats.entropy += s.entropy;
                stats.approx_kl += s.approx_kl;
                stats.clip_fraction += s.clip_fraction;
                batches += 1.0;
            }
        }
        stats.policy_loss /= batches;
        stats.value_loss /= batches;
        stats.entropy /= batches;
        stats.approx_kl /= batches;
        stats.clip_fraction /= batches;
        Ok(stats)
    }

    /// Loss of one minibatch and its gradients, without applying them.
    pub fn loss_and_grads(
        &self,
        buf: &RolloutBuffer,
        chunk: &[usize],
        adv: &[f64],
        ret: &[f64],
    ) -> Result<(PpoStats, std::collections::BTreeMap<String, Tensor>), AgentError> {
        let b = chunk.len();
        let mut a: Vec<f64> = chunk.iter().map(|&i| adv[i]).collect();
        if b > 1 {
            let m = a.iter().sum::<f64>() / b as f64;
            let sd = (a.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (b - 1) as f64).sqrt();
            a.iter_mut().for_each(|x| *x = (*x - m) / (sd + 1e-8));
        }
        let obs: Vec<&[f64]> = chunk.iter().map(|&i| buf.obs[i].as_slice()).collect();
        let x = self.net.input(&obs)?;

        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let xv = tape.constant(x);
        let (out, v) = self.net.forward(&mut tape, &bound, xv)?;
        let (logp, entropy) = match self.head {
            HeadKind::Gaussian { dim } => {
                let acts: Vec<f64> = chunk
                    .iter()
                    .flat_map(|&i| match &buf.actions[i] {
                        PpoAction::Continuous(v) => v.clone(),
                        PpoAction::Discrete(_) => unreachable!("gaussian head"),
                    })
                    .collect();
                let acts = tape.constant(Tensor::new(vec![b, dim], acts)?);
                let ls = bound.var(LOG_STD);
                let diff = tape.sub(acts, out)?;
                let neg = tape.scale(ls, -1.0);
                let inv = tape.exp(neg);
                let z = tape.mul(diff, inv)?;
                let z2 = tape.square(z);
                let quad = tape.reduce(z2, Reduce::Sum, Some(1))?;
                let quad = tape.scale(quad, -0.5);
                let sls = tape.sum(ls);
                let norm = tape.add_scalar(sls, 0.5 * dim as f64 * LN_2PI);
                let norm = tape.scale(norm, -1.0);
                let logp = tape.add(quad, norm)?;
                let ent = tape.add_scalar(sls, 0.5 * dim as f64 * (1.0 + LN_2PI));
                (logp, ent)
            }
            HeadKind::Categorical { n } => {
                let mask = if buf.masks.iter().any(Option::is_some) {
                    let mut m = Vec::with_capacity(b * n);
                    for &i in chunk {
                        match &buf.masks[i] {
                            Some(mm) => m.extend_from_slice(mm),
                            None => m.extend(std::iter::repeat_n(true, n)),
                        }
                    }
                    Some(m)
                } else {
                    None
                };
                let ls = tape.log_softmax(out, mask)?;
                let acts = chunk
                    .iter()
                    .map(|&i| match buf.actions[i] {
                        PpoAction::Discrete(k) => k,
                        PpoAction::Continuous(_) => unreachable!("categorical head"),
                    })
                    .collect();
                let logp = tape.pick(ls, acts)?;
                let p = tape.exp(ls);
                let plp = tape.mul(p, ls)?;
                let rows = tape.reduce(plp, Reduce::Sum, Some(1))?;
                let m = tape.mean(rows);
                (logp, tape.scale(m, -1.0))
            }
        };
        let old = tape.constant(Tensor::column(chunk.iter().map(|&i| buf.log_probs[i]).collect()));
        let lr = tape.sub(logp, old)?;
        let ratio = tape.exp(lr);
        let av = tape.constant(Tensor::column(a.clone()));
        let s1 = tape.mul(ratio, av)?;
        let clipped = tape.clamp(ratio, 1.0 - self.cfg.clip, 1.0 + self.cfg.clip);
        let s2 = tape.mul(clipped, av)?;
        let surr = tape.minimum(s1, s2)?;
        let surr = tape.mean(surr);
        let policy_loss = tape.scale(surr, -1.0);
        let target = Tensor::column(chunk.iter().map(|&i| ret[i]).collect());
        let value_loss = tape.mse_loss(v, target)?;

        let vterm = tape.scale(value_loss, self.cfg.vf_coef);
        let eterm = tape.scale(entropy, -self.cfg.ent_coef);
        let loss = tape.add(policy_loss, vterm)?;
        let loss = tape.add(loss, eterm)?;

        let ratios = tape.value(ratio).data().to_vec();
        let lrs = tape.value(lr).data().to_vec();
        let stats = PpoStats {
            policy_loss: tape.value(policy_loss).item(),
            value_loss: tape.value(value_loss).item(),
            entropy: tape.value(entropy).item(),
            approx_kl: lrs.iter().zip(&ratios).map(|(l, r)| (r - 1.0) - l).sum::<f64>() / b as f64,
            clip_fraction: ratios.iter().filter(|r| (*r - 1.0).abs() > self.cfg.clip).count() as f64 / b as f64,
        };
        let grads = tape.backward(loss)?;
        Ok((stats, bound.named_grads(&grads, &self.params)))
    }

    fn minibatch(&mut self, buf: &RolloutBuffer, chunk: &[usize], adv: &[f64], ret: &[f64]) -> Result<PpoStats, AgentError> {
        let (stats, mut grads) = self.loss_and_grads(buf, chunk, adv, ret)?;
        clip_grad_norm(&mut grads, self.cfg.max_grad_norm);
        self.adam.step(&mut self.params, &grads)?;
        Ok(stats)
    }
}

/// Elementwise PPO objective terms `(unclipped, clipped-min)` for inspection.
pub fn surrogate(ratio: f64, advantage: f64, clip: f64) -> (f64, f64) {
    let un = ratio * advantage;
    (un, un.min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> PpoConfig {
        PpoConfig {
            rollout: 64,
            batch: 16,
            epochs: 4,
            lr: 0.01,
            ..PpoConfig::default()
        }
    }

    #[test]
    fn gae_matches_hand_computation() {
        let mut b = RolloutBuffer::default();
        for (r, v, d) in [(1.0, 0.5, false), (0.0, 0.2, true), (2.0, 1.0, false)] {
            b.push(vec![0.0], Sample { action: PpoAction::Discrete(0), log_prob: 0.0, value: v }, r, d, None);
        }
        b.last_value = 3.0;
        let (g, l) = (0.9, 0.8);
        let (adv, ret) = b.advantages(g, l);
        let d2 = 2.0 + g * 3.0 - 1.0;
        let d1 = 0.0 - 0.2;
        let d0 = 1.0 + g * 0.2 - 0.5;
        let e = [d0 + g * l * d1, d1, d2];
        for i in 0..3 {
            assert!((adv[i] - e[i]).abs() < 1e-12);
            assert!((ret[i] - (e[i] + b.values[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_slots_get_zero_probability() {
        let ppo = Ppo::new(3, HeadKind::Categorical { n: 5 }, cfg(), 1);
        let mask = [false, true, false, true, false];
        let p = ppo.probabilities(&[0.1, 0.2, 0.3], Some(&mask)).unwrap();
        assert_eq!(p[0], 0.0);
        assert_eq!(p[2], 0.0);
        assert_eq!(p[4], 0.0);
        assert!((p[1] + p[3] - 1.0).abs() < 1e-12);
        let one = [false, false, true, false, false];
        assert_eq!(ppo.probabilities(&[0.1, 0.2, 0.3], Some(&one)).unwrap()[2], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let s = ppo.sample(&[0.5, 0.5, 0.5], Some(&mask), &mut rng, false).unwrap();
            assert!(matches!(s.action, PpoAction::Discrete(1 | 3)));
        }
    }

    #[test]
    fn equal_logits_are_uniform_over_valid() {
        let mut ppo = Ppo::new(2, HeadKind::Categorical { n: 6 }, cfg(), 1);
        for name in ["pi.head.weight", "pi.head.bias"] {
            ppo.params.get_mut(name).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mask = [true, false, true, true, false, false];
        let p = ppo.probabilities(&[1.0, -1.0], Some(&mask)).unwrap();
        for (i, &pi) in p.iter().enumerate() {
            let e = if mask[i] { 1.0 / 3.0 } else { 0.0 };
            assert!((pi - e).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_log_prob_matches_tape() {
        let ppo = Ppo::new(3, HeadKind::Gaussian { dim: 2 }, cfg(), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut buf = RolloutBuffer::default();
        for i in 0..4 {
            let o = vec![i as f64, 1.0, -0.5];
            let s = ppo.sample(&o, None, &mut rng, false).unwrap();
            buf.push(o, s, 0.0, false, None);
        }
        // Fresh samples: the ratio is exactly 1, so the KL estimate vanishes.
        let (st, _) = ppo.loss_and_grads(&buf, &[0, 1, 2, 3], &[1.0, -1.0, 0.5, 0.0], &[0.0; 4]).unwrap();
        assert!(st.approx_kl.abs() < 1e-12);
        assert_eq!(st.clip_fraction, 0.0);
        assert!((st.entropy - 2.0 * 0.5 * (1.0 + LN_2PI)).abs() < 1e-12);
    }

    #[test]
    fn zero_advantages_give_zero_surrogate_gradient() {
        let ppo = Ppo::new(
            2,
            HeadKind::Categorical { n: 3 },
            PpoConfig {
                ent_coef: 0.0,
                vf_coef: 0.0,
                ..cfg()
            },
            3,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut buf = RolloutBuffer::default();
        for i in 0..4 {
            let o = vec![i as f64, 0.5];
            let s = ppo.sample(&o, None, &mut rng, false).unwrap();
            buf.push(o, s, 0.0, false, None);
        }
        // Advantages all equal, so the per-batch normalization maps them to 0.
        let (_, grads) = ppo.loss_and_grads(&buf, &[0, 1, 2, 3], &[0.7; 4], &[0.0; 4]).unwrap();
        for (k, g) in grads {
            assert!(g.data().iter().all(|v| v.abs() < 1e-12), "{k}");
        }
    }

    #[test]
    fn two_armed_bandit_is_learned() {
        let mut ppo = Ppo::new(1, HeadKind::Categorical { n: 2 }, cfg(), 9);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let obs = vec![1.0];
        for _ in 0..20 {
            let mut buf = RolloutBuffer::default();
            for _ in 0..ppo.cfg.rollout {
                let s = ppo.sample(&obs, None, &mut rng, false).unwrap();
                let r = if s.action == PpoAction::Discrete(1) { 1.0 } else { 0.0 };
                buf.push(obs.clone(), s, r, true, None);
            }
            ppo.update(&buf).unwrap();
        }
        assert!(ppo.probabilities(&obs, None).unwrap()[1] > 0.95);
    }

    #[test]
    fn underfull_buffer_is_rejected() {
        let mut ppo = Ppo::new(1, HeadKind::Categorical { n: 2 }, cfg(), 9);
        assert!(matches!(ppo.update(&RolloutBuffer::default()), Err(AgentError::Underfull { .. })));
    }

    proptest! {
        #[test]
        fn clipped_never_exceeds_unclipped(r in 0.0f64..3.0, a in -5.0f64..5.0, c in 0.05f64..0.5) {
            let (un, cl) = surrogate(r, a, c);
            prop_assert!(cl <= un + 1e-15);
        }
    }
}
