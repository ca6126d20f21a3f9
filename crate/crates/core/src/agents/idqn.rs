use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::policy::{symlog, HIDDEN};
use super::{AgentError, ForwardCounter};
use crate::parallel::split_seed;
use crate::tensor::{clip_grad_norm, Activation, Adam, AdamConfig, Mlp, Params, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdqnConfig {
    pub lr: f64,
    pub batch: usize,
    pub gamma: f64,
    pub n_step: usize,
    pub tau: f64,
    pub target_update_interval: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of the training steps over which epsilon decays linearly.
    pub eps_fraction: f64,
    pub buffer_size: usize,
    pub learning_starts: usize,
    pub train_freq: usize,
    pub gradient_steps: usize,
    pub max_grad_norm: f64,
}

impl Default for IdqnConfig {
    fn default() -> Self {
        Self {
            lr: 0.0001,
            batch: 32,
            gamma: 0.95,
            n_step: 5,
            tau: 0.05,
            target_update_interval: 10_000,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_fraction: 0.1,
            buffer_size: 100_000,
            learning_starts: 1000,
            train_freq: 4,
            gradient_steps: 1,
            max_grad_norm: 10.0,
        }
    }
}

impl IdqnConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if !(self.tau > 0.0 && self.tau <= 1.0) || !(0.0..=1.0).contains(&self.gamma) || self.n_step == 0 || self.batch == 0 {
            return Err(AgentError::Config(format!("invalid IDQN config {self:?}")));
        }
        Ok(())
    }

    pub fn epsilon(&self, step: usize, total: usize) -> f64 {
        let horizon = (self.eps_fraction * total as f64).max(1.0);
        let frac = step as f64 / horizon;
        if frac >= 1.0 {
            return self.eps_end;
        }
        self.eps_start + frac * (self.eps_end - self.eps_start)
    }
}

/// An n-step transition `(o, u(a), R, γ^k, o', U(valid a'))`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTransition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub discount: f64,
    pub next_obs: Vec<f64>,
    pub next_actions: Vec<Vec<f64>>,
    pub done: bool,
}

/// Folds one-step experience into n-step transitions.
#[derive(Debug, Clone)]
pub struct NStepBuffer {
    n: usize,
    gamma: f64,
    pending: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
}

impl NStepBuffer {
    pub fn new(n: usize, gamma: f64) -> Self {
        Self {
            n: n.max(1),
            gamma,
            pending: VecDeque::new(),
        }
    }

    fn emit(&self, next_obs: &[f64], next_actions: &[Vec<f64>], done: bool) -> QTransition {
        let (obs, action, _) = self.pending.front().expect("non-empty").clone();
        let mut reward = 0.0;
        let mut discount = 1.0;
        for (_, _, r) in &self.pending {
            reward += discount * r;
            discount *= self.gamma;
        }
        QTransition {
            obs,
            action,
            reward,
            discount,
            next_obs: next_obs.to_vec(),
            next_actions: if done { Vec::new() } else { next_actions.to_vec() },
            done,
        }
    }

    pub fn push(&mut self, obs: Vec<f64>, action: Vec<f64>, reward: f64, next_obs: &[f64], next_actions: &[Vec<f64>], done: bool) -> Vec<QTransition> {
        self.pending.push_back((obs, action, reward));
        let mut out = Vec::new();
        if done {
            while !self.pending.is_empty() {
                out.push(self.emit(next_obs, next_actions, true));
                self.pending.pop_front();
            }
        } else if self.pending.len() == self.n {
            out.push(self.emit(next_obs, next_actions, false));
            self.pending.pop_front();
        }
        out
    }

    pub fn clear(&mut self) {
        self.pending.clear();
    }
}

/// Q(o, u(a)) network evaluated once per candidate action.
#[derive(Debug, Clone)]
pub struct IdqnAgent {
    pub cfg: IdqnConfig,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub net: Mlp,
    pub params: Params,
    pub target: Params,
    pub forwards: ForwardCounter,
    pub updates: usize,
    adam: Adam,
    replay: Vec<QTransition>,
    next_slot: usize,
    rng: ChaCha8Rng,
}

impl IdqnAgent {
    pub fn new(obs_dim: usize, act_dim: usize, cfg: IdqnConfig, seed: u64) -> Self {
        let mut params = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::new("q", &[obs_dim + act_dim, HIDDEN[0], HIDDEN[1], 1], Activation::LeakyRelu, Activation::Identity, &mut params, &mut rng);
        Self {
            cfg,
            obs_dim,
            act_dim,
            net,
            target: params.clone(),
            params,
            forwards: ForwardCounter::default(),
            updates: 0,
            adam: Adam::new(AdamConfig::with_lr(cfg.lr)),
            replay: Vec::new(),
            next_slot: 0,
            rng: ChaCha8Rng::seed_from_u64(split_seed(seed, 0xD0)),
        }
    }

    fn row(&self, obs: &[f64], action: &[f64]) -> Vec<f64> {
        obs.iter().map(|&x| symlog(x)).chain(action.iter().copied()).collect()
    }

    fn batch_input(&self, rows: impl Iterator<Item = Vec<f64>>) -> Result<Tensor, AgentError> {
        let data: Vec<f64> = rows.flatten().collect();
        let w = self.obs_dim + self.act_dim;
        Ok(Tensor::new(vec![data.len() / w, w], data)?)
    }

    /// Q-values of several actions in one batched pass (used for targets).
    pub fn q_values(&self, params: &Params, obs: &[f64], actions: &[Vec<f64>]) -> Result<Vec<f64>, AgentError> {
        if actions.is_empty() {
            return Ok(Vec::new());
        }
        let x = self.batch_input(actions.iter().map(|a| self.row(obs, a)))?;
        Ok(self.net.infer(params, &x)?.into_data())
    }

    /// Q-value of a single candidate: one network forward pass.
    pub fn q_single(&self, obs: &[f64], action: &[f64]) -> Result<f64, AgentError> {
        self.forwards.add(1);
        let x = Tensor::row(self.row(obs, action));
        Ok(self.net.infer(&self.params, &x)?.item())
    }

    /// Epsilon-greedy over `candidates` (index, embedding); greedy ties go to
    /// the earlier candidate. Every candidate costs one forward pass.
    pub fn act(&self, obs: &[f64], candidates: &[(usize, &[f64])], epsilon: f64, rng: &mut impl Rng) -> Result<usize, AgentError> {
        if candidates.is_empty() {
            return Err(AgentError::NoValidAction);
        }
        if epsilon > 0.0 && rng.random::<f64>() < epsilon {
            return Ok(candidates[rng.random_range(0..candidates.len())].0);
        }
        let mut best = (f64::NEG_INFINITY, candidates[0].0);
        for &(i, u) in candidates {
            let q = self.q_single(obs, u)?;
            if q > best.0 {
                best = (q, i);
            }
        }
        Ok(best.1)
    }

    pub fn replay_len(&self) -> usize {
        self.replay.len()
    }

    pub fn remember(&mut self, t: QTransition) {
        if self.replay.len() < self.cfg.buffer_size.max(1) {
            self.replay.push(t);
        } else {
            self.replay[self.next_slot] = t;
        }
        self.next_slot = (self.next_slot + 1) % self.cfg.buffer_size.max(1);
    }

    /// TD target `R + γ^k max_a' Q_target(o', u(a'))`, or `R` at episode end.
    pub fn td_target(&self, t: &QTransition) -> Result<f64, AgentError> {
        if t.done || t.next_actions.is_empty() {
            return Ok(t.reward);
        }
        let q = self.q_values(&self.target, &t.next_obs, &t.next_actions)?;
        Ok(t.reward + t.discount * q.into_iter().fold(f64::NEG_INFINITY, f64::max))
    }

    /// One Huber-loss gradient step on a uniform minibatch.
    pub fn train_step(&mut self) -> Result<f64, AgentError> {
        let n = self.replay.len();
        if n < self.cfg.batch {
            return Err(AgentError::Underfull { have: n, need: self.cfg.batch });
        }
        let picks = sample(&mut self.rng, n, self.cfg.batch).into_vec();
        let mut targets = Vec::with_capacity(picks.len());
        for &i in &picks {
            targets.push(self.td_target(&self.replay[i])?);
        }
        let x = self.batch_input(picks.iter().map(|&i| self.row(&self.replay[i].obs, &self.replay[i].action)))?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let xv = tape.constant(x);
        let q = self.net.forward(&mut tape, &bound, xv)?;
        let loss = tape.huber_loss(q, Tensor::column(targets), 1.0)?;
        let value = tape.value(loss).item();
        let g = tape.backward(loss)?;
        let mut grads = bound.named_grads(&g, &self.params);
        clip_grad_norm(&mut grads, self.cfg.max_grad_norm);
        self.adam.step(&mut self.params, &grads)?;
        self.updates += 1;
        Ok(value)
    }

    /// Polyak update `target <- τ online + (1-τ) target`.
    pub fn update_target(&mut self) {
        self.target.soft_update_from(&self.params, self.cfg.tau);
    }

    /// Bookkeeping after environment step `step` (1-based): trains every
    /// `train_freq` steps once warm, and mixes the target every
    /// `target_update_interval` steps.
    pub fn on_step(&mut self, step: usize) -> Result<Option<f64>, AgentError> {
        let mut loss = None;
        if step >= self.cfg.learning_starts && step % self.cfg.train_freq.max(1) == 0 && self.replay.len() >= self.cfg.batch {
            for _ in 0..self.cfg.gradient_steps {
                loss = Some(self.train_step()?);
            }
        }
        if step % self.cfg.target_update_interval.max(1) == 0 {
            self.update_target();
        }
        Ok(loss)
    }
}
