//! Agent families sharing one policy trunk: the projection agent (Gaussian
//! proto-action plus k-NN decoding), the iterative Q-scan agent and the
//! padded discrete baselines.

mod idqn;
mod policy;
mod ppo;
mod running;

pub use idqn::{IdqnAgent, IdqnConfig, NStepBuffer, QTransition};
pub use policy::{symlog, HeadKind, PolicyNet, HIDDEN};
pub use ppo::{surrogate, PpoAction, PpoConfig, PpoStats, Ppo, RolloutBuffer, Sample};
pub use running::{RewardNormalizer, RunningMeanStd};

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::latent::{LatentError, LatentSpace};
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error("no valid action")]
    NoValidAction,
    #[error("instance has {actions} actions but the policy pads to {max}")]
    Padding { actions: usize, max: usize },
    #[error("buffer holds {have} transitions, need {need}")]
    Underfull { have: usize, need: usize },
    #[error("{0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    Projection,
    Iterative,
    PDiscrete,
    PDiscreteMasked,
    GDiscrete,
    GDiscreteMasked,
}

impl AgentKind {
    pub const ALL: [AgentKind; 6] = [
        AgentKind::Projection,
        AgentKind::Iterative,
        AgentKind::PDiscrete,
        AgentKind::PDiscreteMasked,
        AgentKind::GDiscrete,
        AgentKind::GDiscreteMasked,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Projection => "projection",
            AgentKind::Iterative => "iterative",
            AgentKind::PDiscrete => "p-discrete",
            AgentKind::PDiscreteMasked => "p-discrete-masked",
            AgentKind::GDiscrete => "g-discrete",
            AgentKind::GDiscreteMasked => "g-discrete-masked",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn is_masked(self) -> bool {
        matches!(self, AgentKind::PDiscreteMasked | AgentKind::GDiscreteMasked)
    }

    /// Uses the hand-built padded observation instead of pooled embeddings.
    pub fn uses_padding(self) -> bool {
        matches!(self, AgentKind::PDiscrete | AgentKind::PDiscreteMasked)
    }

    /// Needs a latent action space.
    pub fn uses_latent(self) -> bool {
        matches!(self, AgentKind::Projection | AgentKind::Iterative)
    }
}

/// Network forward passes spent on action selection.
#[derive(Debug, Default)]
pub struct ForwardCounter(AtomicU64);

impl ForwardCounter {
    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.0.store(0, Ordering::Relaxed);
    }
}

impl Clone for ForwardCounter {
    fn clone(&self) -> Self {
        Self(AtomicU64::new(self.get()))
    }
}

/// Projection agent: PPO over a Gaussian proto-action in the latent space,
/// decoded to the nearest valid action.
#[derive(Debug, Clone)]
pub struct ProjectionAgent {
    pub ppo: Ppo,
    pub forwards: ForwardCounter,
}

impl ProjectionAgent {
    pub fn new(obs_dim: usize, latent_dim: usize, cfg: PpoConfig, seed: u64) -> Self {
        Self {
            ppo: Ppo::new(obs_dim, HeadKind::Gaussian { dim: latent_dim }, cfg, seed),
            forwards: ForwardCounter::default(),
        }
    }

    /// One policy forward pass, then a clamp and a k=1 scan over valid actions.
    pub fn act(&self, obs: &[f64], space: &LatentSpace, mask: &[bool], rng: &mut impl Rng, deterministic: bool) -> Result<(usize, Sample), AgentError> {
        if !mask.iter().any(|&m| m) {
            return Err(AgentError::NoValidAction);
        }
        let sample = self.ppo.sample(obs, None, rng, deterministic)?;
        self.forwards.add(1);
        let PpoAction::Continuous(proto) = &sample.action else {
            unreachable!("gaussian head")
        };
        let idx = space.decode(proto, 1, Some(mask))?[0];
        Ok((idx, sample))
    }
}

/// Padded discrete baseline: one logit per action slot, optionally masked.
#[derive(Debug, Clone)]
pub struct DiscreteAgent {
    pub ppo: Ppo,
    pub masked: bool,
    pub forwards: ForwardCounter,
}

impl DiscreteAgent {
    pub fn new(obs_dim: usize, max_actions: usize, masked: bool, cfg: PpoConfig, seed: u64) -> Self {
        Self {
            ppo: Ppo::new(obs_dim, HeadKind::Categorical { n: max_actions }, cfg, seed),
            masked,
            forwards: ForwardCounter::default(),
        }
    }

    pub fn max_actions(&self) -> usize {
        match self.ppo.head {
            HeadKind::Categorical { n } => n,
            HeadKind::Gaussian { .. } => unreachable!("categorical head"),
        }
    }

    /// Pads the instance mask to the policy width; padding slots are always invalid.
    pub fn padded_mask(&self, mask: &[bool]) -> Result<Vec<bool>, AgentError> {
        let max = self.max_actions();
        if mask.len() > max {
            return Err(AgentError::Padding { actions: mask.len(), max });
        }
        let mut m = mask.to_vec();
        m.resize(max, false);
        Ok(m)
    }

    /// Returns a slot index; unmasked policies may pick invalid or padding slots.
    pub fn act(&self, obs: &[f64], mask: &[bool], rng: &mut impl Rng, deterministic: bool) -> Result<(usize, Sample), AgentError> {
        let m = self.padded_mask(mask)?;
        if self.masked && !m.iter().any(|&b| b) {
            return Err(AgentError::NoValidAction);
        }
        let sample = self.ppo.sample(obs, self.masked.then_some(m.as_slice()), rng, deterministic)?;
        self.forwards.add(1);
        let PpoAction::Discrete(i) = sample.action else {
            unreachable!("categorical head")
        };
        Ok((i, sample))
    }
}
