use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Context, Layout, PipelineError, Prepared};
use crate::agents::{AgentKind, DiscreteAgent, IdqnAgent, IdqnConfig, PpoConfig, ProjectionAgent, Sample};
use crate::envs::EnvKind;
use crate::tensor::{load_checkpoint, save_checkpoint, CheckpointMeta};

const CHECKPOINT_KIND: &str = "agent";

/// A trained or freshly initialized agent of any family.
#[derive(Debug, Clone)]
pub enum Agent {
    Projection(ProjectionAgent),
    Iterative(IdqnAgent),
    Discrete(DiscreteAgent),
}

/// One action choice. `sample` is kept for PPO agents.
#[derive(Debug, Clone)]
pub struct Decision {
    pub index: usize,
    pub sample: Option<Sample>,
    /// Padded validity mask the choice was made under (masked discrete only).
    pub mask: Option<Vec<bool>>,
}

/// JSON metadata stored next to an agent checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMeta {
    pub agent: AgentKind,
    pub env: EnvKind,
    pub obs_dim: usize,
    pub seed: u64,
    pub ppo: PpoConfig,
    pub idqn: IdqnConfig,
    pub layout: Layout,
}

impl Agent {
    pub fn new(ctx: &Context, obs_dim: usize, ppo: PpoConfig, idqn: IdqnConfig, seed: u64) -> Self {
        let act = ctx.action_dim();
        match ctx.agent {
            AgentKind::Projection => Agent::Projection(ProjectionAgent::new(obs_dim, act, ppo, seed)),
            AgentKind::Iterative => Agent::Iterative(IdqnAgent::new(obs_dim, act, idqn, seed)),
            k => Agent::Discrete(DiscreteAgent::new(obs_dim, act, k.is_masked(), ppo, seed)),
        }
    }

    /// Network forward passes spent on action selection so far.
    pub fn forwards(&self) -> u64 {
        match self {
            Agent::Projection(a) => a.forwards.get(),
            Agent::Iterative(a) => a.forwards.get(),
            Agent::Discrete(a) => a.forwards.get(),
        }
    }

    pub fn reset_forwards(&self) {
        match self {
            Agent::Projection(a) => a.forwards.reset(),
            Agent::Iterative(a) => a.forwards.reset(),
            Agent::Discrete(a) => a.forwards.reset(),
        }
    }

    /// Picks an action for the current state of `prep`. `epsilon` is used by
    /// the iterative agent only; PPO agents sample unless `deterministic`.
    pub fn act(&self, prep: &Prepared, obs: &[f64], rng: &mut impl Rng, deterministic: bool, epsilon: f64) -> Result<Decision, PipelineError> {
        let mask = prep.env.valid_mask();
        match self {
            Agent::Projection(a) => {
                let space = prep.space.as_ref().ok_or(PipelineError::NeedsEncoders("projection"))?;
                let (index, sample) = a.act(obs, space, &mask, rng, deterministic)?;
                Ok(Decision { index, sample: Some(sample), mask: None })
            }
            Agent::Iterative(a) => {
                let space = prep.space.as_ref().ok_or(PipelineError::NeedsEncoders("iterative"))?;
                let candidates: Vec<(usize, &[f64])> = mask
                    .iter()
                    .enumerate()
                    .filter(|(_, &ok)| ok)
                    .map(|(i, _)| (i, space.embedding(i)))
                    .collect();
                let eps = if deterministic { 0.0 } else { epsilon };
                let index = a.act(obs, &candidates, eps, rng)?;
                Ok(Decision { index, sample: None, mask: None })
            }
            Agent::Discrete(a) => {
                let (index, sample) = a.act(obs, &mask, rng, deterministic)?;
                let padded = a.masked.then(|| a.padded_mask(&mask)).transpose()?;
                Ok(Decision { index, sample: Some(sample), mask: padded })
            }
        }
    }

    pub fn save(&self, path: &Path, meta: &AgentMeta) -> Result<(), PipelineError> {
        let params = match self {
            Agent::Projection(a) => &a.ppo.params,
            Agent::Iterative(a) => &a.params,
            Agent::Discrete(a) => &a.ppo.params,
        };
        let json = serde_json::to_value(meta).map_err(|e| PipelineError::Meta(e.to_string()))?;
        save_checkpoint(path, params, &CheckpointMeta::new(CHECKPOINT_KIND, json))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, AgentMeta), PipelineError> {
        let (params, meta) = load_checkpoint(path)?;
        if meta.kind != CHECKPOINT_KIND {
            return Err(PipelineError::Meta(format!("expected an agent checkpoint, found {}", meta.kind)));
        }
        let m: AgentMeta = serde_json::from_value(meta.metadata).map_err(|e| PipelineError::Meta(e.to_string()))?;
        let ctx = Context::from_layout(m.env, m.agent, None, m.layout.clone());
        let mut agent = Agent::new(&ctx, m.obs_dim, m.ppo, m.idqn, m.seed);
        match &mut agent {
            Agent::Projection(a) => a.ppo.params = params,
            Agent::Iterative(a) => {
                a.target = params.clone();
                a.params = params;
            }
            Agent::Discrete(a) => a.ppo.params = params,
        }
        Ok((agent, m))
    }
}
