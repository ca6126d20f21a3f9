//! End-to-end plumbing: per-run contexts, agent construction and
//! checkpoints, training loops, evaluation, the S/M/L/V protocol and the
//! action-selection timing study.

mod agent;
mod scale;
mod train;

pub use agent::{Agent, AgentMeta, Decision};
pub use scale::{scale_study, ScaleConfig, ScaleReport};
pub use train::{evaluate, evaluate_split, repeat_seed, run_protocol, train_agent, train_split, EvalOutcome, TrainConfig, TrainReport};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentError, AgentKind};
use crate::envs::{make_env, EnvError, EnvKind, EnvOptions, Environment, Instance};
use crate::eval::EvalError;
use crate::gae::{EncoderConfig, EncoderSet, GaeError, GaeModel, GraphSchema};
use crate::latent::{build_observation, pool_rows, ActionEmbedder, LatentError, LatentSpace, LatentStats, Pooling};
use crate::parallel::split_seed;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Gae(#[from] GaeError),
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("agent {0} needs pretrained graph encoders")]
    NeedsEncoders(&'static str),
    #[error("encoders were trained for {found}, not {expected}")]
    WrongEncoders { expected: &'static str, found: &'static str },
    #[error("no instances")]
    Empty,
    #[error("checkpoint metadata: {0}")]
    Meta(String),
}

/// Everything an agent needs to read an instance of its environment: frozen
/// encoders, frozen latent statistics and the padding widths.
#[derive(Debug, Clone)]
pub struct Context {
    pub kind: EnvKind,
    pub agent: AgentKind,
    pub encoders: Option<EncoderSet>,
    pub layout: Layout,
}

/// Serializable part of a [`Context`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    /// Node embedding width.
    pub p: usize,
    /// Traffic path length of action embeddings.
    pub path_len: usize,
    /// Size padded observations are built for.
    pub pad_size: usize,
    /// Width of the discrete policy head.
    pub max_actions: usize,
    /// Latent statistics fitted on the training instances.
    pub stats: Option<LatentStats>,
}

/// An environment ready for an agent, with its latent action space.
pub struct Prepared {
    pub id: String,
    pub env: Box<dyn Environment>,
    pub space: Option<LatentSpace>,
    /// Poolings of the action embedding matrix (projection observations).
    summary: Vec<f64>,
}

impl Clone for Prepared {
    fn clone(&self) -> Self {
        Self {
            id: self.id.clone(),
            env: self.env.boxed_clone(),
            space: self.space.clone(),
            summary: self.summary.clone(),
        }
    }
}

/// Randomly initialized encoders, one per graph of `instance`.
pub fn random_encoders(instance: &Instance, cfg: EncoderConfig, seed: u64) -> EncoderSet {
    let encoders = instance
        .graphs
        .iter()
        .enumerate()
        .map(|(i, (name, g))| {
            let model = GaeModel::new(name, GraphSchema::of(g), cfg, split_seed(seed, i as u64));
            (name.clone(), model.into_encoder())
        })
        .collect();
    EncoderSet { kind: instance.kind, encoders }
}

fn encoder_width(enc: &EncoderSet) -> usize {
    enc.encoders.values().next().map(|e| e.encoder.out_dim()).unwrap_or(0)
}

fn raw_action_embeddings(enc: &EncoderSet, embedder: &ActionEmbedder, instance: &Instance, actions: &[crate::envs::Action]) -> Result<Tensor, PipelineError> {
    let z = enc.embed_bundle(&instance.graphs)?;
    Ok(embedder.embed_all(actions, &z)?)
}

impl Context {
    /// Fits the latent statistics on `train` and sizes padding for `all`.
    pub fn new(agent: AgentKind, encoders: Option<EncoderSet>, train: &[&Instance], all: &[&Instance]) -> Result<Self, PipelineError> {
        let first = train.first().ok_or(PipelineError::Empty)?;
        let kind = first.kind;
        if !agent.uses_padding() && encoders.is_none() {
            return Err(PipelineError::NeedsEncoders(agent.name()));
        }
        if let Some(e) = &encoders {
            if e.kind != kind {
                return Err(PipelineError::WrongEncoders { expected: kind.name(), found: e.kind.name() });
            }
        }
        let opts = EnvOptions::default();
        let mut pad_size = 0;
        let mut max_actions = 0;
        for inst in all.iter().chain(train) {
            let env = make_env(inst, opts)?;
            pad_size = pad_size.max(env.size());
            max_actions = max_actions.max(env.actions().len());
        }
        let p = encoders.as_ref().map(encoder_width).unwrap_or(0);
        let embedder = ActionEmbedder::for_instance(first, p);
        let stats = match (&encoders, agent.uses_latent()) {
            (Some(enc), true) => {
                let mut raws = Vec::new();
                for inst in train {
                    let env = make_env(inst, opts)?;
                    raws.push(raw_action_embeddings(enc, &embedder, inst, env.actions())?);
                }
                Some(LatentStats::fit(&raws.iter().collect::<Vec<_>>())?)
            }
            _ => None,
        };
        Ok(Self {
            kind,
            agent,
            encoders,
            layout: Layout {
                p,
                path_len: embedder.path_len,
                pad_size,
                max_actions,
                stats,
            },
        })
    }

    /// Rebuilds a context from a saved layout.
    pub fn from_layout(kind: EnvKind, agent: AgentKind, encoders: Option<EncoderSet>, layout: Layout) -> Self {
        Self { kind, agent, encoders, layout }
    }

    fn embedder(&self) -> ActionEmbedder {
        ActionEmbedder {
            kind: self.kind,
            p: self.layout.p,
            path_len: self.layout.path_len,
        }
    }

    /// Builds the environment and, for latent agents, its action space.
    pub fn prepare(&self, instance: &Instance, opts: EnvOptions) -> Result<Prepared, PipelineError> {
        let env = make_env(instance, opts)?;
        let (space, summary) = match (&self.encoders, &self.layout.stats) {
            (Some(enc), Some(stats)) => {
                let raw = raw_action_embeddings(enc, &self.embedder(), instance, env.actions())?;
                let space = LatentSpace::build(env.actions().to_vec(), &raw, stats.clone())?;
                let mut summary = Vec::new();
                if self.agent == AgentKind::Projection {
                    for op in Pooling::ALL {
                        summary.extend(pool_rows(space.embeddings(), op)?);
                    }
                }
                (Some(space), summary)
            }
            _ => (None, Vec::new()),
        };
        Ok(Prepared {
            id: instance.id.clone(),
            env,
            space,
            summary,
        })
    }

    /// Observation of the current state of `prep.env`.
    pub fn observe(&self, prep: &Prepared) -> Result<Vec<f64>, PipelineError> {
        if self.agent.uses_padding() {
            return Ok(prep.env.padded_observation(self.layout.pad_size)?);
        }
        let enc = self.encoders.as_ref().ok_or(PipelineError::NeedsEncoders(self.agent.name()))?;
        let bundle = prep.env.graphs();
        let z: BTreeMap<String, Tensor> = enc.embed_bundle(&bundle)?;
        let mut obs = build_observation(&bundle, &z, None)?;
        obs.extend_from_slice(&prep.summary);
        Ok(obs)
    }

    /// Width of the agent's action interface: latent dimension or head width.
    pub fn action_dim(&self) -> usize {
        match self.agent {
            AgentKind::Projection | AgentKind::Iterative => self.embedder().dim(),
            _ => self.layout.max_actions,
        }
    }
}

#[cfg(test)]
mod tests;
