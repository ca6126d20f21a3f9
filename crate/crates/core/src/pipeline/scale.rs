use serde::{Deserialize, Serialize};

use super::{evaluate, random_encoders, Agent, Context, PipelineError};
use crate::agents::{AgentKind, IdqnConfig, PpoConfig};
use crate::envs::EnvKind;
use crate::eval::{fit_power_law, median, test_seeds, PowerLaw, ScaleRow};
use crate::gae::{EncoderConfig, EncoderSet};
use crate::oracle::{generate_sized, sweep_all, SweepConfig};
use crate::parallel::{split_seed, Exec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleConfig {
    pub sizes: Vec<usize>,
    /// Instances generated per size.
    pub instances: usize,
    /// Episodes per instance, seeded from the test seed sequence.
    pub episodes: usize,
    /// Oracle sweeps per instance (bounds are only needed to run episodes).
    pub sweeps: usize,
    pub encoder: EncoderConfig,
    pub seed: u64,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        Self {
            sizes: vec![10, 20, 30, 40, 50],
            instances: 1,
            episodes: 3,
            sweeps: 2,
            encoder: EncoderConfig::default(),
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleReport {
    pub rows: Vec<ScaleRow>,
    pub fit: PowerLaw,
    /// Total forward passes and total valid actions over all decisions.
    pub forwards: u64,
    pub valid_actions: u64,
}

/// Times `act` of an untrained agent over a grid of instance sizes and fits
/// `T(n) = c n^α` to the per-size medians. Runs on the calling thread only.
pub fn scale_study(kind: EnvKind, agent: AgentKind, cfg: &ScaleConfig, encoders: Option<&EncoderSet>) -> Result<ScaleReport, PipelineError> {
    let mut rows = Vec::new();
    let mut forwards = 0;
    let mut valid_total = 0;
    let mut fresh: Option<EncoderSet> = None;
    let seeds = test_seeds(cfg.episodes);
    for (k, &size) in cfg.sizes.iter().enumerate() {
        let mut instances = generate_sized(kind, Some(size), cfg.instances.max(1), split_seed(cfg.seed, k as u64));
        let sweep = SweepConfig {
            sweeps: Some(cfg.sweeps),
            ..SweepConfig::default()
        };
        sweep_all(&mut instances, &sweep, Exec::Sequential);
        let enc = match (encoders, agent.uses_padding()) {
            (_, true) => None,
            (Some(e), false) => Some(e.clone()),
            (None, false) => Some(fresh.get_or_insert_with(|| random_encoders(&instances[0], cfg.encoder, cfg.seed)).clone()),
        };
        let refs: Vec<_> = instances.iter().collect();
        let ctx = Context::new(agent, enc, &refs, &refs)?;
        let probe = ctx.prepare(&instances[0], Default::default())?;
        let obs_dim = ctx.observe(&probe)?.len();
        let a = Agent::new(&ctx, obs_dim, PpoConfig::default(), IdqnConfig::default(), cfg.seed);
        let mut times = Vec::new();
        let mut valid = Vec::new();
        for inst in &instances {
            let o = evaluate(&ctx, &a, inst, &seeds)?;
            times.extend(o.times_ms);
            valid.extend(o.valid_actions);
        }
        let decisions = times.len();
        let f = a.forwards();
        let v: usize = valid.iter().sum();
        forwards += f;
        valid_total += v as u64;
        rows.push(ScaleRow {
            env: kind.name().into(),
            agent: agent.name().into(),
            size,
            decisions,
            median_ms: median(&times)?,
            mean_actions: v as f64 / decisions as f64,
            forwards_per_decision: f as f64 / decisions as f64,
        });
    }
    let sizes: Vec<f64> = rows.iter().map(|r| r.size as f64).collect();
    let medians: Vec<f64> = rows.iter().map(|r| r.median_ms).collect();
    let fit = fit_power_law(&sizes, &medians)?;
    Ok(ScaleReport {
        rows,
        fit,
        forwards,
        valid_actions: valid_total,
    })
}
