use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Agent, Context, PipelineError, Prepared};
use crate::agents::{AgentKind, IdqnConfig, NStepBuffer, PpoConfig, RolloutBuffer};
use crate::envs::{EnvOptions, Instance, StepMode};
use crate::eval::{splits, test_seeds, RunRecord, Split, Strategy, TEST_EPISODES, TRAIN_SEEDS};
use crate::gae::EncoderSet;
use crate::parallel::{split_seed, Exec};

/// Training budget and agent hyperparameters of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Environment steps per training run.
    pub steps: usize,
    pub ppo: PpoConfig,
    pub idqn: IdqnConfig,
    /// Running return normalization for the projection agent.
    pub projection_reward_norm: bool,
    /// Evaluation episodes per instance.
    pub test_episodes: usize,
    /// Master seed of fold assignment.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 50_000,
            ppo: PpoConfig::default(),
            idqn: IdqnConfig::default(),
            projection_reward_norm: true,
            test_episodes: TEST_EPISODES,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    /// Normalized score of every finished training episode.
    pub episode_scores: Vec<f64>,
    pub updates: usize,
}

fn training_opts() -> EnvOptions {
    EnvOptions {
        training: true,
        mode: StepMode::Lenient,
    }
}

fn eval_opts() -> EnvOptions {
    EnvOptions {
        training: false,
        mode: StepMode::Lenient,
    }
}

/// Valid action embeddings of the current state (iterative agent).
fn valid_embeddings(prep: &Prepared) -> Vec<Vec<f64>> {
    let Some(space) = &prep.space else { return Vec::new() };
    prep.env
        .valid_mask()
        .iter()
        .enumerate()
        .filter(|(_, &ok)| ok)
        .map(|(i, _)| space.embedding(i).to_vec())
        .collect()
}

/// Trains a fresh agent on `train`. With several instances the active one is
/// redrawn every `rotation_interval` episodes.
pub fn train_agent(ctx: &Context, train: &[&Instance], cfg: &TrainConfig, rotation_interval: usize, seed: u64) -> Result<(Agent, TrainReport), PipelineError> {
    cfg.ppo.validate()?;
    cfg.idqn.validate()?;
    let mut preps = train.iter().map(|i| ctx.prepare(i, training_opts())).collect::<Result<Vec<_>, _>>()?;
    if preps.is_empty() {
        return Err(PipelineError::Empty);
    }
    let mut ppo_cfg = cfg.ppo;
    if ctx.agent == AgentKind::Projection && cfg.projection_reward_norm {
        ppo_cfg.normalize_reward = true;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, 1));
    let mut cur = 0;
    preps[cur].env.reset(rng.random());
    let mut obs = ctx.observe(&preps[cur])?;
    let mut agent = Agent::new(ctx, obs.len(), ppo_cfg, cfg.idqn, seed);
    let mut report = TrainReport::default();
    let mut buf = RolloutBuffer::default();
    let mut nstep = NStepBuffer::new(cfg.idqn.n_step, cfg.idqn.gamma);
    for step in 1..=cfg.steps {
        let eps = cfg.idqn.epsilon(step - 1, cfg.steps);
        let d = agent.act(&preps[cur], &obs, &mut rng, false, eps)?;
        let taken = match &agent {
            Agent::Iterative(_) => preps[cur].space.as_ref().map(|s| s.embedding(d.index).to_vec()),
            _ => None,
        };
        let r = preps[cur].env.step(d.index)?;
        let done = r.done || preps[cur].env.is_done();
        let next_obs = if done { Vec::new() } else { ctx.observe(&preps[cur])? };
        match &mut agent {
            Agent::Projection(a) => {
                let reward = a.ppo.shape_reward(r.reward, done);
                push_ppo(&mut a.ppo, &mut buf, &mut report, obs, d, reward, done, &next_obs)?;
            }
            Agent::Discrete(a) => {
                let reward = a.ppo.shape_reward(r.reward, done);
                push_ppo(&mut a.ppo, &mut buf, &mut report, obs, d, reward, done, &next_obs)?;
            }
            Agent::Iterative(a) => {
                let next_actions = if done { Vec::new() } else { valid_embeddings(&preps[cur]) };
                for t in nstep.push(obs, taken.unwrap_or_default(), r.reward, &next_obs, &next_actions, done) {
                    a.remember(t);
                }
                if a.on_step(step)?.is_some() {
                    report.updates += 1;
                }
            }
        }
        report.steps = step;
        if done {
            report.episode_scores.push(preps[cur].env.score()?);
            let episodes = report.episode_scores.len();
            if preps.len() > 1 && episodes % rotation_interval.max(1) == 0 {
                cur = rng.random_range(0..preps.len());
            }
            preps[cur].env.reset(rng.random());
            obs = ctx.observe(&preps[cur])?;
        } else {
            obs = next_obs;
        }
    }
    Ok((agent, report))
}

#[allow(clippy::too_many_arguments)]
fn push_ppo(
    ppo: &mut crate::agents::Ppo,
    buf: &mut RolloutBuffer,
    report: &mut TrainReport,
    obs: Vec<f64>,
    d: super::Decision,
    reward: f64,
    done: bool,
    next_obs: &[f64],
) -> Result<(), PipelineError> {
    let sample = d.sample.expect("ppo agents return samples");
    buf.push(obs, sample, reward, done, d.mask);
    if buf.len() >= ppo.cfg.rollout {
        buf.last_value = if done { 0.0 } else { ppo.value(next_obs)? };
        ppo.update(buf)?;
        buf.clear();
        report.updates += 1;
    }
    Ok(())
}

/// Deterministic-policy episodes on one instance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalOutcome {
    pub scores: Vec<f64>,
    /// Wall-clock of every `act` call, in milliseconds.
    pub times_ms: Vec<f64>,
    /// Number of valid actions at every decision.
    pub valid_actions: Vec<usize>,
}

/// Runs one greedy episode per seed and times action selection only.
pub fn evaluate(ctx: &Context, agent: &Agent, instance: &Instance, seeds: &[u64]) -> Result<EvalOutcome, PipelineError> {
    let mut prep = ctx.prepare(instance, eval_opts())?;
    let mut out = EvalOutcome::default();
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prep.env.reset(seed);
        while !prep.env.is_done() {
            let obs = ctx.observe(&prep)?;
            out.valid_actions.push(prep.env.valid_mask().iter().filter(|&&v| v).count());
            let t0 = Instant::now();
            let d = agent.act(&prep, &obs, &mut rng, true, 0.0)?;
            out.times_ms.push(t0.elapsed().as_secs_f64() * 1e3);
            prep.env.step(d.index)?;
        }
        out.scores.push(prep.env.score()?);
    }
    Ok(out)
}

/// Evaluates an agent on every instance of a split.
pub fn evaluate_split(ctx: &Context, agent: &Agent, instances: &[Instance], split: &Split, strategy: &str, seed: u64, episodes: usize, exec: Exec) -> Result<Vec<RunRecord>, PipelineError> {
    let seeds = test_seeds(episodes);
    let jobs: Vec<(usize, bool)> = split.train.iter().map(|&i| (i, true)).chain(split.test.iter().map(|&i| (i, false))).collect();
    exec.map(&jobs, |&(i, train)| {
        let inst = &instances[i];
        let o = evaluate(ctx, agent, inst, &seeds)?;
        Ok(RunRecord::new(ctx.kind.name(), ctx.agent.name(), strategy, seed, &inst.id, train, o.scores, o.times_ms))
    })
    .into_iter()
    .collect()
}

/// Training seed of repeat `r`.
pub fn repeat_seed(master: u64, r: usize) -> u64 {
    TRAIN_SEEDS.get(r).copied().unwrap_or_else(|| split_seed(master, r as u64))
}

/// Builds the context of a split and trains one agent on it.
pub fn train_split(
    agent: AgentKind,
    encoders: Option<&EncoderSet>,
    instances: &[Instance],
    split: &Split,
    strategy: &Strategy,
    cfg: &TrainConfig,
) -> Result<(Context, Agent, TrainReport), PipelineError> {
    let train: Vec<&Instance> = split.train.iter().map(|&i| &instances[i]).collect();
    let all: Vec<&Instance> = instances.iter().collect();
    let ctx = Context::new(agent, encoders.cloned(), &train, &all)?;
    let (a, report) = train_agent(&ctx, &train, cfg, strategy.rotation_interval, repeat_seed(cfg.seed, split.repeat))?;
    Ok((ctx, a, report))
}

/// Full protocol for one agent and strategy: splits, training, and
/// evaluation on the training and held-out instances of every repeat.
pub fn run_protocol(agent: AgentKind, encoders: Option<&EncoderSet>, instances: &[Instance], strategy: &Strategy, cfg: &TrainConfig, exec: Exec) -> Result<Vec<RunRecord>, PipelineError> {
    let sizes: Vec<usize> = instances.iter().map(|i| i.size).collect();
    let plan = splits(&sizes, strategy, cfg.seed)?;
    let runs = exec.map(&plan, |split| -> Result<Vec<RunRecord>, PipelineError> {
        let (ctx, a, _) = train_split(agent, encoders, instances, split, strategy, cfg)?;
        evaluate_split(&ctx, &a, instances, split, strategy.kind.letter(), repeat_seed(cfg.seed, split.repeat), cfg.test_episodes, exec)
    });
    let mut out = Vec::new();
    for r in runs {
        out.extend(r?);
    }
    Ok(out)
}
