use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::agents::{IdqnConfig, PpoConfig};
use crate::eval::{Strategy, StrategyKind};
use crate::oracle::{generate_sized, sweep_all, SweepConfig};
use crate::parallel::Exec;

fn instances(kind: EnvKind, size: usize, n: usize) -> Vec<Instance> {
    let mut v = generate_sized(kind, Some(size), n, 7);
    sweep_all(&mut v, &SweepConfig { sweeps: Some(4), ..SweepConfig::default() }, Exec::Sequential);
    v
}

fn small_cfg() -> TrainConfig {
    let mut cfg = TrainConfig { steps: 300, test_episodes: 2, ..TrainConfig::default() };
    cfg.ppo.rollout = 128;
    cfg.ppo.epochs = 2;
    cfg.idqn.learning_starts = 50;
    cfg.idqn.target_update_interval = 50;
    cfg
}

fn ctx_for(agent: AgentKind, insts: &[Instance]) -> Context {
    let enc = random_encoders(&insts[0], EncoderConfig::default(), 3);
    let refs: Vec<&Instance> = insts.iter().collect();
    Context::new(agent, Some(enc), &refs[..1], &refs).unwrap()
}

#[test]
fn latent_agents_need_encoders() {
    let insts = instances(EnvKind::Tsp, 6, 1);
    let r = Context::new(AgentKind::Projection, None, &[&insts[0]], &[&insts[0]]);
    assert!(matches!(r, Err(PipelineError::NeedsEncoders(_))));
    assert!(Context::new(AgentKind::PDiscrete, None, &[&insts[0]], &[&insts[0]]).is_ok());
}

#[test]
fn observation_width_is_constant_across_sizes() {
    let mut insts = instances(EnvKind::Tsp, 6, 1);
    insts.extend(instances(EnvKind::Tsp, 9, 1));
    for agent in AgentKind::ALL {
        let ctx = ctx_for(agent, &insts);
        let a = ctx.observe(&ctx.prepare(&insts[0], EnvOptions::default()).unwrap()).unwrap();
        let b = ctx.observe(&ctx.prepare(&insts[1], EnvOptions::default()).unwrap()).unwrap();
        assert_eq!(a.len(), b.len(), "{}", agent.name());
    }
}

#[test]
fn training_is_reproducible_and_checkpoints_round_trip() {
    let insts = instances(EnvKind::Tsp, 6, 2);
    let dir = tempfile::tempdir().unwrap();
    for agent in AgentKind::ALL {
        let ctx = ctx_for(agent, &insts);
        let cfg = small_cfg();
        let (a, r1) = train_agent(&ctx, &[&insts[0]], &cfg, 50, 42).unwrap();
        let (_, r2) = train_agent(&ctx, &[&insts[0]], &cfg, 50, 42).unwrap();
        assert_eq!(r1, r2, "{}", agent.name());
        assert!(r1.updates > 0, "{}", agent.name());
        let seeds = [42, 100];
        let before = evaluate(&ctx, &a, &insts[1], &seeds).unwrap();
        let path = dir.path().join(format!("{}.ckpt", agent.name()));
        let meta = AgentMeta {
            agent,
            env: ctx.kind,
            obs_dim: ctx.observe(&ctx.prepare(&insts[0], EnvOptions::default()).unwrap()).unwrap().len(),
            seed: 42,
            ppo: cfg.ppo,
            idqn: cfg.idqn,
            layout: ctx.layout.clone(),
        };
        a.save(&path, &meta).unwrap();
        let (b, m) = Agent::load(&path).unwrap();
        assert_eq!(m, meta);
        let after = evaluate(&ctx, &b, &insts[1], &seeds).unwrap();
        assert_eq!(before.scores, after.scores, "{}", agent.name());
    }
}

#[test]
fn latent_agents_only_take_valid_actions() {
    let insts = instances(EnvKind::MinVertex, 8, 1);
    for agent in [AgentKind::Projection, AgentKind::Iterative, AgentKind::GDiscreteMasked] {
        let ctx = ctx_for(agent, &insts);
        let a = Agent::new(&ctx, ctx.observe(&ctx.prepare(&insts[0], EnvOptions::default()).unwrap()).unwrap().len(), PpoConfig::default(), IdqnConfig::default(), 1);
        let mut prep = ctx.prepare(&insts[0], EnvOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for ep in 0..3 {
            prep.env.reset(ep);
            while !prep.env.is_done() {
                let obs = ctx.observe(&prep).unwrap();
                let d = a.act(&prep, &obs, &mut rng, false, 0.5).unwrap();
                assert!(prep.env.valid_mask()[d.index]);
                // strict mode: an invalid index would be an error here
                prep.env.step(d.index).unwrap();
            }
        }
    }
}

#[test]
fn forward_counts_per_decision() {
    let insts = instances(EnvKind::Placement, 5, 1);
    for (agent, per_valid) in [(AgentKind::Iterative, true), (AgentKind::Projection, false)] {
        let ctx = ctx_for(agent, &insts);
        let probe = ctx.prepare(&insts[0], EnvOptions::default()).unwrap();
        let a = Agent::new(&ctx, ctx.observe(&probe).unwrap().len(), PpoConfig::default(), IdqnConfig::default(), 1);
        let o = evaluate(&ctx, &a, &insts[0], &[42]).unwrap();
        let expected: u64 = if per_valid { o.valid_actions.iter().sum::<usize>() as u64 } else { o.valid_actions.len() as u64 };
        assert_eq!(a.forwards(), expected);
    }
}

#[test]
fn protocol_records_cover_every_instance() {
    let insts = instances(EnvKind::Tsp, 6, 6);
    let enc = random_encoders(&insts[0], EncoderConfig::default(), 3);
    let mut strategy = Strategy::new(StrategyKind::Smallest);
    strategy.repeats = 2;
    let cfg = small_cfg();
    let recs = run_protocol(AgentKind::PDiscreteMasked, Some(&enc), &insts, &strategy, &cfg, Exec::Parallel).unwrap();
    assert_eq!(recs.len(), 2 * insts.len());
    for r in &recs {
        assert_eq!(r.scores.len(), cfg.test_episodes);
        assert_eq!(r.best, r.scores.iter().cloned().fold(f64::MIN, f64::max));
    }
    let seq = run_protocol(AgentKind::PDiscreteMasked, Some(&enc), &insts, &strategy, &cfg, Exec::Sequential).unwrap();
    assert_eq!(recs.iter().map(|r| (&r.instance, r.train, &r.scores)).collect::<Vec<_>>(), seq.iter().map(|r| (&r.instance, r.train, &r.scores)).collect::<Vec<_>>());
}
