use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _, Result};
use serde::{Deserialize, Serialize};

use lagco_core::envs::Instance;
use lagco_core::eval::{splits, summarize, write_scale_csv, write_scores_csv, Split};
use lagco_core::gae::{train_gae, EncoderSet};
use lagco_core::latent::compactness;
use lagco_core::oracle::{generate_sized, sweep_all};
use lagco_core::parallel::{set_jobs, Exec};
use lagco_core::pipeline::{evaluate_split, repeat_seed, scale_study, train_split, Agent, AgentMeta, Context};

use crate::config::RunConfig;

fn exec(cfg: &RunConfig) -> Exec {
    match cfg.jobs {
        Some(1) => Exec::Sequential,
        Some(n) => {
            set_jobs(n);
            Exec::Parallel
        }
        None => Exec::Parallel,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, hint: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|_| anyhow!("missing {}: {hint}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn instance_files(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let dir = cfg.instances_dir();
    let hint = format!("run `lagco generate --env {}` first", cfg.env.name());
    let entries = fs::read_dir(&dir).map_err(|_| anyhow!("missing {}: {hint}", dir.display()))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("missing instance files in {}: {hint}", dir.display());
    }
    Ok(files)
}

/// Instances in file order; with `need_bounds`, every file must carry oracle bounds.
fn load_instances(cfg: &RunConfig, need_bounds: bool) -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    for path in instance_files(cfg)? {
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let inst = Instance::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
        if inst.kind != cfg.env {
            bail!("{} holds a {} instance, expected {}", path.display(), inst.kind.name(), cfg.env.name());
        }
        if need_bounds && inst.bounds.is_none() {
            bail!("missing bounds in {}: run `lagco sweep --env {}` first", path.display(), cfg.env.name());
        }
        out.push(inst);
    }
    Ok(out)
}

fn load_encoders(cfg: &RunConfig) -> Result<EncoderSet> {
    let path = cfg.encoders_path();
    if !path.exists() {
        bail!("missing {}: run `lagco pretrain --env {}` first", path.display(), cfg.env.name());
    }
    EncoderSet::load(&path).with_context(|| format!("loading {}", path.display()))
}

fn optional_encoders(cfg: &RunConfig) -> Result<Option<EncoderSet>> {
    if cfg.agent.uses_padding() {
        Ok(None)
    } else {
        load_encoders(cfg).map(Some)
    }
}

pub fn generate(cfg: &RunConfig) -> Result<()> {
    let dir = cfg.instances_dir();
    if dir.exists() {
        for old in instance_files(cfg).unwrap_or_default() {
            fs::remove_file(&old)?;
        }
    }
    fs::create_dir_all(&dir)?;
    let instances = generate_sized(cfg.env, cfg.size, cfg.count, cfg.seed);
    for inst in &instances {
        fs::write(dir.join(format!("{}.json", inst.id)), inst.to_json() + "\n")?;
    }
    cfg.write(&cfg.env_dir(), "generate")?;
    println!("wrote {} instances to {}", instances.len(), dir.display());
    Ok(())
}

#[derive(Serialize)]
struct BoundsRow<'a> {
    instance: &'a str,
    size: usize,
    worst: f64,
    best: f64,
}

pub fn sweep(cfg: &RunConfig) -> Result<()> {
    let mut instances = load_instances(cfg, false)?;
    sweep_all(&mut instances, &cfg.sweep, exec(cfg));
    let dir = cfg.instances_dir();
    let mut csv = csv::Writer::from_path(cfg.env_dir().join("bounds.csv"))?;
    for inst in &instances {
        fs::write(dir.join(format!("{}.json", inst.id)), inst.to_json() + "\n")?;
        let b = inst.bounds.as_ref().expect("swept");
        csv.serialize(BoundsRow {
            instance: &inst.id,
            size: inst.size,
            worst: b.worst,
            best: b.best,
        })?;
    }
    csv.flush()?;
    cfg.write(&cfg.env_dir(), "sweep")?;
    println!("swept {} instances", instances.len());
    Ok(())
}

pub fn pretrain(cfg: &RunConfig) -> Result<()> {
    let instances = load_instances(cfg, true)?;
    let (set, reports) = train_gae(&instances, &cfg.gae, exec(cfg))?;
    set.save(&cfg.encoders_path())?;
    write_json(&cfg.env_dir().join("gae_report.json"), &reports)?;
    cfg.write(&cfg.env_dir(), "pretrain")?;
    for r in &reports {
        println!(
            "{}: {} snapshots, loss {:.4} -> {:.4}",
            r.graph,
            r.snapshots,
            r.epoch_losses.first().copied().unwrap_or(f64::NAN),
            r.epoch_losses.last().copied().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct CompactnessRow<'a> {
    instance: &'a str,
    size: usize,
    actions: usize,
    collisions: usize,
    cmp: f64,
}

#[derive(Serialize)]
struct LatentSummary {
    k: usize,
    instances: usize,
    mean_cmp: f64,
}

pub fn latent(cfg: &RunConfig) -> Result<()> {
    let instances = load_instances(cfg, true)?;
    let enc = load_encoders(cfg)?;
    let refs: Vec<&Instance> = instances.iter().collect();
    let ctx = Context::new(lagco_core::agents::AgentKind::Projection, Some(enc), &refs, &refs)?;
    let dir = cfg.latent_dir();
    fs::create_dir_all(&dir)?;
    let rows = exec(cfg).map(&instances, |inst| -> Result<(usize, usize, f64)> {
        let prep = ctx.prepare(inst, Default::default())?;
        let space = prep.space.expect("projection context builds spaces");
        space.save(&dir.join(format!("{}.lagl", inst.id)))?;
        let cmp = compactness(space.embeddings(), cfg.k)?;
        Ok((space.len(), space.collisions(), cmp))
    });
    let mut csv = csv::Writer::from_path(dir.join("compactness.csv"))?;
    let mut total = 0.0;
    for (inst, row) in instances.iter().zip(rows) {
        let (actions, collisions, cmp) = row?;
        total += cmp;
        csv.serialize(CompactnessRow {
            instance: &inst.id,
            size: inst.size,
            actions,
            collisions,
            cmp,
        })?;
    }
    csv.flush()?;
    let summary = LatentSummary {
        k: cfg.k,
        instances: instances.len(),
        mean_cmp: total / instances.len() as f64,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    cfg.write(&dir, "latent")?;
    println!("cmp@{} = {:.4} over {} instances", cfg.k, summary.mean_cmp, summary.instances);
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct RepeatSummary {
    repeat: usize,
    seed: u64,
    train: Vec<String>,
    steps: usize,
    episodes: usize,
    updates: usize,
    final_mean_score: f64,
}

fn checkpoint_path(cfg: &RunConfig, repeat: usize) -> PathBuf {
    cfg.run_dir().join(format!("repeat_{repeat}.ckpt"))
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let instances = load_instances(cfg, true)?;
    let enc = optional_encoders(cfg)?;
    let sizes: Vec<usize> = instances.iter().map(|i| i.size).collect();
    let plan = splits(&sizes, &cfg.strategy, cfg.train.seed)?;
    let ex = exec(cfg);
    let results = ex.map(&plan, |split| -> Result<RepeatSummary> {
        let (ctx, agent, report) = train_split(cfg.agent, enc.as_ref(), &instances, split, &cfg.strategy, &cfg.train)?;
        let seed = repeat_seed(cfg.train.seed, split.repeat);
        let obs_dim = ctx.observe(&ctx.prepare(&instances[split.train[0]], Default::default())?)?.len();
        let meta = AgentMeta {
            agent: cfg.agent,
            env: cfg.env,
            obs_dim,
            seed,
            ppo: cfg.train.ppo,
            idqn: cfg.train.idqn,
            layout: ctx.layout.clone(),
        };
        agent.save(&checkpoint_path(cfg, split.repeat), &meta)?;
        let tail = &report.episode_scores[report.episode_scores.len().saturating_sub(100)..];
        Ok(RepeatSummary {
            repeat: split.repeat,
            seed,
            train: split.train.iter().map(|&i| instances[i].id.clone()).collect(),
            steps: report.steps,
            episodes: report.episode_scores.len(),
            updates: report.updates,
            final_mean_score: if tail.is_empty() { f64::NAN } else { tail.iter().sum::<f64>() / tail.len() as f64 },
        })
    });
    let summaries = results.into_iter().collect::<Result<Vec<_>>>()?;
    write_json(&cfg.run_dir().join("splits.json"), &plan)?;
    write_json(&cfg.run_dir().join("train_report.json"), &summaries)?;
    cfg.write(&cfg.run_dir(), "train")?;
    for s in &summaries {
        println!("repeat {} (seed {}): {} episodes, final mean score {:.3}", s.repeat, s.seed, s.episodes, s.final_mean_score);
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let instances = load_instances(cfg, true)?;
    let plan: Vec<Split> = read_json(
        &cfg.run_dir().join("splits.json"),
        &format!("run `lagco train --env {} --agent {} --strategy {}` first", cfg.env.name(), cfg.agent.name(), cfg.strategy.kind.letter()),
    )?;
    let enc = optional_encoders(cfg)?;
    let ex = exec(cfg);
    let mut records = Vec::new();
    for split in &plan {
        let path = checkpoint_path(cfg, split.repeat);
        if !path.exists() {
            bail!("missing {}: run `lagco train` first", path.display());
        }
        let (agent, meta) = Agent::load(&path).with_context(|| format!("loading {}", path.display()))?;
        if meta.agent != cfg.agent || meta.env != cfg.env {
            bail!("{} holds a {} agent for {}", path.display(), meta.agent.name(), meta.env.name());
        }
        let ctx = Context::from_layout(meta.env, meta.agent, enc.clone(), meta.layout.clone());
        records.extend(evaluate_split(&ctx, &agent, &instances, split, cfg.strategy.kind.letter(), meta.seed, cfg.train.test_episodes, ex)?);
    }
    let dir = cfg.run_dir();
    write_scores_csv(BufWriter::new(fs::File::create(dir.join("scores.csv"))?), &records)?;
    let summary = summarize(&records, 10_000, cfg.seed)?;
    write_json(&dir.join("summary.json"), &summary)?;
    cfg.write(&dir, "eval")?;
    for c in &summary {
        println!(
            "{} {} {}: test IQM {:.3} [{:.3}, {:.3}], train IQM {}, gap {}",
            c.env,
            c.agent,
            c.strategy,
            c.test_iqm,
            c.ci.0,
            c.ci.1,
            c.train_iqm.map_or("-".into(), |v| format!("{v:.3}")),
            c.gap.map_or("-".into(), |v| format!("{v:+.3}"))
        );
    }
    Ok(())
}

pub fn scale(cfg: &RunConfig) -> Result<()> {
    let enc = if cfg.agent.uses_padding() || !cfg.encoders_path().exists() {
        None
    } else {
        Some(load_encoders(cfg)?)
    };
    let report = scale_study(cfg.env, cfg.agent, &cfg.scale, enc.as_ref())?;
    let dir = cfg.scale_dir();
    fs::create_dir_all(&dir)?;
    write_scale_csv(BufWriter::new(fs::File::create(dir.join("scale.csv"))?), &report.rows)?;
    write_json(&dir.join("fit.json"), &report.fit)?;
    cfg.write(&dir, "scale")?;
    for r in &report.rows {
        println!("n={:>4}  median {:.4} ms  actions {:.1}  forwards/decision {:.1}", r.size, r.median_ms, r.mean_actions, r.forwards_per_decision);
    }
    println!("T(n) = {:.4e} * n^{:.3}  (R^2 {:.4})", report.fit.c, report.fit.alpha, report.fit.r2);
    Ok(())
}
