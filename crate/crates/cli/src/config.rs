use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use lagco_core::agents::AgentKind;
use lagco_core::envs::EnvKind;
use lagco_core::eval::{Strategy, StrategyKind};
use lagco_core::gae::GaeTrainConfig;
use lagco_core::oracle::SweepConfig;
use lagco_core::pipeline::{ScaleConfig, TrainConfig};

pub const DATA_DIR_VAR: &str = "LAGCO_DATA_DIR";

/// Flags shared by every subcommand. Each one overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Benchmark: tsp, minvertex, maxcut, placement, cyberpath, ospf, traffic
    #[arg(long)]
    pub env: Option<String>,
    /// projection, iterative, p-discrete, p-discrete-masked, g-discrete, g-discrete-masked
    #[arg(long)]
    pub agent: Option<String>,
    /// Training strategy: S, M, L or V
    #[arg(long)]
    pub strategy: Option<String>,
    /// Master seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON RunConfig to start from
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Data directory (default: $LAGCO_DATA_DIR, then ./data)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores)
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Size grid lo:hi:step for `scale`
    #[arg(long)]
    pub sizes: Option<String>,
    /// Oracle sweeps per instance
    #[arg(long)]
    pub sweeps: Option<usize>,
    /// Evaluation episodes per instance (`eval`, `scale`)
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Number of instances (`generate`)
    #[arg(long)]
    pub count: Option<usize>,
    /// Fixed instance size (`generate`)
    #[arg(long)]
    pub size: Option<usize>,
    /// Environment steps per training run (`train`)
    #[arg(long)]
    pub steps: Option<usize>,
    /// Neighbourhood size of cmp@k (`latent`)
    #[arg(long)]
    pub k: Option<usize>,
}

/// Everything a command needs; written next to its outputs so that a run can
/// be repeated from the file alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub env: EnvKind,
    pub agent: AgentKind,
    pub strategy: Strategy,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub data_dir: PathBuf,
    pub count: usize,
    pub size: Option<usize>,
    pub k: usize,
    pub sweep: SweepConfig,
    pub gae: GaeTrainConfig,
    pub train: TrainConfig,
    pub scale: ScaleConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::Tsp,
            agent: AgentKind::Projection,
            strategy: Strategy::new(StrategyKind::Smallest),
            seed: 42,
            jobs: None,
            data_dir: PathBuf::from("data"),
            count: 101,
            size: None,
            k: 5,
            sweep: SweepConfig::default(),
            gae: GaeTrainConfig::default(),
            train: TrainConfig::default(),
            scale: ScaleConfig::default(),
        }
    }
}

/// Parses `lo:hi:step` (inclusive) or a comma list.
pub fn parse_sizes(s: &str) -> Result<Vec<usize>> {
    let parts: Vec<&str> = s.split(':').collect();
    let sizes: Vec<usize> = match parts.as_slice() {
        [lo, hi, step] => {
            let (lo, hi, step): (usize, usize, usize) = (lo.trim().parse()?, hi.trim().parse()?, step.trim().parse()?);
            if step == 0 || lo > hi {
                bail!("bad size grid {s}");
            }
            (lo..=hi).step_by(step).collect()
        }
        [list] => list.split(',').map(|x| x.trim().parse()).collect::<Result<_, _>>()?,
        _ => bail!("bad size grid {s}, expected lo:hi:step"),
    };
    if sizes.is_empty() {
        bail!("empty size grid {s}");
    }
    Ok(sizes)
}

impl RunConfig {
    /// Config file (if any), then flags, then the data-dir fallback chain.
    pub fn resolve(flags: &Flags) -> Result<Self> {
        let mut cfg = match &flags.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => {
                let mut c = RunConfig::default();
                if let Ok(dir) = std::env::var(DATA_DIR_VAR) {
                    c.data_dir = PathBuf::from(dir);
                }
                c
            }
        };
        if let Some(e) = &flags.env {
            cfg.env = e.parse().map_err(|_| anyhow::anyhow!("unknown env {e}"))?;
        }
        if let Some(a) = &flags.agent {
            cfg.agent = AgentKind::parse(a).ok_or_else(|| anyhow::anyhow!("unknown agent {a}"))?;
        }
        if let Some(s) = &flags.strategy {
            cfg.strategy.kind = StrategyKind::parse(s).ok_or_else(|| anyhow::anyhow!("unknown strategy {s}"))?;
        }
        if let Some(seed) = flags.seed {
            cfg.seed = seed;
            cfg.sweep.seed = seed;
            cfg.gae.seed = seed;
            cfg.train.seed = seed;
            cfg.scale.seed = seed;
        }
        if let Some(dir) = &flags.out {
            cfg.data_dir = dir.clone();
        }
        if flags.jobs.is_some() {
            cfg.jobs = flags.jobs;
        }
        if let Some(s) = &flags.sizes {
            cfg.scale.sizes = parse_sizes(s)?;
        }
        if let Some(s) = flags.sweeps {
            cfg.sweep.sweeps = Some(s);
            cfg.scale.sweeps = s;
        }
        if let Some(e) = flags.episodes {
            cfg.train.test_episodes = e;
            cfg.scale.episodes = e;
        }
        if let Some(c) = flags.count {
            cfg.count = c;
        }
        if flags.size.is_some() {
            cfg.size = flags.size;
        }
        if let Some(s) = flags.steps {
            cfg.train.steps = s;
        }
        if let Some(k) = flags.k {
            cfg.k = k;
        }
        Ok(cfg)
    }

    /// Per-environment directory under the data root.
    pub fn env_dir(&self) -> PathBuf {
        self.data_dir.join(self.env.name())
    }

    pub fn instances_dir(&self) -> PathBuf {
        self.env_dir().join("instances")
    }

    pub fn encoders_path(&self) -> PathBuf {
        self.env_dir().join("encoders.ckpt")
    }

    pub fn latent_dir(&self) -> PathBuf {
        self.env_dir().join("latent")
    }

    pub fn run_dir(&self) -> PathBuf {
        self.env_dir().join("runs").join(self.agent.name()).join(self.strategy.kind.letter())
    }

    pub fn scale_dir(&self) -> PathBuf {
        self.env_dir().join("scale").join(self.agent.name())
    }

    /// Writes `<dir>/<command>.config.json`.
    pub fn write(&self, dir: &Path, command: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{command}.config.json"));
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_grids() {
        assert_eq!(parse_sizes("10:50:10").unwrap(), vec![10, 20, 30, 40, 50]);
        assert_eq!(parse_sizes("5,7").unwrap(), vec![5, 7]);
        assert!(parse_sizes("10:5:1").is_err());
        assert!(parse_sizes("1:2").is_err());
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let mut base = RunConfig::default();
        base.count = 7;
        base.seed = 1;
        std::fs::write(&path, serde_json::to_string(&base).unwrap()).unwrap();
        let flags = Flags {
            config: Some(path),
            seed: Some(9),
            env: Some("maxcut".into()),
            ..Flags::default()
        };
        let cfg = RunConfig::resolve(&flags).unwrap();
        assert_eq!(cfg.count, 7);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.env, EnvKind::MaxCut);
    }

    #[test]
    fn config_round_trips() {
        let cfg = RunConfig::default();
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
