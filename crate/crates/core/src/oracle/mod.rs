//! Scenario generation and heuristic sweeps producing empirical score bounds.

pub mod cover;
pub mod elite;
pub mod placement;
pub mod tour;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::cyber::{cyber_bounds, CyberInstance, CyberParams};
use crate::envs::maxcut::{MaxCutInstance, MaxCutParams};
use crate::envs::minvertex::{MinVertexInstance, MinVertexParams};
use crate::envs::ospf::{OspfInstance, OspfParams};
use crate::envs::placement::{PlacementInstance, PlacementParams};
use crate::envs::traffic::{TrafficInstance, TrafficParams};
use crate::envs::tsp::{TspInstance, TspParams};
use crate::envs::{EnvKind, Instance, InstanceData, ScoreBounds, Solution};
use crate::parallel::{split_seed, Exec};
use elite::EliteConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Overrides the per-benchmark default when set.
    pub sweeps: Option<usize>,
    pub top_k: usize,
    pub elite_pool: usize,
    pub restart_prob: f64,
    pub perturb_frac: f64,
    pub neighbors: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sweeps: None,
            top_k: 3,
            elite_pool: 5,
            restart_prob: 0.5,
            perturb_frac: 0.1,
            neighbors: 8,
            batch: 32,
            seed: 42,
        }
    }
}

pub fn default_sweeps(kind: EnvKind) -> usize {
    match kind {
        EnvKind::Tsp | EnvKind::MinVertex => 10000,
        EnvKind::Placement => 5000,
        EnvKind::MaxCut | EnvKind::Ospf | EnvKind::Traffic => 2000,
        EnvKind::CyberPath => 0,
    }
}

impl SweepConfig {
    pub fn sweeps_for(&self, kind: EnvKind) -> usize {
        self.sweeps.unwrap_or_else(|| default_sweeps(kind)).max(1)
    }
}

/// Samples instance data for `kind`; `size` overrides the main dimension.
pub fn sample_instance(kind: EnvKind, size: Option<usize>, rng: &mut ChaCha8Rng) -> InstanceData {
    match kind {
        EnvKind::Tsp => {
            let mut p = TspParams::sample(rng);
            p.num_cities = size.unwrap_or(p.num_cities);
            InstanceData::Tsp(TspInstance::generate(p, rng))
        }
        EnvKind::MinVertex => {
            let mut p = MinVertexParams::sample(rng);
            p.num_nodes = size.unwrap_or(p.num_nodes);
            InstanceData::MinVertex(MinVertexInstance::generate(p, rng))
        }
        EnvKind::MaxCut => {
            let mut p = MaxCutParams::sample(rng);
            p.num_nodes = size.unwrap_or(p.num_nodes);
            InstanceData::MaxCut(MaxCutInstance::generate(p, rng))
        }
        EnvKind::Placement => {
            let mut p = PlacementParams::sample(rng);
            if let Some(n) = size {
                p.n_vms = n;
                p.n_pms = n;
            }
            InstanceData::Placement(PlacementInstance::generate(p, rng))
        }
        EnvKind::CyberPath => {
            let mut p = CyberParams::sample(rng);
            p.num_nodes = size.unwrap_or(p.num_nodes);
            InstanceData::CyberPath(CyberInstance::generate(p, rng))
        }
        EnvKind::Ospf => {
            let mut p = OspfParams::sample(rng);
            p.network.num_nodes = size.unwrap_or(p.network.num_nodes);
            InstanceData::Ospf(OspfInstance::generate(p, rng))
        }
        EnvKind::Traffic => {
            let mut p = TrafficParams::sample(rng);
            p.network.num_nodes = size.unwrap_or(p.network.num_nodes);
            InstanceData::Traffic(TrafficInstance::generate(p, rng))
        }
    }
}

/// `count` instances; instance `i` draws from the stream `split_seed(master_seed, i)`.
pub fn generate_scenarios(kind: EnvKind, count: usize, master_seed: u64) -> Vec<Instance> {
    generate_sized(kind, None, count, master_seed)
}

pub fn generate_sized(kind: EnvKind, size: Option<usize>, count: usize, master_seed: u64) -> Vec<Instance> {
    (0..count)
        .map(|i| {
            let seed = split_seed(master_seed, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = sample_instance(kind, size, &mut rng);
            Instance::new(format!("{}-{:03}", kind.name(), i), seed, data)
        })
        .collect()
}

/// Tracks the lowest and highest raw objective with their solutions.
struct Extremes<S> {
    lo: Option<(f64, S)>,
    hi: Option<(f64, S)>,
}

impl<S: Clone> Extremes<S> {
    fn new() -> Self {
        Self { lo: None, hi: None }
    }

    fn offer(&mut self, v: f64, s: &S) {
        if self.lo.as_ref().is_none_or(|x| v < x.0) {
            self.lo = Some((v, s.clone()));
        }
        if self.hi.as_ref().is_none_or(|x| v > x.0) {
            self.hi = Some((v, s.clone()));
        }
    }
}

fn sweep_rng(cfg: &SweepConfig, s: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(split_seed(cfg.seed, s as u64))
}

fn elite_cfg(cfg: &SweepConfig, sweeps: usize) -> EliteConfig {
    EliteConfig {
        sweeps,
        pool: cfg.elite_pool,
        restart_prob: cfg.restart_prob,
        perturb_frac: cfg.perturb_frac,
        neighbors: cfg.neighbors,
        seed: cfg.seed,
    }
}

/// Empirical bounds for one instance. Sweep `s` uses its own stream derived
/// from `cfg.seed`, so running more sweeps only adds candidates.
pub fn sweep_bounds(instance: &Instance, cfg: &SweepConfig) -> ScoreBounds {
    let sweeps = cfg.sweeps_for(instance.kind);
    let mk = |worst: f64, best: f64, ws: Solution, bs: Solution| ScoreBounds {
        worst,
        best,
        sweeps,
        seed: cfg.seed,
        worst_solution: ws,
        best_solution: bs,
    };
    match &instance.data {
        InstanceData::Tsp(d) => {
            let mut ex = Extremes::new();
            for s in 0..sweeps {
                let mut rng = sweep_rng(cfg, s);
                let (lo, hi) = tour::sweep(d, cfg.batch, &mut rng);
                ex.offer(lo.0, &lo.1);
                ex.offer(hi.0, &hi.1);
            }
            let (lo, hi) = (ex.lo.expect("at least one sweep"), ex.hi.expect("at least one sweep"));
            mk(hi.0, lo.0, Solution::Tour(hi.1), Solution::Tour(lo.1))
        }
        InstanceData::MinVertex(d) => {
            let mut ex = Extremes::new();
            for s in 0..sweeps {
                let mut rng = sweep_rng(cfg, s);
                let sel = cover::greedy_cover(d, cfg.top_k, &mut rng);
                ex.offer(sel.iter().filter(|x| **x).count() as f64, &sel);
            }
            let lo = ex.lo.expect("at least one sweep");
            let nodes = |sel: &[bool]| (0..sel.len()).filter(|&v| sel[v]).collect();
            mk(d.num_nodes as f64, lo.0, Solution::Cover((0..d.num_nodes).collect()), Solution::Cover(nodes(&lo.1)))
        }
        InstanceData::MaxCut(d) => {
            let mut ex = Extremes::new();
            for s in 0..sweeps {
                let mut rng = sweep_rng(cfg, s);
                let side = cover::local_cut(d, &mut rng);
                ex.offer(d.cut_value(&side), &side);
            }
            let hi = ex.hi.expect("at least one sweep");
            mk(0.0, hi.0, Solution::Partition(vec![false; d.num_nodes]), Solution::Partition(hi.1))
        }
        InstanceData::Placement(d) => {
            let mut ex = Extremes::new();
            for s in 0..sweeps {
                let mut rng = sweep_rng(cfg, s);
                let (lo, hi) = placement::sweep(d, &mut rng);
                ex.offer(lo.0, &lo.1);
                ex.offer(hi.0, &hi.1);
            }
            let (lo, hi) = (ex.lo.expect("at least one sweep"), ex.hi.expect("at least one sweep"));
            mk(hi.0, lo.0, Solution::Allocation(hi.1), Solution::Allocation(lo.1))
        }
        InstanceData::CyberPath(d) => {
            let mut b = cyber_bounds(d);
            b.seed = cfg.seed;
            b
        }
        InstanceData::Ospf(d) => {
            let min = d.params.min_weight;
            let domain = vec![(d.params.max_weight - min + 1) as usize; d.network.links.len()];
            let to_w = |x: &[usize]| x.iter().map(|&v| min + v as i64).collect::<Vec<i64>>();
            let r = elite::search(&domain, &elite_cfg(cfg, sweeps), |x| d.max_utilization(&to_w(x)));
            mk(r.worst.0, r.best.0, Solution::Weights(to_w(&r.worst.1)), Solution::Weights(to_w(&r.best.1)))
        }
        InstanceData::Traffic(d) => {
            let paths = d.candidate_paths();
            let domain: Vec<usize> = paths.iter().map(Vec::len).collect();
            let r = elite::search(&domain, &elite_cfg(cfg, sweeps), |x| d.max_utilization(&paths, x));
            mk(r.worst.0, r.best.0, Solution::Paths(r.worst.1), Solution::Paths(r.best.1))
        }
    }
}

/// Fills in bounds for every instance, one instance per worker.
pub fn sweep_all(instances: &mut [Instance], cfg: &SweepConfig, exec: Exec) {
    let bounds = exec.map(instances, |inst| sweep_bounds(inst, cfg));
    for (inst, b) in instances.iter_mut().zip(bounds) {
        inst.bounds = Some(b);
    }
}
