//! Traffic engineering: move demands between short candidate paths to lower the maximum link utilization.

use std::collections::{HashMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ospf::ordered_index;
use super::routing::{path_links, simple_paths, Network, NetworkParams};
use super::{check_padding, tri_index, Action, Component, EnvError, EnvKind, EnvOptions, Environment, Episode, ScoreBounds, Solution, StepResult};
use crate::graph::GraphBundle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficParams {
    pub network: NetworkParams,
    /// Maximum number of nodes on a candidate path.
    pub max_path_len: usize,
}

impl TrafficParams {
    pub fn sample(rng: &mut impl Rng) -> Self {
        Self {
            network: NetworkParams {
                num_nodes: rng.random_range(10..=25),
                communication_edge_ratio: rng.random_range(0.1..=0.2),
                non_zero_traffic_ratio: rng.random_range(0.1..=0.2),
                min_capacity: rng.random_range(10..=100),
                max_capacity: rng.random_range(500..=1000),
                max_traffic: rng.random_range(25..=50),
            },
            max_path_len: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficInstance {
    pub params: TrafficParams,
    pub num_nodes: usize,
    pub network: Network,
}

fn hops_from(adj: &[Vec<(usize, usize)>], s: usize) -> Vec<usize> {
    let mut d = vec![usize::MAX; adj.len()];
    d[s] = 0;
    let mut q = VecDeque::from([s]);
    while let Some(u) = q.pop_front() {
        for &(v, _) in &adj[u] {
            if d[v] == usize::MAX {
                d[v] = d[u] + 1;
                q.push_back(v);
            }
        }
    }
    d
}

impl TrafficInstance {
    /// Demands are drawn only between pairs joined by a path within the length limit.
    pub fn generate(params: TrafficParams, rng: &mut impl Rng) -> Self {
        let n = params.network.num_nodes;
        let (links, capacity) = Network::generate_topology(&params.network, rng);
        let mut net = Network {
            num_nodes: n,
            links,
            capacity,
            demands: Vec::new(),
        };
        let adj = net.adjacency();
        let hops: Vec<Vec<usize>> = (0..n).map(|s| hops_from(&adj, s)).collect();
        let limit = params.max_path_len.saturating_sub(1);
        net.demands = Network::generate_demands(&params.network, rng, |s, t| hops[s][t] <= limit);
        Self {
            params,
            num_nodes: n,
            network: net,
        }
    }

    /// Candidate paths per demand.
    pub fn candidate_paths(&self) -> Vec<Vec<Vec<usize>>> {
        let adj = self.network.adjacency();
        self.network
            .demands
            .iter()
            .map(|d| simple_paths(&adj, d.src, d.dst, self.params.max_path_len))
            .collect()
    }

    pub fn loads(&self, paths: &[Vec<Vec<usize>>], assignment: &[usize]) -> Vec<f64> {
        let index = self.network.link_index();
        let mut loads = vec![0.0; self.network.links.len()];
        for (d, &p) in assignment.iter().enumerate() {
            for l in path_links(&index, &paths[d][p]) {
                loads[l] += self.network.demands[d].volume;
            }
        }
        loads
    }

    pub fn max_utilization(&self, paths: &[Vec<Vec<usize>>], assignment: &[usize]) -> f64 {
        self.network.max_utilization(&self.loads(paths, assignment))
    }

    pub fn assignment_valid(&self, paths: &[Vec<Vec<usize>>], assignment: &[usize]) -> bool {
        assignment.len() == paths.len() && assignment.iter().zip(paths).all(|(&a, p)| a < p.len())
    }
}

pub fn base_graphs(d: &TrafficInstance) -> GraphBundle {
    let paths = d.candidate_paths();
    let loads = d.loads(&paths, &vec![0; paths.len()]);
    bundle(d, &loads)
}

fn bundle(d: &TrafficInstance, loads: &[f64]) -> GraphBundle {
    GraphBundle::new([
        ("comm_G".to_string(), d.network.comm_graph(loads, None)),
        ("traffic_G".to_string(), d.network.traffic_graph()),
    ])
    .expect("two graphs")
}

#[derive(Debug, Clone)]
pub struct TrafficEnv {
    data: TrafficInstance,
    bounds: ScoreBounds,
    paths: Vec<Vec<Vec<usize>>>,
    path_link_ids: Vec<Vec<Vec<usize>>>,
    slots: Vec<(usize, usize)>,
    actions: Vec<Action>,
    ep: Episode,
    initial: Vec<usize>,
    assignment: Vec<usize>,
    loads: Vec<f64>,
    util: f64,
    value: f64,
}

impl TrafficEnv {
    pub fn new(data: TrafficInstance, bounds: ScoreBounds, opts: EnvOptions) -> Result<Self, EnvError> {
        let paths = data.candidate_paths();
        if paths.iter().any(Vec::is_empty) {
            return Err(EnvError::BadInstance("a demand has no candidate path".into()));
        }
        let initial = match &bounds.worst_solution {
            Solution::Paths(a) if data.assignment_valid(&paths, a) => a.clone(),
            _ => return Err(EnvError::BadInstance("traffic bounds lack a valid worst assignment".into())),
        };
        let index: HashMap<(usize, usize), usize> = data.network.link_index();
        let path_link_ids = paths
            .iter()
            .map(|ps| ps.iter().map(|p| path_links(&index, p)).collect())
            .collect();
        let mut slots = Vec::new();
        let mut actions = Vec::new();
        for (d, ps) in paths.iter().enumerate() {
            let dem = data.network.demands[d];
            for (k, p) in ps.iter().enumerate() {
                slots.push((d, k));
                actions.push(Action::new(vec![Component::Edge(dem.src, dem.dst), Component::Path(p.clone())]));
            }
        }
        let mut env = Self {
            ep: Episode::new(data.network.demands.len() * EnvKind::Traffic.episode_coef(), opts),
            assignment: initial.clone(),
            initial,
            loads: Vec::new(),
            util: 0.0,
            value: 0.0,
            paths,
            path_link_ids,
            slots,
            actions,
            data,
            bounds,
        };
        env.reset(0);
        Ok(env)
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn loads(&self) -> &[f64] {
        &self.loads
    }

    pub fn paths(&self) -> &[Vec<Vec<usize>>] {
        &self.paths
    }

    fn recompute(&mut self) {
        self.loads = self.data.loads(&self.paths, &self.assignment);
        self.util = self.data.network.max_utilization(&self.loads);
        self.value = self.bounds.normalize(self.util);
    }

    /// A move is feasible when the new path differs and every link on it stays within capacity.
    fn feasible(&self, index: usize) -> bool {
        let (d, k) = self.slots[index];
        let cur = self.assignment[d];
        if k == cur {
            return false;
        }
        let vol = self.data.network.demands[d].volume;
        let old = &self.path_link_ids[d][cur];
        self.path_link_ids[d][k].iter().all(|&l| {
            let base = if old.contains(&l) { self.loads[l] - vol } else { self.loads[l] };
            base + vol <= self.data.network.capacity[l]
        })
    }
}

impl Environment for TrafficEnv {
    fn kind(&self) -> EnvKind {
        EnvKind::Traffic
    }

    fn size(&self) -> usize {
        self.data.network.demands.len()
    }

    fn bounds(&self) -> &ScoreBounds {
        &self.bounds
    }

    fn reset(&mut self, _seed: u64) {
        self.ep.restart();
        self.assignment = self.initial.clone();
        self.recompute();
    }

    fn actions(&self) -> &[Action] {
        &self.actions
    }

    fn valid_mask(&self) -> Vec<bool> {
        (0..self.actions.len()).map(|i| !self.ep.done && self.feasible(i)).collect()
    }

    fn step(&mut self, index: usize) -> Result<StepResult, EnvError> {
        let in_table = self.ep.begin_step(index, self.actions.len())?;
        if !in_table || !self.feasible(index) {
            return self.ep.reject(index, "path is current or over capacity", false);
        }
        let prev = self.value;
        let (d, k) = self.slots[index];
        self.assignment[d] = k;
        self.recompute();
        let best = self.bounds.reached_best(self.util, false);
        Ok(self.ep.finish_step(self.value - prev, false, best))
    }

    fn is_done(&self) -> bool {
        self.ep.done
    }

    fn steps_taken(&self) -> usize {
        self.ep.t
    }

    fn cutoff(&self) -> usize {
        self.ep.cutoff
    }

    fn raw_objective(&self) -> f64 {
        self.util
    }

    fn score(&self) -> Result<f64, EnvError> {
        if !self.ep.done {
            return Err(EnvError::NotTerminal);
        }
        Ok(self.value)
    }

    fn graphs(&self) -> GraphBundle {
        bundle(&self.data, &self.loads)
    }

    /// Per link slot (capacity, utilization), then demand volume per ordered pair.
    fn padded_observation(&self, max_size: usize) -> Result<Vec<f64>, EnvError> {
        check_padding(self.data.num_nodes, max_size)?;
        let pairs = max_size * max_size.saturating_sub(1) / 2;
        let mut obs = vec![0.0; 2 * pairs + max_size * max_size.saturating_sub(1)];
        for (i, &(u, v)) in self.data.network.links.iter().enumerate() {
            let k = 2 * tri_index(u, v, max_size);
            let cap = self.data.network.capacity[i];
            obs[k] = cap / 1000.0;
            obs[k + 1] = self.loads[i] / cap;
        }
        for d in &self.data.network.demands {
            obs[2 * pairs + ordered_index(d.src, d.dst, max_size)] = d.volume / 50.0;
        }
        Ok(obs)
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn instance(seed: u64, nodes: usize) -> TrafficInstance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = TrafficParams::sample(&mut rng);
        p.network.num_nodes = nodes;
        TrafficInstance::generate(p, &mut rng)
    }

    fn bounds(d: &TrafficInstance) -> ScoreBounds {
        let paths = d.candidate_paths();
        let a = vec![0; paths.len()];
        let u = d.max_utilization(&paths, &a);
        ScoreBounds {
            worst: u,
            best: u / 2.0,
            sweeps: 0,
            seed: 0,
            worst_solution: Solution::Paths(a.clone()),
            best_solution: Solution::Paths(a),
        }
    }

    /// Independent count: brute-force over node sequences of length 2..=4.
    fn brute_force_count(d: &TrafficInstance) -> usize {
        let n = d.num_nodes;
        let links: std::collections::HashSet<(usize, usize)> = d.network.links.iter().copied().collect();
        let adjacent = |a: usize, b: usize| links.contains(&(a.min(b), a.max(b)));
        let mut count = 0;
        for dem in &d.network.demands {
            let (s, t) = (dem.src, dem.dst);
            if adjacent(s, t) {
                count += 1;
            }
            for a in 0..n {
                if a != s && a != t && adjacent(s, a) && adjacent(a, t) {
                    count += 1;
                }
                for b in 0..n {
                    if [s, t, a].contains(&b) {
                        continue;
                    }
                    if a != s && a != t && adjacent(s, a) && adjacent(a, b) && adjacent(b, t) {
                        count += 1;
                    }
                }
            }
        }
        count
    }

    #[test]
    fn action_count_matches_path_enumeration() {
        for seed in 0..5 {
            let d = instance(seed, 10);
            let env = TrafficEnv::new(d.clone(), bounds(&d), EnvOptions::default()).unwrap();
            assert_eq!(env.actions().len(), brute_force_count(&d));
        }
    }

    #[test]
    fn accepted_moves_respect_capacity() {
        let d = instance(11, 12);
        let mut env = TrafficEnv::new(d.clone(), bounds(&d), EnvOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        while !env.is_done() {
            let valid = env.valid_actions().unwrap();
            if valid.is_empty() {
                break;
            }
            let idx = valid[rng.random_range(0..valid.len())];
            let (dem, k) = env.slots[idx];
            env.step(idx).unwrap();
            assert_eq!(env.assignment()[dem], k);
            for &l in &env.path_link_ids[dem][k] {
                assert!(env.loads[l] <= d.network.capacity[l]);
            }
        }
    }

    #[test]
    fn current_path_is_excluded() {
        let d = instance(3, 10);
        let env = TrafficEnv::new(d.clone(), bounds(&d), EnvOptions::default()).unwrap();
        let mask = env.valid_mask();
        for (i, &(dem, k)) in env.slots.iter().enumerate() {
            if k == env.assignment[dem] {
                assert!(!mask[i]);
            }
        }
    }
}
