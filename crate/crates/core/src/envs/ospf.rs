//! OSPF link-weight engineering: nudge integer link weights to lower the maximum link utilization.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::routing::{ospf_loads, Network, NetworkParams};
use super::{check_padding, tri_index, Action, Component, EnvError, EnvKind, EnvOptions, Environment, Episode, Payload, ScoreBounds, Solution, StepResult};
use crate::graph::GraphBundle;

pub const DELTAS: [i64; 3] = [-1, 0, 1];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OspfParams {
    pub network: NetworkParams,
    pub min_weight: i64,
    pub max_weight: i64,
    pub ecmp: bool,
}

impl OspfParams {
    pub fn sample(rng: &mut impl Rng) -> Self {
        Self {
            network: NetworkParams {
                num_nodes: rng.random_range(10..=30),
                communication_edge_ratio: rng.random_range(0.1..=0.3),
                non_zero_traffic_ratio: rng.random_range(0.1..=0.3),
                min_capacity: rng.random_range(10..=100),
                max_capacity: rng.random_range(500..=1000),
                max_traffic: rng.random_range(25..=50),
            },
            min_weight: 1,
            max_weight: 5,
            ecmp: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OspfInstance {
    pub params: OspfParams,
    pub num_nodes: usize,
    pub network: Network,
}

impl OspfInstance {
    pub fn generate(params: OspfParams, rng: &mut impl Rng) -> Self {
        let (links, capacity) = Network::generate_topology(&params.network, rng);
        let demands = Network::generate_demands(&params.network, rng, |_, _| true);
        Self {
            params,
            num_nodes: params.network.num_nodes,
            network: Network {
                num_nodes: params.network.num_nodes,
                links,
                capacity,
                demands,
            },
        }
    }

    pub fn max_utilization(&self, weights: &[i64]) -> f64 {
        let adj = self.network.adjacency();
        self.network.max_utilization(&ospf_loads(&self.network, &adj, weights, self.params.ecmp))
    }

    pub fn weights_valid(&self, weights: &[i64]) -> bool {
        weights.len() == self.network.links.len() && weights.iter().all(|w| (self.params.min_weight..=self.params.max_weight).contains(w))
    }
}

pub fn base_graphs(d: &OspfInstance) -> GraphBundle {
    let w = vec![d.params.min_weight; d.network.links.len()];
    graphs_for(d, &w)
}

fn graphs_for(d: &OspfInstance, weights: &[i64]) -> GraphBundle {
    let adj = d.network.adjacency();
    let loads = ospf_loads(&d.network, &adj, weights, d.params.ecmp);
    GraphBundle::new([
        ("comm_G".to_string(), d.network.comm_graph(&loads, Some(weights))),
        ("traffic_G".to_string(), d.network.traffic_graph()),
    ])
    .expect("two graphs")
}

#[derive(Debug, Clone)]
pub struct OspfEnv {
    data: OspfInstance,
    bounds: ScoreBounds,
    actions: Vec<Action>,
    adj: Vec<Vec<(usize, usize)>>,
    ep: Episode,
    initial: Vec<i64>,
    weights: Vec<i64>,
    loads: Vec<f64>,
    util: f64,
    value: f64,
}

impl OspfEnv {
    pub fn new(data: OspfInstance, bounds: ScoreBounds, opts: EnvOptions) -> Result<Self, EnvError> {
        let initial = match &bounds.worst_solution {
            Solution::Weights(w) if data.weights_valid(w) => w.clone(),
            _ => return Err(EnvError::BadInstance("OSPF bounds lack a valid worst weight vector".into())),
        };
        let actions = data
            .network
            .links
            .iter()
            .flat_map(|&(u, v)| DELTAS.iter().map(move |&d| Action::new(vec![Component::Edge(u, v), Component::Object(Payload::WeightDelta(d))])))
            .collect();
        let mut env = Self {
            adj: data.network.adjacency(),
            actions,
            ep: Episode::new(data.num_nodes * EnvKind::Ospf.episode_coef(), opts),
            weights: initial.clone(),
            initial,
            loads: Vec::new(),
            util: 0.0,
            value: 0.0,
            data,
            bounds,
        };
        env.reset(0);
        Ok(env)
    }

    pub fn weights(&self) -> &[i64] {
        &self.weights
    }

    fn recompute(&mut self) {
        self.loads = ospf_loads(&self.data.network, &self.adj, &self.weights, self.data.params.ecmp);
        self.util = self.data.network.max_utilization(&self.loads);
        self.value = self.bounds.normalize(self.util);
    }

    fn admissible(&self, index: usize) -> bool {
        let w = self.weights[index / 3] + DELTAS[index % 3];
        (self.data.params.min_weight..=self.data.params.max_weight).contains(&w)
    }
}

impl Environment for OspfEnv {
    fn kind(&self) -> EnvKind {
        EnvKind::Ospf
    }

    fn size(&self) -> usize {
        self.data.num_nodes
    }

    fn bounds(&self) -> &ScoreBounds {
        &self.bounds
    }

    fn reset(&mut self, _seed: u64) {
        self.ep.restart();
        self.weights = self.initial.clone();
        self.recompute();
    }

    fn actions(&self) -> &[Action] {
        &self.actions
    }

    fn valid_mask(&self) -> Vec<bool> {
        (0..self.actions.len()).map(|i| !self.ep.done && self.admissible(i)).collect()
    }

    fn step(&mut self, index: usize) -> Result<StepResult, EnvError> {
        let in_table = self.ep.begin_step(index, self.actions.len())?;
        if !in_table || !self.admissible(index) {
            return self.ep.reject(index, "weight would leave its bounds", false);
        }
        let prev = self.value;
        let delta = DELTAS[index % 3];
        if delta != 0 {
            self.weights[index / 3] += delta;
            self.recompute();
        }
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
        GraphBundle::new([
            ("comm_G".to_string(), self.data.network.comm_graph(&self.loads, Some(&self.weights))),
            ("traffic_G".to_string(), self.data.network.traffic_graph()),
        ])
        .expect("two graphs")
    }

    /// Per link slot (capacity, weight, utilization), then demand volume per ordered pair.
    fn padded_observation(&self, max_size: usize) -> Result<Vec<f64>, EnvError> {
        let n = self.data.num_nodes;
        check_padding(n, max_size)?;
        let pairs = max_size * max_size.saturating_sub(1) / 2;
        let mut obs = vec![0.0; 3 * pairs + max_size * max_size.saturating_sub(1)];
        let max_w = self.data.params.max_weight as f64;
        for (i, &(u, v)) in self.data.network.links.iter().enumerate() {
            let k = 3 * tri_index(u, v, max_size);
            let cap = self.data.network.capacity[i];
            obs[k] = cap / 1000.0;
            obs[k + 1] = self.weights[i] as f64 / max_w;
            obs[k + 2] = self.loads[i] / cap;
        }
        for d in &self.data.network.demands {
            obs[3 * pairs + ordered_index(d.src, d.dst, max_size)] = d.volume / 50.0;
        }
        Ok(obs)
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}

/// Index of the ordered pair `(s, t)`, `s != t`, among `n` nodes.
pub(crate) fn ordered_index(s: usize, t: usize, n: usize) -> usize {
    s * (n - 1) + if t < s { t } else { t - 1 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::routing::Demand;
    use rand::SeedableRng;

    fn toy() -> OspfInstance {
        OspfInstance {
            params: OspfParams {
                network: NetworkParams {
                    num_nodes: 4,
                    communication_edge_ratio: 0.0,
                    non_zero_traffic_ratio: 0.0,
                    min_capacity: 10,
                    max_capacity: 10,
                    max_traffic: 8,
                },
                min_weight: 1,
                max_weight: 5,
                ecmp: true,
            },
            num_nodes: 4,
            network: Network {
                num_nodes: 4,
                links: vec![(0, 1), (0, 2), (1, 3), (2, 3)],
                capacity: vec![10.0; 4],
                demands: vec![Demand {
                    src: 0,
                    dst: 3,
                    volume: 8.0,
                }],
            },
        }
    }

    fn bounds_for(d: &OspfInstance, worst: Vec<i64>, best: Vec<i64>) -> ScoreBounds {
        ScoreBounds {
            worst: d.max_utilization(&worst),
            best: d.max_utilization(&best),
            sweeps: 0,
            seed: 0,
            worst_solution: Solution::Weights(worst),
            best_solution: Solution::Weights(best),
        }
    }

    #[test]
    fn reset_reproduces_worst_utilization() {
        let d = toy();
        let b = bounds_for(&d, vec![1, 5, 1, 5], vec![1, 1, 1, 1]);
        let env = OspfEnv::new(d, b.clone(), EnvOptions::default()).unwrap();
        assert_eq!(env.raw_objective(), b.worst);
        assert_eq!(env.raw_objective(), 0.8);
        assert_eq!(b.best, 0.4);
    }

    #[test]
    fn lowering_a_weight_balances_load() {
        let d = toy();
        let b = bounds_for(&d, vec![1, 2, 1, 1], vec![1, 1, 1, 1]);
        let mut env = OspfEnv::new(d, b, EnvOptions::default()).unwrap();
        // Link 1 is (0, 2); action 3 is its -1 delta.
        let r = env.step(3).unwrap();
        assert_eq!(env.weights(), &[1, 1, 1, 1]);
        assert_eq!(r.reward, 1.0);
        // Link 0 already sits at the minimum weight.
        assert!(!env.valid_mask()[0]);
        assert!(matches!(env.step(0), Err(EnvError::InvalidAction { .. })));
    }

    #[test]
    fn generated_instance_has_actions_for_every_link() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let d = OspfInstance::generate(OspfParams::sample(&mut rng), &mut rng);
        let w = vec![3; d.network.links.len()];
        let b = bounds_for(&d, w.clone(), w);
        let env = OspfEnv::new(d.clone(), b, EnvOptions::default()).unwrap();
        assert_eq!(env.actions().len(), 3 * d.network.links.len());
        assert!(env.padded_observation(30).is_ok());
    }
}
