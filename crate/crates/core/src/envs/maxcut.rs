//! Maximum cut by flipping nodes between two partitions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_padding, tri_index, Action, EnvError, EnvKind, EnvOptions, Environment, Episode, ScoreBounds, StepResult};
use crate::graph::{sparsify_knn, Attribute, Graph, GraphBundle, Normalization};

pub const KNN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxCutParams {
    pub num_nodes: usize,
    pub max_weight: u32,
}

impl MaxCutParams {
    pub fn sample(rng: &mut impl Rng) -> Self {
        Self {
            num_nodes: rng.random_range(10..=100),
            max_weight: rng.random_range(10..=100),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxCutInstance {
    pub params: MaxCutParams,
    pub num_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    pub weights: Vec<f64>,
}

impl MaxCutInstance {
    /// Integer weights on every pair, then the `KNN` lightest edges per node are kept.
    pub fn generate(params: MaxCutParams, rng: &mut impl Rng) -> Self {
        let n = params.num_nodes;
        let mut g = Graph::complete(n, false);
        let w: Vec<f64> = (0..g.num_edges()).map(|_| rng.random_range(1..=params.max_weight) as f64).collect();
        g.set_edge_attr("weight", Attribute::scalar(w, Normalization::MinMax)).expect("row count");
        let g = sparsify_knn(&g, KNN, "weight").expect("weight attribute present");
        Self {
            params,
            num_nodes: n,
            edges: g.edges().to_vec(),
            weights: g.edge_attrs["weight"].values.iter().map(|r| r[0]).collect(),
        }
    }

    pub fn from_edges(num_nodes: usize, edges: Vec<(usize, usize, f64)>) -> Self {
        let max = edges.iter().map(|e| e.2).fold(1.0, f64::max);
        Self {
            params: MaxCutParams {
                num_nodes,
                max_weight: max.ceil() as u32,
            },
            num_nodes,
            edges: edges.iter().map(|&(u, v, _)| (u.min(v), u.max(v))).collect(),
            weights: edges.iter().map(|e| e.2).collect(),
        }
    }

    pub fn cut_value(&self, side: &[bool]) -> f64 {
        self.edges
            .iter()
            .zip(&self.weights)
            .filter(|((u, v), _)| side[*u] != side[*v])
            .map(|(_, w)| w)
            .sum()
    }

    /// Cut change from flipping `v`.
    pub fn flip_gain(&self, side: &[bool], v: usize) -> f64 {
        let mut g = 0.0;
        for (&(a, b), &w) in self.edges.iter().zip(&self.weights) {
            if a == v || b == v {
                let other = if a == v { b } else { a };
                g += if side[v] == side[other] { w } else { -w };
            }
        }
        g
    }
}

pub fn base_graphs(d: &MaxCutInstance) -> GraphBundle {
    GraphBundle::single("G", build_graph(d, &vec![false; d.num_nodes]))
}

fn build_graph(d: &MaxCutInstance, side: &[bool]) -> Graph {
    let mut g = Graph::new(d.num_nodes, false, d.edges.iter().copied()).expect("generated edges are valid");
    g.set_edge_attr("weight", Attribute::scalar(d.weights.iter().copied(), Normalization::MinMax))
        .expect("row count");
    g.set_node_attr("partition", Attribute::binary(side.iter().copied())).expect("row count");
    g
}

#[derive(Debug, Clone)]
pub struct MaxCutEnv {
    data: MaxCutInstance,
    bounds: ScoreBounds,
    actions: Vec<Action>,
    ep: Episode,
    side: Vec<bool>,
    cut: f64,
}

impl MaxCutEnv {
    pub fn new(data: MaxCutInstance, bounds: ScoreBounds, opts: EnvOptions) -> Self {
        let n = data.num_nodes;
        let mut env = Self {
            actions: (0..n).map(Action::node).collect(),
            ep: Episode::new(n * EnvKind::MaxCut.episode_coef(), opts),
            side: vec![false; n],
            cut: 0.0,
            data,
            bounds,
        };
        env.reset(0);
        env
    }

    pub fn partition(&self) -> &[bool] {
        &self.side
    }
}

impl Environment for MaxCutEnv {
    fn kind(&self) -> EnvKind {
        EnvKind::MaxCut
    }

    fn size(&self) -> usize {
        self.data.num_nodes
    }

    fn bounds(&self) -> &ScoreBounds {
        &self.bounds
    }

    fn reset(&mut self, _seed: u64) {
        self.ep.restart();
        self.side = vec![false; self.data.num_nodes];
        self.cut = 0.0;
    }

    fn actions(&self) -> &[Action] {
        &self.actions
    }

    fn valid_mask(&self) -> Vec<bool> {
        vec![!self.ep.done; self.actions.len()]
    }

    fn step(&mut self, index: usize) -> Result<StepResult, EnvError> {
        let in_table = self.ep.begin_step(index, self.actions.len())?;
        if !in_table {
            return self.ep.reject(index, "index outside the action table", false);
        }
        let gain = self.data.flip_gain(&self.side, index);
        self.side[index] = !self.side[index];
        self.cut += gain;
        let span = self.bounds.span();
        let reward = if span > 0.0 { gain / span } else { 0.0 };
        let best = self.bounds.reached_best(self.cut, true);
        Ok(self.ep.finish_step(reward, false, best))
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
        self.data.cut_value(&self.side)
    }

    fn score(&self) -> Result<f64, EnvError> {
        if !self.ep.done {
            return Err(EnvError::NotTerminal);
        }
        Ok(self.bounds.normalize(self.raw_objective()))
    }

    fn graphs(&self) -> GraphBundle {
        GraphBundle::single("G", build_graph(&self.data, &self.side))
    }

    fn padded_observation(&self, max_size: usize) -> Result<Vec<f64>, EnvError> {
        let n = self.data.num_nodes;
        check_padding(n, max_size)?;
        let mut obs = vec![0.0; max_size + max_size * max_size.saturating_sub(1) / 2];
        for (i, &s) in self.side.iter().enumerate() {
            obs[i] = if s { 1.0 } else { 0.0 };
        }
        let scale = self.data.params.max_weight.max(1) as f64;
        for (&(u, v), &w) in self.data.edges.iter().zip(&self.data.weights) {
            obs[max_size + tri_index(u, v, max_size)] = w / scale;
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
    use crate::envs::Solution;
    use rand::SeedableRng;

    fn bounds(worst: f64, best: f64) -> ScoreBounds {
        ScoreBounds {
            worst,
            best,
            sweeps: 0,
            seed: 0,
            worst_solution: Solution::None,
            best_solution: Solution::None,
        }
    }

    #[test]
    fn triangle_flip() {
        let d = MaxCutInstance::from_edges(3, vec![(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]);
        let mut env = MaxCutEnv::new(d, bounds(0.0, 2.0), EnvOptions::default());
        assert_eq!(env.raw_objective(), 0.0);
        let r = env.step(0).unwrap();
        assert_eq!(env.raw_objective(), 2.0);
        assert_eq!(r.reward, 1.0);
        assert_eq!(env.cutoff(), 6);
    }

    #[test]
    fn rewards_telescope_to_cut() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let d = MaxCutInstance::generate(MaxCutParams { num_nodes: 15, max_weight: 20 }, &mut rng);
        let b = bounds(0.0, 100.0);
        let mut env = MaxCutEnv::new(d, b.clone(), EnvOptions::default());
        let mut total = 0.0;
        while !env.is_done() {
            total += env.step(rng.random_range(0..15)).unwrap().reward;
        }
        assert!((total * b.span() - env.raw_objective()).abs() < 1e-9);
    }

    #[test]
    fn training_stops_at_best() {
        let d = MaxCutInstance::from_edges(2, vec![(0, 1, 3.0)]);
        let opts = EnvOptions {
            training: true,
            ..Default::default()
        };
        let mut env = MaxCutEnv::new(d, bounds(0.0, 3.0), opts);
        assert!(env.step(1).unwrap().done);
    }

    #[test]
    fn sparsified_degree() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let d = MaxCutInstance::generate(MaxCutParams { num_nodes: 40, max_weight: 50 }, &mut rng);
        assert!(d.edges.len() <= 40 * KNN);
        assert!(d.weights.iter().all(|w| *w >= 1.0 && *w <= 50.0 && w.fract() == 0.0));
    }
}
