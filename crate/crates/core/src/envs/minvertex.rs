//! Minimum vertex cover on Erdős–Rényi graphs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_padding, tri_index, Action, EnvError, EnvKind, EnvOptions, Environment, Episode, ScoreBounds, StepResult};
use crate::graph::{Attribute, Graph, GraphBundle};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinVertexParams {
    pub num_nodes: usize,
    pub edge_prob: f64,
}

impl MinVertexParams {
    pub fn sample(rng: &mut impl Rng) -> Self {
        Self {
            num_nodes: rng.random_range(10..=50),
            edge_prob: rng.random_range(0.1..=0.4),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinVertexInstance {
    pub params: MinVertexParams,
    pub num_nodes: usize,
    pub edges: Vec<(usize, usize)>,
}

impl MinVertexInstance {
    pub fn generate(params: MinVertexParams, rng: &mut impl Rng) -> Self {
        let n = params.num_nodes;
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.random_bool(params.edge_prob) {
                    edges.push((u, v));
                }
            }
        }
        Self { params, num_nodes: n, edges }
    }

    pub fn from_edges(num_nodes: usize, edges: Vec<(usize, usize)>) -> Self {
        let edges = edges.into_iter().map(|(u, v)| (u.min(v), u.max(v))).collect();
        Self {
            params: MinVertexParams { num_nodes, edge_prob: 0.0 },
            num_nodes,
            edges,
        }
    }

    pub fn is_cover(&self, selected: &[bool]) -> bool {
        self.edges.iter().all(|&(u, v)| selected[u] || selected[v])
    }

    pub fn cover_from_nodes(&self, nodes: &[usize]) -> Vec<bool> {
        let mut s = vec![false; self.num_nodes];
        for &v in nodes {
            s[v] = true;
        }
        s
    }
}

pub fn base_graphs(d: &MinVertexInstance) -> GraphBundle {
    let none = vec![false; d.num_nodes];
    GraphBundle::single("G", build_graph(d, &none))
}

fn build_graph(d: &MinVertexInstance, selected: &[bool]) -> Graph {
    let mut g = Graph::new(d.num_nodes, false, d.edges.iter().copied()).expect("generated edges are valid");
    g.set_node_attr("selected", Attribute::binary(selected.iter().copied())).expect("row count");
    let covered = d.edges.iter().map(|&(u, v)| selected[u] || selected[v]);
    g.set_edge_attr("covered", Attribute::binary(covered)).expect("row count");
    g
}

#[derive(Debug, Clone)]
pub struct MinVertexEnv {
    data: MinVertexInstance,
    bounds: ScoreBounds,
    actions: Vec<Action>,
    ep: Episode,
    selected: Vec<bool>,
    covered: usize,
}

impl MinVertexEnv {
    pub fn new(data: MinVertexInstance, bounds: ScoreBounds, opts: EnvOptions) -> Self {
        let n = data.num_nodes;
        let mut env = Self {
            actions: (0..n).map(Action::node).collect(),
            ep: Episode::new(n * EnvKind::MinVertex.episode_coef(), opts),
            selected: vec![false; n],
            covered: 0,
            data,
            bounds,
        };
        env.reset(0);
        env
    }

    pub fn selected(&self) -> &[bool] {
        &self.selected
    }

    fn all_covered(&self) -> bool {
        self.covered == self.data.edges.len()
    }
}

impl Environment for MinVertexEnv {
    fn kind(&self) -> EnvKind {
        EnvKind::MinVertex
    }

    fn size(&self) -> usize {
        self.data.num_nodes
    }

    fn bounds(&self) -> &ScoreBounds {
        &self.bounds
    }

    fn reset(&mut self, _seed: u64) {
        self.ep.restart();
        self.selected = vec![false; self.data.num_nodes];
        self.covered = 0;
        if self.all_covered() {
            self.ep.done = true;
        }
    }

    fn actions(&self) -> &[Action] {
        &self.actions
    }

    fn valid_mask(&self) -> Vec<bool> {
        if self.ep.done {
            return vec![false; self.actions.len()];
        }
        self.selected.iter().map(|s| !s).collect()
    }

    fn step(&mut self, index: usize) -> Result<StepResult, EnvError> {
        let in_table = self.ep.begin_step(index, self.actions.len())?;
        if !in_table || self.selected[index] {
            return self.ep.reject(index, "node already selected", true);
        }
        let newly = self
            .data
            .edges
            .iter()
            .filter(|&&(u, v)| (u == index && !self.selected[v]) || (v == index && !self.selected[u]))
            .count();
        self.selected[index] = true;
        self.covered += newly;
        let m = self.data.edges.len().max(1) as f64;
        let span = self.bounds.span().max(1.0);
        let reward = newly as f64 / m - 1.0 / span;
        let complete = self.all_covered();
        Ok(self.ep.finish_step(reward, complete, false))
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
        self.selected.iter().filter(|s| **s).count() as f64
    }

    fn score(&self) -> Result<f64, EnvError> {
        if !self.ep.done {
            return Err(EnvError::NotTerminal);
        }
        if self.ep.violated || !self.data.is_cover(&self.selected) {
            return Ok(0.0);
        }
        Ok(self.bounds.normalize(self.raw_objective()))
    }

    fn graphs(&self) -> GraphBundle {
        GraphBundle::single("G", build_graph(&self.data, &self.selected))
    }

    /// Selected flags, then the upper triangle: 1 covered edge, 0 uncovered edge, -1 no edge.
    fn padded_observation(&self, max_size: usize) -> Result<Vec<f64>, EnvError> {
        let n = self.data.num_nodes;
        check_padding(n, max_size)?;
        let mut obs = vec![0.0; max_size];
        obs.extend(std::iter::repeat_n(-1.0, max_size * max_size.saturating_sub(1) / 2));
        for (i, &s) in self.selected.iter().enumerate() {
            obs[i] = if s { 1.0 } else { 0.0 };
        }
        for &(u, v) in &self.data.edges {
            obs[max_size + tri_index(u, v, max_size)] = if self.selected[u] || self.selected[v] { 1.0 } else { 0.0 };
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
    use crate::envs::{Solution, StepMode};

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

    fn path3() -> MinVertexInstance {
        MinVertexInstance::from_edges(3, vec![(0, 1), (1, 2)])
    }

    #[test]
    fn centre_of_path_covers_everything() {
        let mut env = MinVertexEnv::new(path3(), bounds(3.0, 1.0), EnvOptions::default());
        let r = env.step(1).unwrap();
        assert!(r.done);
        assert_eq!(env.raw_objective(), 1.0);
        assert_eq!(env.score().unwrap(), 1.0);
    }

    #[test]
    fn incomplete_cover_at_cutoff_scores_zero() {
        let d = MinVertexInstance::from_edges(4, vec![(0, 1), (2, 3)]);
        let mut env = MinVertexEnv::new(d, bounds(4.0, 2.0), EnvOptions::default());
        env.ep.cutoff = 1;
        env.step(0).unwrap();
        assert!(env.is_done());
        assert_eq!(env.score().unwrap(), 0.0);
    }

    #[test]
    fn reselect_violates_in_lenient_mode() {
        let opts = EnvOptions {
            mode: StepMode::Lenient,
            training: false,
        };
        let mut env = MinVertexEnv::new(MinVertexInstance::from_edges(4, vec![(0, 1), (2, 3)]), bounds(4.0, 2.0), opts);
        env.step(0).unwrap();
        let r = env.step(0).unwrap();
        assert!(!r.valid && r.done);
        assert_eq!(env.score().unwrap(), 0.0);
    }

    #[test]
    fn edgeless_graph_is_done_at_reset() {
        let env = MinVertexEnv::new(MinVertexInstance::from_edges(3, vec![]), bounds(3.0, 0.0), EnvOptions::default());
        assert!(env.is_done());
        assert_eq!(env.score().unwrap(), 1.0);
    }
}
