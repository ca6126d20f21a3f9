//! Travelling salesman: build a tour city by city.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_padding, tri_index, Action, EnvError, EnvKind, EnvOptions, Environment, Episode, ScoreBounds, StepResult};
use crate::graph::{sparsify_knn, Attribute, Graph, GraphBundle, Normalization};

pub const KNN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TspParams {
    pub num_cities: usize,
    pub max_coord: f64,
}

impl TspParams {
    pub fn sample(rng: &mut impl Rng) -> Self {
        Self {
            num_cities: rng.random_range(10..=100),
            max_coord: rng.random_range(100.0..=1000.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TspInstance {
    pub params: TspParams,
    pub coords: Vec<[f64; 2]>,
}

impl TspInstance {
    pub fn generate(params: TspParams, rng: &mut impl Rng) -> Self {
        let coords = (0..params.num_cities)
            .map(|_| [rng.random_range(0.0..=params.max_coord), rng.random_range(0.0..=params.max_coord)])
            .collect();
        Self { params, coords }
    }

    pub fn from_coords(coords: Vec<[f64; 2]>) -> Self {
        let max_coord = coords.iter().flat_map(|c| c.iter().copied()).fold(1.0, f64::max);
        Self {
            params: TspParams {
                num_cities: coords.len(),
                max_coord,
            },
            coords,
        }
    }

    pub fn dist(&self, a: usize, b: usize) -> f64 {
        let (p, q) = (self.coords[a], self.coords[b]);
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
    }

    /// Length of the closed tour.
    pub fn tour_length(&self, tour: &[usize]) -> f64 {
        if tour.len() < 2 {
            return 0.0;
        }
        let open: f64 = tour.windows(2).map(|w| self.dist(w[0], w[1])).sum();
        open + self.dist(tour[tour.len() - 1], tour[0])
    }

    /// Completes a partial tour by repeatedly moving to the farthest unvisited city
    /// from the last one, then returns its closed length.
    pub fn padded_length(&self, partial: &[usize], visited: &[bool]) -> f64 {
        let mut length: f64 = partial.windows(2).map(|w| self.dist(w[0], w[1])).sum();
        let mut left: Vec<usize> = (0..self.coords.len()).filter(|&v| !visited[v]).collect();
        let Some(&start) = partial.first() else {
            return 0.0;
        };
        let mut last = *partial.last().expect("non-empty");
        while !left.is_empty() {
            let (pos, _) = left
                .iter()
                .enumerate()
                .map(|(i, &v)| (i, self.dist(last, v)))
                .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
            let v = left.remove(pos);
            length += self.dist(last, v);
            last = v;
        }
        length + self.dist(last, start)
    }
}

/// True when `tour` visits every one of `n` cities exactly once.
pub fn is_valid_tour(n: usize, tour: &[usize]) -> bool {
    let mut seen = vec![false; n];
    tour.len() == n && tour.iter().all(|&v| v < n && !std::mem::replace(&mut seen[v], true))
}

pub fn base_graphs(d: &TspInstance) -> GraphBundle {
    GraphBundle::single("G", build_graph(d, &vec![false; d.coords.len()]))
}

fn complete_graph(d: &TspInstance) -> Graph {
    let n = d.coords.len();
    let mut g = Graph::complete(n, false);
    let w: Vec<f64> = g.edges().iter().map(|&(u, v)| d.dist(u, v)).collect();
    g.set_edge_attr("distance", Attribute::scalar(w, Normalization::MinMax)).expect("row count");
    g.set_node_attr("coords", Attribute::continuous(d.coords.iter().map(|c| c.to_vec()).collect(), Normalization::MinMax))
        .expect("row count");
    sparsify_knn(&g, KNN, "distance").expect("distance attribute present")
}

fn build_graph(d: &TspInstance, visited: &[bool]) -> Graph {
    let mut g = complete_graph(d);
    g.set_node_attr("visited", Attribute::binary(visited.iter().copied())).expect("row count");
    g
}

#[derive(Debug, Clone)]
pub struct TspEnv {
    data: TspInstance,
    bounds: ScoreBounds,
    actions: Vec<Action>,
    graph: Graph,
    ep: Episode,
    tour: Vec<usize>,
    visited: Vec<bool>,
    value: f64,
}

impl TspEnv {
    pub fn new(data: TspInstance, bounds: ScoreBounds, opts: EnvOptions) -> Self {
        let n = data.coords.len();
        let graph = complete_graph(&data);
        let mut env = Self {
            actions: (0..n).map(Action::node).collect(),
            graph,
            ep: Episode::new(n * EnvKind::Tsp.episode_coef(), opts),
            tour: Vec::new(),
            visited: vec![false; n],
            value: 0.0,
            data,
            bounds,
        };
        env.reset(0);
        env
    }

    pub fn tour(&self) -> &[usize] {
        &self.tour
    }

    pub fn instance(&self) -> &TspInstance {
        &self.data
    }

    fn estimate(&self) -> f64 {
        self.data.padded_length(&self.tour, &self.visited)
    }
}

impl Environment for TspEnv {
    fn kind(&self) -> EnvKind {
        EnvKind::Tsp
    }

    fn size(&self) -> usize {
        self.data.coords.len()
    }

    fn bounds(&self) -> &ScoreBounds {
        &self.bounds
    }

    fn reset(&mut self, seed: u64) {
        let n = self.data.coords.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = rng.random_range(0..n);
        self.ep.restart();
        self.visited = vec![false; n];
        self.visited[start] = true;
        self.tour = vec![start];
        self.ep.done = n <= 1;
        self.value = self.bounds.normalize(self.estimate());
    }

    fn actions(&self) -> &[Action] {
        &self.actions
    }

    fn valid_mask(&self) -> Vec<bool> {
        if self.ep.done {
            return vec![false; self.actions.len()];
        }
        self.visited.iter().map(|v| !v).collect()
    }

    fn step(&mut self, index: usize) -> Result<StepResult, EnvError> {
        let in_table = self.ep.begin_step(index, self.actions.len())?;
        if !in_table || self.visited[index] {
            let mut r = self.ep.reject(index, "city already visited", true)?;
            r.reward = -self.value;
            self.value = 0.0;
            return Ok(r);
        }
        self.visited[index] = true;
        self.tour.push(index);
        let value = self.bounds.normalize(self.estimate());
        let reward = value - self.value;
        self.value = value;
        let complete = self.tour.len() == self.data.coords.len();
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
        self.data.tour_length(&self.tour)
    }

    fn score(&self) -> Result<f64, EnvError> {
        if !self.ep.done {
            return Err(EnvError::NotTerminal);
        }
        if self.ep.violated || !is_valid_tour(self.data.coords.len(), &self.tour) {
            return Ok(0.0);
        }
        Ok(self.bounds.normalize(self.raw_objective()))
    }

    fn graphs(&self) -> GraphBundle {
        let mut g = self.graph.clone();
        g.set_node_attr("visited", Attribute::binary(self.visited.iter().copied())).expect("row count");
        GraphBundle::single("G", g)
    }

    fn padded_observation(&self, max_size: usize) -> Result<Vec<f64>, EnvError> {
        let n = self.data.coords.len();
        check_padding(n, max_size)?;
        let scale = self.data.params.max_coord.max(1e-12);
        let mut obs = vec![0.0; 3 * max_size + max_size * (max_size.saturating_sub(1)) / 2];
        for (i, c) in self.data.coords.iter().enumerate() {
            obs[2 * i] = c[0] / scale;
            obs[2 * i + 1] = c[1] / scale;
            obs[2 * max_size + i] = if self.visited[i] { 1.0 } else { 0.0 };
        }
        let base = 3 * max_size;
        for i in 0..n {
            for j in i + 1..n {
                obs[base + tri_index(i, j, max_size)] = self.data.dist(i, j) / (scale * std::f64::consts::SQRT_2);
            }
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

    pub(crate) fn bounds(worst: f64, best: f64) -> ScoreBounds {
        ScoreBounds {
            worst,
            best,
            sweeps: 0,
            seed: 0,
            worst_solution: Solution::None,
            best_solution: Solution::None,
        }
    }

    fn square() -> TspInstance {
        TspInstance::from_coords(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    }

    #[test]
    fn reset_marks_one_city() {
        let mut env = TspEnv::new(square(), bounds(2.0 + 2.0 * 2f64.sqrt(), 4.0), EnvOptions::default());
        for seed in 0..5 {
            env.reset(seed);
            assert_eq!(env.visited.iter().filter(|v| **v).count(), 1);
            assert_eq!(env.valid_actions().unwrap().len(), 3);
        }
    }

    #[test]
    fn perimeter_tour_scores_one() {
        let worst = 2.0 + 2.0 * 2f64.sqrt();
        let mut env = TspEnv::new(square(), bounds(worst, 4.0), EnvOptions::default());
        env.reset(0);
        let start = env.tour[0];
        let mut total = env.value;
        for k in 1..4 {
            let r = env.step((start + k) % 4).unwrap();
            total += r.reward;
        }
        assert!(env.is_done());
        assert_eq!(env.raw_objective(), 4.0);
        assert_eq!(env.score().unwrap(), 1.0);
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn revisit_is_error_in_strict_and_zero_in_lenient() {
        let b = bounds(6.0, 4.0);
        let mut env = TspEnv::new(square(), b.clone(), EnvOptions::default());
        env.reset(1);
        let start = env.tour[0];
        assert!(matches!(env.step(start), Err(EnvError::InvalidAction { .. })));
        let mut env = TspEnv::new(
            square(),
            b,
            EnvOptions {
                mode: crate::envs::StepMode::Lenient,
                ..Default::default()
            },
        );
        env.reset(1);
        let start = env.tour[0];
        let r = env.step(start).unwrap();
        assert!(r.done && !r.valid);
        assert_eq!(env.score().unwrap(), 0.0);
    }

    #[test]
    fn score_requires_terminal() {
        let env = TspEnv::new(square(), bounds(6.0, 4.0), EnvOptions::default());
        assert_eq!(env.score(), Err(EnvError::NotTerminal));
    }

    #[test]
    fn padded_estimate_uses_farthest_city() {
        let d = TspInstance::from_coords(vec![[0.0, 0.0], [1.0, 0.0], [5.0, 0.0]]);
        // From 0 the farthest unvisited is 2, then 1, then back to 0.
        let est = d.padded_length(&[0], &[true, false, false]);
        assert_eq!(est, 5.0 + 4.0 + 1.0);
    }

    #[test]
    fn padded_observation_layout() {
        let env = TspEnv::new(square(), bounds(6.0, 4.0), EnvOptions::default());
        let obs = env.padded_observation(5).unwrap();
        assert_eq!(obs.len(), 15 + 10);
        assert!(env.padded_observation(3).is_err());
    }

    #[test]
    fn graph_is_knn_sparsified() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = TspInstance::generate(TspParams { num_cities: 30, max_coord: 500.0 }, &mut rng);
        let g = &base_graphs(&d);
        let g = g.get("G").unwrap();
        assert!(g.num_edges() <= KNN * 30);
        assert!(g.num_edges() < 30 * 29 / 2);
    }
}
