//! Benchmark environments behind one sequential-decision interface.
//!
//! Every environment exposes a fixed per-instance action table; the actions
//! admissible in the current state are a subset given by
//! [`Environment::valid_mask`]. Rewards are normalized by the instance's
//! [`ScoreBounds`] so that summed rewards track the normalized score.

pub mod cyber;
pub mod maxcut;
pub mod minvertex;
pub mod ospf;
pub mod placement;
pub mod routing;
pub mod traffic;
pub mod tsp;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::GraphBundle;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("episode has terminated")]
    Terminated,
    #[error("episode has not terminated yet")]
    NotTerminal,
    #[error("invalid action {index}: {reason}")]
    InvalidAction { index: usize, reason: String },
    #[error("instance has no score bounds; run the sweep first")]
    MissingBounds,
    #[error("instance kind {got} does not match {expected}")]
    KindMismatch { expected: EnvKind, got: EnvKind },
    #[error("bad instance: {0}")]
    BadInstance(String),
    #[error("instance needs {needed} slots but the padding allows {max}")]
    PaddingTooSmall { needed: usize, max: usize },
    #[error("unknown environment {0}")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Tsp,
    MinVertex,
    MaxCut,
    Placement,
    CyberPath,
    Ospf,
    Traffic,
}

impl EnvKind {
    pub const ALL: [EnvKind; 7] = [
        EnvKind::Tsp,
        EnvKind::MinVertex,
        EnvKind::MaxCut,
        EnvKind::Placement,
        EnvKind::CyberPath,
        EnvKind::Ospf,
        EnvKind::Traffic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Tsp => "tsp",
            EnvKind::MinVertex => "minvertex",
            EnvKind::MaxCut => "maxcut",
            EnvKind::Placement => "placement",
            EnvKind::CyberPath => "cyberpath",
            EnvKind::Ospf => "ospf",
            EnvKind::Traffic => "traffic",
        }
    }

    /// Episode length as a multiple of the scenario size.
    pub fn episode_coef(self) -> usize {
        match self {
            EnvKind::MaxCut | EnvKind::Ospf => 2,
            EnvKind::CyberPath | EnvKind::Traffic => 3,
            _ => 1,
        }
    }

    pub fn hard_constraint(self) -> bool {
        matches!(self, EnvKind::Tsp | EnvKind::MinVertex)
    }

    /// Graph names in the state bundle.
    pub fn graph_names(self) -> &'static [&'static str] {
        match self {
            EnvKind::Ospf | EnvKind::Traffic => &["comm_G", "traffic_G"],
            _ => &["G"],
        }
    }

    /// For each action component position, the graph whose node embeddings it uses
    /// (`None` for attribute payloads).
    pub fn component_graphs(self) -> &'static [Option<&'static str>] {
        match self {
            EnvKind::Tsp | EnvKind::MinVertex | EnvKind::MaxCut => &[Some("G")],
            EnvKind::Placement => &[Some("G"), Some("G")],
            EnvKind::CyberPath => &[Some("G"), Some("G"), None],
            EnvKind::Ospf => &[Some("comm_G"), None],
            EnvKind::Traffic => &[Some("traffic_G"), Some("comm_G")],
        }
    }

    /// Larger raw objective is better.
    pub fn maximize(self) -> bool {
        matches!(self, EnvKind::MaxCut | EnvKind::CyberPath)
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace(['-', '_'], "");
        EnvKind::ALL
            .into_iter()
            .find(|k| k.name() == norm || (norm == "mvc" && *k == EnvKind::MinVertex) || (norm == "cyber" && *k == EnvKind::CyberPath))
            .ok_or_else(|| EnvError::UnknownKind(s.to_string()))
    }
}

/// Attribute payload attached to an action.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    WeightDelta(i64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Node(usize),
    Edge(usize, usize),
    Path(Vec<usize>),
    Object(Payload),
}

/// An action as an ordered list of components.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Action {
    pub components: Vec<Component>,
}

impl Action {
    pub fn new(components: Vec<Component>) -> Self {
        Self { components }
    }

    pub fn node(v: usize) -> Self {
        Self::new(vec![Component::Node(v)])
    }
}

/// A reference solution recorded by the oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Solution {
    Tour(Vec<usize>),
    Cover(Vec<usize>),
    Partition(Vec<bool>),
    /// PM index per VM.
    Allocation(Vec<usize>),
    Weights(Vec<i64>),
    /// Candidate-path index per demand.
    Paths(Vec<usize>),
    None,
}

/// Empirical worst/best raw objective values for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBounds {
    pub worst: f64,
    pub best: f64,
    pub sweeps: usize,
    pub seed: u64,
    pub worst_solution: Solution,
    pub best_solution: Solution,
}

impl ScoreBounds {
    pub fn span(&self) -> f64 {
        (self.best - self.worst).abs()
    }

    /// Maps `worst -> 0` and `best -> 1`; values beyond `best` exceed 1.
    pub fn normalize(&self, raw: f64) -> f64 {
        if raw == self.worst {
            return 0.0;
        }
        if raw == self.best {
            return 1.0;
        }
        let d = self.best - self.worst;
        if d == 0.0 {
            return 0.0;
        }
        (raw - self.worst) / d
    }

    /// Whether `raw` is at least as good as the best bound.
    pub fn reached_best(&self, raw: f64, maximize: bool) -> bool {
        if maximize {
            raw >= self.best
        } else {
            raw <= self.best
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    /// Invalid actions are errors.
    #[default]
    Strict,
    /// Invalid actions consume a step without changing the state. In hard-constraint
    /// environments they mark the solution as violated and end the episode.
    Lenient,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnvOptions {
    /// Ends episodes early once the best-known objective is reached.
    pub training: bool,
    pub mode: StepMode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    pub done: bool,
    pub valid: bool,
}

/// Interface shared by all benchmark environments.
pub trait Environment: Send + Sync {
    fn kind(&self) -> EnvKind;
    /// Scenario size (cities, nodes, VMs or demands).
    fn size(&self) -> usize;
    fn bounds(&self) -> &ScoreBounds;
    fn reset(&mut self, seed: u64);
    /// Full action table of this instance.
    fn actions(&self) -> &[Action];
    fn valid_mask(&self) -> Vec<bool>;
    fn step(&mut self, index: usize) -> Result<StepResult, EnvError>;
    fn is_done(&self) -> bool;
    fn steps_taken(&self) -> usize;
    fn cutoff(&self) -> usize;
    /// Raw objective of the current state (tour length, cover size, cut value, ...).
    fn raw_objective(&self) -> f64;
    /// Normalized score of a finished episode; 0 for hard-constraint violations.
    fn score(&self) -> Result<f64, EnvError>;
    fn graphs(&self) -> GraphBundle;
    /// Fixed-size hand-built observation for padding baselines.
    fn padded_observation(&self, max_size: usize) -> Result<Vec<f64>, EnvError>;
    fn boxed_clone(&self) -> Box<dyn Environment>;

    fn valid_actions(&self) -> Result<Vec<usize>, EnvError> {
        if self.is_done() {
            return Err(EnvError::Terminated);
        }
        Ok(self
            .valid_mask()
            .iter()
            .enumerate()
            .filter_map(|(i, &ok)| ok.then_some(i))
            .collect())
    }

    fn valid_descriptors(&self) -> Result<Vec<Action>, EnvError> {
        Ok(self.valid_actions()?.into_iter().map(|i| self.actions()[i].clone()).collect())
    }

    fn index_of(&self, action: &Action) -> Option<usize> {
        self.actions().iter().position(|a| a == action)
    }

    fn step_action(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        let idx = self.index_of(action).ok_or_else(|| EnvError::InvalidAction {
            index: usize::MAX,
            reason: "action not in this instance's table".into(),
        })?;
        self.step(idx)
    }
}

impl Clone for Box<dyn Environment> {
    fn clone(&self) -> Self {
        self.boxed_clone()
    }
}

/// Step bookkeeping shared by the environments.
#[derive(Debug, Clone)]
pub(crate) struct Episode {
    pub t: usize,
    pub cutoff: usize,
    pub done: bool,
    pub violated: bool,
    pub opts: EnvOptions,
}

impl Episode {
    pub fn new(cutoff: usize, opts: EnvOptions) -> Self {
        Self {
            t: 0,
            cutoff,
            done: cutoff == 0,
            violated: false,
            opts,
        }
    }

    pub fn restart(&mut self) {
        self.t = 0;
        self.done = self.cutoff == 0;
        self.violated = false;
    }

    /// Checks that the episode is live. Returns whether `index` lies inside the
    /// action table; outside it is an error in strict mode and an inadmissible
    /// action in lenient mode.
    pub fn begin_step(&self, index: usize, table: usize) -> Result<bool, EnvError> {
        if self.done {
            return Err(EnvError::Terminated);
        }
        if index >= table {
            if self.opts.mode == StepMode::Strict {
                return Err(EnvError::InvalidAction {
                    index,
                    reason: format!("index outside table of {table} actions"),
                });
            }
            return Ok(false);
        }
        Ok(true)
    }

    /// Handles an inadmissible action according to the step mode.
    pub fn reject(&mut self, index: usize, reason: &str, hard_constraint: bool) -> Result<StepResult, EnvError> {
        if self.opts.mode == StepMode::Strict {
            return Err(EnvError::InvalidAction {
                index,
                reason: reason.to_string(),
            });
        }
        self.t += 1;
        if hard_constraint {
            self.violated = true;
            self.done = true;
        } else if self.t >= self.cutoff {
            self.done = true;
        }
        Ok(StepResult {
            reward: 0.0,
            done: self.done,
            valid: false,
        })
    }

    /// Advances the step counter and applies cutoff / early termination.
    pub fn finish_step(&mut self, reward: f64, complete: bool, reached_best: bool) -> StepResult {
        self.t += 1;
        if complete || self.t >= self.cutoff || (self.opts.training && reached_best) {
            self.done = true;
        }
        StepResult {
            reward,
            done: self.done,
            valid: true,
        }
    }
}

/// Instance payload per benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceData {
    Tsp(tsp::TspInstance),
    MinVertex(minvertex::MinVertexInstance),
    MaxCut(maxcut::MaxCutInstance),
    Placement(placement::PlacementInstance),
    CyberPath(cyber::CyberInstance),
    Ospf(ospf::OspfInstance),
    Traffic(traffic::TrafficInstance),
}

/// One generated scenario, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub kind: EnvKind,
    pub seed: u64,
    pub size: usize,
    pub data: InstanceData,
    pub graphs: GraphBundle,
    #[serde(default)]
    pub bounds: Option<ScoreBounds>,
}

impl Instance {
    pub fn new(id: String, seed: u64, data: InstanceData) -> Self {
        let (kind, size, graphs) = match &data {
            InstanceData::Tsp(d) => (EnvKind::Tsp, d.coords.len(), tsp::base_graphs(d)),
            InstanceData::MinVertex(d) => (EnvKind::MinVertex, d.num_nodes, minvertex::base_graphs(d)),
            InstanceData::MaxCut(d) => (EnvKind::MaxCut, d.num_nodes, maxcut::base_graphs(d)),
            InstanceData::Placement(d) => (EnvKind::Placement, d.vms.len(), placement::base_graphs(d)),
            InstanceData::CyberPath(d) => (EnvKind::CyberPath, d.hosts.len(), cyber::base_graphs(d)),
            InstanceData::Ospf(d) => (EnvKind::Ospf, d.num_nodes, ospf::base_graphs(d)),
            InstanceData::Traffic(d) => (EnvKind::Traffic, d.network.demands.len(), traffic::base_graphs(d)),
        };
        Self {
            id,
            kind,
            seed,
            size,
            data,
            graphs,
            bounds: None,
        }
    }

    pub fn num_nodes(&self) -> usize {
        match &self.data {
            InstanceData::Tsp(d) => d.coords.len(),
            InstanceData::MinVertex(d) => d.num_nodes,
            InstanceData::MaxCut(d) => d.num_nodes,
            InstanceData::Placement(d) => d.vms.len() + d.pms.len(),
            InstanceData::CyberPath(d) => d.hosts.len(),
            InstanceData::Ospf(d) => d.num_nodes,
            InstanceData::Traffic(d) => d.num_nodes,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, EnvError> {
        serde_json::from_str(s).map_err(|e| EnvError::BadInstance(e.to_string()))
    }
}

/// Builds an environment for an instance that already carries score bounds.
pub fn make_env(instance: &Instance, opts: EnvOptions) -> Result<Box<dyn Environment>, EnvError> {
    let bounds = instance.bounds.clone().ok_or(EnvError::MissingBounds)?;
    Ok(match &instance.data {
        InstanceData::Tsp(d) => Box::new(tsp::TspEnv::new(d.clone(), bounds, opts)),
        InstanceData::MinVertex(d) => Box::new(minvertex::MinVertexEnv::new(d.clone(), bounds, opts)),
        InstanceData::MaxCut(d) => Box::new(maxcut::MaxCutEnv::new(d.clone(), bounds, opts)),
        InstanceData::Placement(d) => Box::new(placement::PlacementEnv::new(d.clone(), bounds, opts)?),
        InstanceData::CyberPath(d) => Box::new(cyber::CyberEnv::new(d.clone(), bounds, opts)),
        InstanceData::Ospf(d) => Box::new(ospf::OspfEnv::new(d.clone(), bounds, opts)?),
        InstanceData::Traffic(d) => Box::new(traffic::TrafficEnv::new(d.clone(), bounds, opts)?),
    })
}

/// One line of a trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: usize,
    pub action: Action,
    pub reward: f64,
    pub done: bool,
}

pub fn write_trajectory(mut w: impl Write, records: &[TrajectoryRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Upper-triangle index of the unordered pair `(i, j)`, `i != j`, among `n` nodes.
pub(crate) fn tri_index(i: usize, j: usize, n: usize) -> usize {
    let (a, b) = (i.min(j), i.max(j));
    a * n - a * (a + 1) / 2 + (b - a - 1)
}

pub(crate) fn check_padding(needed: usize, max: usize) -> Result<(), EnvError> {
    if needed > max {
        Err(EnvError::PaddingTooSmall { needed, max })
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bounds(worst: f64, best: f64) -> ScoreBounds {
        ScoreBounds {
            worst,
            best,
            sweeps: 1,
            seed: 0,
            worst_solution: Solution::None,
            best_solution: Solution::None,
        }
    }

    #[test]
    fn normalization_endpoints_exact() {
        for (w, b) in [(10.0, 4.0), (0.0, 7.0), (0.3, 0.1)] {
            let s = bounds(w, b);
            assert_eq!(s.normalize(w), 0.0);
            assert_eq!(s.normalize(b), 1.0);
        }
        let s = bounds(10.0, 4.0);
        assert!(s.normalize(3.0) > 1.0);
    }

    #[test]
    fn tri_index_is_dense() {
        let n = 6;
        let mut seen = vec![false; n * (n - 1) / 2];
        for i in 0..n {
            for j in i + 1..n {
                let k = tri_index(i, j, n);
                assert!(!seen[k]);
                seen[k] = true;
                assert_eq!(k, tri_index(j, i, n));
            }
        }
        assert!(seen.iter().all(|&b| b));
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("TSP".parse::<EnvKind>().unwrap(), EnvKind::Tsp);
        assert_eq!("min-vertex".parse::<EnvKind>().unwrap(), EnvKind::MinVertex);
        assert_eq!("cyber_path".parse::<EnvKind>().unwrap(), EnvKind::CyberPath);
        assert!("foo".parse::<EnvKind>().is_err());
    }
}
