//! Cyber-attack path prediction: an attacker exploits host vulnerabilities under partial observability.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::{check_padding, Action, Component, EnvError, EnvKind, EnvOptions, Environment, Episode, Payload, ScoreBounds, StepResult};
use crate::graph::{Attribute, Graph, GraphBundle, Normalization};
use crate::latent::{feature_hash, HASH_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    Credential,
    Recon,
    Exfiltration,
    Persistence,
    DefenseEvasion,
    Dos,
}

impl Outcome {
    pub const ALL: [Outcome; 6] = [
        Outcome::Credential,
        Outcome::Recon,
        Outcome::Exfiltration,
        Outcome::Persistence,
        Outcome::DefenseEvasion,
        Outcome::Dos,
    ];

    fn word(self) -> &'static str {
        match self {
            Outcome::Credential => "credential access",
            Outcome::Recon => "discovery",
            Outcome::Exfiltration => "exfiltration",
            Outcome::Persistence => "persistence",
            Outcome::DefenseEvasion => "defense evasion",
            Outcome::Dos => "denial of service",
        }
    }
}

const SERVICES: [&str; 8] = ["ssh", "smb", "http", "rdp", "ftp", "mysql", "ldap", "dns"];
const FLAWS: [&str; 6] = ["buffer overflow", "weak password", "path traversal", "injection", "misconfiguration", "use after free"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CyberParams {
    pub num_nodes: usize,
    pub vulns_per_node: usize,
    pub vulns_overlap: f64,
    pub p_data_present: f64,
    pub p_feature_visible: f64,
    pub p_recon: f64,
    pub p_detection: f64,
    /// Reward magnitude of a credential exploit, before division by `n - 1`.
    pub credential_reward: f64,
    /// Penalty magnitude of detection or DoS, before division by `n - 1`.
    pub penalty: f64,
}

impl CyberParams {
    pub fn sample(rng: &mut impl Rng) -> Self {
        Self {
            num_nodes: rng.random_range(10..=20),
            vulns_per_node: 5,
            vulns_overlap: rng.random_range(0.0..=0.1),
            p_data_present: rng.random_range(0.6..=0.9),
            p_feature_visible: rng.random_range(0.5..=0.7),
            p_recon: rng.random_range(0.2..=0.4),
            p_detection: rng.random_range(0.05..=0.2),
            credential_reward: 1.0,
            penalty: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vulnerability {
    pub text: String,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Host {
    pub vulns: Vec<Vulnerability>,
    pub data_present: bool,
    pub features_visible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CyberInstance {
    pub params: CyberParams,
    pub hosts: Vec<Host>,
}

impl CyberInstance {
    /// Every host gets at least one credential vulnerability. With probability
    /// `vulns_overlap` a vulnerability is copied from one already generated.
    pub fn generate(params: CyberParams, rng: &mut impl Rng) -> Self {
        let mut pool: Vec<Vulnerability> = Vec::new();
        let mut counter = 0usize;
        let mut fresh = |outcome: Outcome, rng: &mut dyn rand::RngCore| {
            counter += 1;
            let svc = SERVICES[rng.random_range(0..SERVICES.len())];
            let flaw = FLAWS[rng.random_range(0..FLAWS.len())];
            Vulnerability {
                text: format!("{svc} {flaw} cve-{:04} allows {}", counter, outcome.word()),
                outcome,
            }
        };
        let hosts = (0..params.num_nodes)
            .map(|_| {
                let mut vulns = Vec::with_capacity(params.vulns_per_node);
                while vulns.len() < params.vulns_per_node.max(1) {
                    let v = if vulns.is_empty() {
                        fresh(Outcome::Credential, rng)
                    } else if !pool.is_empty() && rng.random_bool(params.vulns_overlap) {
                        pool[rng.random_range(0..pool.len())].clone()
                    } else {
                        let o = Outcome::ALL[rng.random_range(0..Outcome::ALL.len())];
                        fresh(o, rng)
                    };
                    if !vulns.contains(&v) {
                        vulns.push(v);
                    }
                }
                pool.extend(vulns.iter().cloned());
                Host {
                    vulns,
                    data_present: rng.random_bool(params.p_data_present),
                    features_visible: rng.random_bool(params.p_feature_visible),
                }
            })
            .collect();
        Self { params, hosts }
    }

    pub fn vulns_per_node(&self) -> usize {
        self.hosts.iter().map(|h| h.vulns.len()).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct HostState {
    discovered: bool,
    compromised: bool,
    exfiltrated: bool,
    persistence: bool,
    evasion: bool,
    down: bool,
}

pub fn base_graphs(d: &CyberInstance) -> GraphBundle {
    let mut states = vec![HostState::default(); d.hosts.len()];
    if let Some(s) = states.first_mut() {
        s.discovered = true;
        s.compromised = true;
    }
    GraphBundle::single("G", build_graph(d, &states, &BTreeMap::new()))
}

fn build_graph(d: &CyberInstance, states: &[HostState], history: &BTreeMap<(usize, usize), Vec<Vec<f64>>>) -> Graph {
    let n = d.hosts.len();
    let mut g = Graph::new(n, true, history.keys().copied()).expect("history arcs are distinct");
    let seen: Vec<bool> = (0..n).map(|i| states[i].compromised || (states[i].discovered && d.hosts[i].features_visible)).collect();
    let flag = |f: &dyn Fn(usize) -> bool| Attribute::binary((0..n).map(|i| seen[i] && f(i)));
    g.set_node_attr("discovered", Attribute::binary(states.iter().map(|s| s.discovered))).expect("row count");
    g.set_node_attr("compromised", Attribute::binary(states.iter().map(|s| s.compromised))).expect("row count");
    g.set_node_attr("visible", Attribute::binary(seen.iter().copied())).expect("row count");
    g.set_node_attr("data", flag(&|i| d.hosts[i].data_present)).expect("row count");
    g.set_node_attr("exfiltrated", flag(&|i| states[i].exfiltrated)).expect("row count");
    g.set_node_attr("persistence", flag(&|i| states[i].persistence)).expect("row count");
    g.set_node_attr("evasion", flag(&|i| states[i].evasion)).expect("row count");
    g.set_node_attr("dos", Attribute::binary(states.iter().map(|s| s.down))).expect("row count");
    let vuln_rows = (0..n)
        .map(|i| {
            if seen[i] {
                mean_rows(d.hosts[i].vulns.iter().map(|v| feature_hash(&v.text, HASH_DIM)))
            } else {
                vec![0.0; HASH_DIM]
            }
        })
        .collect();
    g.set_node_attr("vulns", Attribute::vectors(HASH_DIM, vuln_rows, Normalization::None)).expect("row count");
    let edge_rows = history.values().map(|hs| mean_rows(hs.iter().cloned())).collect();
    g.set_edge_attr("exploit", Attribute::vectors(HASH_DIM, edge_rows, Normalization::None)).expect("row count");
    g
}

fn mean_rows(rows: impl Iterator<Item = Vec<f64>>) -> Vec<f64> {
    let mut acc = vec![0.0; HASH_DIM];
    let mut k = 0;
    for r in rows {
        acc.iter_mut().zip(&r).for_each(|(a, b)| *a += b);
        k += 1;
    }
    if k > 0 {
        acc.iter_mut().for_each(|a| *a /= k as f64);
    }
    acc
}

#[derive(Debug, Clone)]
pub struct CyberEnv {
    data: CyberInstance,
    bounds: ScoreBounds,
    actions: Vec<Action>,
    /// `(src, tgt, vuln)` per action.
    slots: Vec<(usize, usize, usize)>,
    ep: Episode,
    rng: ChaCha8Rng,
    states: Vec<HostState>,
    history: BTreeMap<(usize, usize), Vec<Vec<f64>>>,
}

impl CyberEnv {
    pub fn new(data: CyberInstance, bounds: ScoreBounds, opts: EnvOptions) -> Self {
        let n = data.hosts.len();
        let mut slots = Vec::new();
        let mut actions = Vec::new();
        for s in 0..n {
            for t in (0..n).filter(|&t| t != s) {
                for (k, v) in data.hosts[t].vulns.iter().enumerate() {
                    slots.push((s, t, k));
                    actions.push(Action::new(vec![Component::Node(s), Component::Node(t), Component::Object(Payload::Text(v.text.clone()))]));
                }
            }
        }
        let mut env = Self {
            ep: Episode::new(n * EnvKind::CyberPath.episode_coef(), opts),
            rng: ChaCha8Rng::seed_from_u64(0),
            states: Vec::new(),
            history: BTreeMap::new(),
            slots,
            actions,
            data,
            bounds,
        };
        env.reset(0);
        env
    }

    pub fn compromised(&self) -> usize {
        self.states.iter().filter(|s| s.compromised).count()
    }

    pub fn discovered(&self) -> Vec<bool> {
        self.states.iter().map(|s| s.discovered).collect()
    }

    fn feasible(&self, index: usize) -> bool {
        let (s, t, _) = self.slots[index];
        let (a, b) = (&self.states[s], &self.states[t]);
        a.compromised && !a.down && b.discovered && !b.compromised && !b.down
    }

    /// Each undiscovered host is revealed with `p_recon`; at least one is guaranteed when any remain.
    fn recon(&mut self) {
        let hidden: Vec<usize> = (0..self.states.len()).filter(|&i| !self.states[i].discovered).collect();
        if hidden.is_empty() {
            return;
        }
        let mut found = 0;
        for &i in &hidden {
            if self.rng.random_bool(self.data.params.p_recon) {
                self.states[i].discovered = true;
                found += 1;
            }
        }
        if found == 0 {
            let i = hidden[self.rng.random_range(0..hidden.len())];
            self.states[i].discovered = true;
        }
    }

    fn unit(&self) -> f64 {
        (self.data.hosts.len().saturating_sub(1)).max(1) as f64
    }
}

impl Environment for CyberEnv {
    fn kind(&self) -> EnvKind {
        EnvKind::CyberPath
    }

    fn size(&self) -> usize {
        self.data.hosts.len()
    }

    fn bounds(&self) -> &ScoreBounds {
        &self.bounds
    }

    /// A random host starts compromised and part of the network is discovered.
    fn reset(&mut self, seed: u64) {
        self.ep.restart();
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.data.hosts.len();
        self.states = vec![HostState::default(); n];
        self.history.clear();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        let start = order[0];
        self.states[start].discovered = true;
        self.states[start].compromised = true;
        self.recon();
        if n <= 1 {
            self.ep.done = true;
        }
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
            return self.ep.reject(index, "source not owned or target not exploitable", false);
        }
        let (s, t, k) = self.slots[index];
        let unit = self.unit();
        let p = self.data.params;
        let reward = if self.rng.random_bool(p.p_detection) {
            -p.penalty / unit
        } else {
            let vuln = &self.data.hosts[t].vulns[k];
            let outcome = vuln.outcome;
            self.history.entry((s, t)).or_default().push(feature_hash(&vuln.text, HASH_DIM));
            let data_present = self.data.hosts[t].data_present;
            let st = &mut self.states[t];
            match outcome {
                Outcome::Credential => {
                    st.compromised = true;
                    self.recon();
                    p.credential_reward / unit
                }
                Outcome::Recon => {
                    self.recon();
                    0.0
                }
                Outcome::Exfiltration => {
                    st.exfiltrated |= data_present;
                    0.0
                }
                Outcome::Persistence => {
                    st.persistence = true;
                    0.0
                }
                Outcome::DefenseEvasion => {
                    st.evasion = true;
                    0.0
                }
                Outcome::Dos => {
                    st.down = true;
                    -p.penalty / unit
                }
            }
        };
        let all = self.states.iter().all(|s| s.compromised);
        let stuck = !all && !(0..self.actions.len()).any(|i| self.feasible(i));
        let best = self.bounds.reached_best(self.compromised() as f64, true);
        Ok(self.ep.finish_step(reward, all || stuck, best))
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
        self.compromised() as f64
    }

    fn score(&self) -> Result<f64, EnvError> {
        if !self.ep.done {
            return Err(EnvError::NotTerminal);
        }
        Ok(self.bounds.normalize(self.raw_objective()))
    }

    fn graphs(&self) -> GraphBundle {
        GraphBundle::single("G", build_graph(&self.data, &self.states, &self.history))
    }

    /// Per host slot: discovered, compromised, visible, then masked data / exfiltration /
    /// persistence / evasion / DoS flags, vulnerability count and per-outcome counts.
    fn padded_observation(&self, max_size: usize) -> Result<Vec<f64>, EnvError> {
        let n = self.data.hosts.len();
        check_padding(n, max_size)?;
        let w = 9 + Outcome::ALL.len();
        let mut obs = vec![0.0; max_size * w];
        let per = self.data.vulns_per_node().max(1) as f64;
        for (i, (h, st)) in self.data.hosts.iter().zip(&self.states).enumerate() {
            let o = &mut obs[i * w..(i + 1) * w];
            let seen = st.compromised || (st.discovered && h.features_visible);
            o[0] = st.discovered as u8 as f64;
            o[1] = st.compromised as u8 as f64;
            o[2] = seen as u8 as f64;
            o[7] = st.down as u8 as f64;
            if seen {
                o[3] = h.data_present as u8 as f64;
                o[4] = st.exfiltrated as u8 as f64;
                o[5] = st.persistence as u8 as f64;
                o[6] = st.evasion as u8 as f64;
                o[8] = h.vulns.len() as f64 / per;
                for v in &h.vulns {
                    let j = Outcome::ALL.iter().position(|x| *x == v.outcome).expect("listed outcome");
                    o[9 + j] += 1.0 / per;
                }
            }
        }
        Ok(obs)
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}

/// Bounds follow directly from the host count: one compromised host at worst, all at best.
pub fn cyber_bounds(d: &CyberInstance) -> ScoreBounds {
    ScoreBounds {
        worst: 1.0,
        best: d.hosts.len() as f64,
        sweeps: 0,
        seed: 0,
        worst_solution: super::Solution::None,
        best_solution: super::Solution::None,
    }
}
