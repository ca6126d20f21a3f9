//! Virtual machine placement: migrate VMs between PMs under capacity constraints.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_padding, Action, Component, EnvError, EnvKind, EnvOptions, Environment, Episode, ScoreBounds, Solution, StepResult};
use crate::graph::{Attribute, Graph, GraphBundle, Normalization};

/// Resource order used everywhere: processing elements, MIPS, RAM, storage.
pub const RESOURCES: usize = 4;
pub const MAX_TENANTS: usize = 5;
pub const MAX_PMS: usize = 50;
pub const MIGRATION_COST: f64 = 0.01;
/// Observation scale per resource.
const RESOURCE_SCALE: [f64; RESOURCES] = [128.0, 50000.0, 512.0, 5000.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementParams {
    pub n_vms: usize,
    pub n_pms: usize,
    pub n_tenants: usize,
    pub vm_vuln: (f64, f64),
    pub pm_escape: (f64, f64),
    pub pm_capacity: [(u32, u32); RESOURCES],
    pub vm_demand: [(u32, u32); RESOURCES],
    pub latency: (f64, f64),
    pub p_idle: f64,
    pub p_peak: f64,
    pub min_traffic: u32,
    pub max_traffic: u32,
    pub traffic_density: f64,
}

impl PlacementParams {
    pub fn sample(rng: &mut impl Rng) -> Self {
        let mut pair = |lo: (u32, u32), hi: (u32, u32)| (rng.random_range(lo.0..=lo.1), rng.random_range(hi.0..=hi.1));
        let pm_capacity = [pair((8, 16), (32, 128)), pair((1000, 5000), (10000, 50000)), pair((32, 64), (128, 512)), pair((100, 500), (1000, 5000))];
        let vm_demand = [pair((2, 4), (8, 16)), pair((100, 500), (750, 1000)), pair((1, 8), (16, 24)), pair((10, 50), (60, 100))];
        Self {
            n_vms: rng.random_range(10..=50),
            n_pms: rng.random_range(10..=50),
            n_tenants: rng.random_range(2..=MAX_TENANTS),
            vm_vuln: (rng.random_range(0.01..=0.1), rng.random_range(0.2..=1.0)),
            pm_escape: (rng.random_range(0.01..=0.1), rng.random_range(0.2..=0.33)),
            pm_capacity,
            vm_demand,
            latency: (rng.random_range(0.1..=1.0), rng.random_range(2.0..=8.0)),
            p_idle: rng.random_range(50.0..=100.0),
            p_peak: rng.random_range(150.0..=300.0),
            min_traffic: 1,
            max_traffic: 10,
            traffic_density: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vm {
    pub demand: [f64; RESOURCES],
    pub tenant: usize,
    pub vuln: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pm {
    pub capacity: [f64; RESOURCES],
    pub escape: f64,
    pub p_idle: f64,
    pub p_peak: f64,
}

/// The five cost terms, each in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlacementMetrics {
    pub utilization: f64,
    pub energy: f64,
    pub packing: f64,
    pub balance: f64,
    pub risk: f64,
}

impl PlacementMetrics {
    pub fn total(&self) -> f64 {
        self.utilization + self.energy + self.packing + self.balance + self.risk
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementInstance {
    pub params: PlacementParams,
    pub vms: Vec<Vm>,
    pub pms: Vec<Pm>,
    /// VM-to-VM traffic `(a, b, volume)` with `a < b`.
    pub traffic: Vec<(usize, usize, f64)>,
    /// PM-to-PM latency `(p, q, ms)` with `p < q`, over every pair.
    pub latency: Vec<(usize, usize, f64)>,
}

impl PlacementInstance {
    /// Resamples demands and capacities until a feasible allocation exists.
    /// After 100 failed draws, PM capacities are doubled until best-fit succeeds.
    pub fn generate(params: PlacementParams, rng: &mut impl Rng) -> Self {
        let mut inst = Self::draw(params, rng);
        let mut tries = 1;
        while inst.best_fit_decreasing().is_none() {
            if tries < 100 {
                inst = Self::draw(params, rng);
                tries += 1;
            } else {
                for pm in &mut inst.pms {
                    pm.capacity.iter_mut().for_each(|c| *c *= 2.0);
                }
            }
        }
        inst
    }

    fn draw(params: PlacementParams, rng: &mut impl Rng) -> Self {
        let vms = (0..params.n_vms)
            .map(|_| Vm {
                demand: std::array::from_fn(|r| rng.random_range(params.vm_demand[r].0..=params.vm_demand[r].1) as f64),
                tenant: rng.random_range(0..params.n_tenants),
                vuln: rng.random_range(params.vm_vuln.0..=params.vm_vuln.1),
            })
            .collect();
        let pms = (0..params.n_pms)
            .map(|_| Pm {
                capacity: std::array::from_fn(|r| rng.random_range(params.pm_capacity[r].0..=params.pm_capacity[r].1) as f64),
                escape: rng.random_range(params.pm_escape.0..=params.pm_escape.1),
                p_idle: params.p_idle,
                p_peak: params.p_peak,
            })
            .collect();
        let mut traffic = Vec::new();
        for a in 0..params.n_vms {
            for b in a + 1..params.n_vms {
                if rng.random_bool(params.traffic_density) {
                    traffic.push((a, b, rng.random_range(params.min_traffic..=params.max_traffic) as f64));
                }
            }
        }
        let mut latency = Vec::new();
        for p in 0..params.n_pms {
            for q in p + 1..params.n_pms {
                latency.push((p, q, rng.random_range(params.latency.0..=params.latency.1)));
            }
        }
        Self {
            params,
            vms,
            pms,
            traffic,
            latency,
        }
    }

    pub fn usage(&self, alloc: &[usize]) -> Vec<[f64; RESOURCES]> {
        let mut u = vec![[0.0; RESOURCES]; self.pms.len()];
        for (vm, &pm) in alloc.iter().enumerate() {
            for r in 0..RESOURCES {
                u[pm][r] += self.vms[vm].demand[r];
            }
        }
        u
    }

    /// Whether `vm` fits on `pm` given current usage, counting `vm` as already removed if it sits there.
    pub fn fits(&self, usage: &[[f64; RESOURCES]], vm: usize, pm: usize, current: Option<usize>) -> bool {
        (0..RESOURCES).all(|r| {
            let mut used = usage[pm][r];
            if current == Some(pm) {
                used -= self.vms[vm].demand[r];
            }
            used + self.vms[vm].demand[r] <= self.pms[pm].capacity[r]
        })
    }

    pub fn allocation_valid(&self, alloc: &[usize]) -> bool {
        if alloc.len() != self.vms.len() || alloc.iter().any(|&p| p >= self.pms.len()) {
            return false;
        }
        let u = self.usage(alloc);
        u.iter()
            .zip(&self.pms)
            .all(|(used, pm)| (0..RESOURCES).all(|r| used[r] <= pm.capacity[r]))
    }

    /// Mean fractional usage of `pm` over all resources.
    pub fn pm_utilization(&self, usage: &[[f64; RESOURCES]], pm: usize) -> f64 {
        (0..RESOURCES).map(|r| usage[pm][r] / self.pms[pm].capacity[r]).sum::<f64>() / RESOURCES as f64
    }

    pub fn metrics(&self, alloc: &[usize]) -> PlacementMetrics {
        let usage = self.usage(alloc);
        let mut count = vec![0usize; self.pms.len()];
        for &p in alloc {
            count[p] += 1;
        }
        let active: Vec<usize> = (0..self.pms.len()).filter(|&p| count[p] > 0).collect();
        if active.is_empty() {
            return PlacementMetrics::default();
        }
        let utils: Vec<f64> = active.iter().map(|&p| self.pm_utilization(&usage, p)).collect();
        let mean = utils.iter().sum::<f64>() / utils.len() as f64;
        let var = utils.iter().map(|u| (u - mean).powi(2)).sum::<f64>() / utils.len() as f64;

        let peak_total: f64 = self.pms.iter().map(|p| p.p_peak).sum();
        let power: f64 = active
            .iter()
            .map(|&p| {
                let pm = &self.pms[p];
                pm.p_idle + (pm.p_peak - pm.p_idle) * usage[p][0] / pm.capacity[0]
            })
            .sum();

        PlacementMetrics {
            utilization: (1.0 - mean).clamp(0.0, 1.0),
            energy: (power / peak_total).clamp(0.0, 1.0),
            packing: active.len() as f64 / self.pms.len() as f64,
            balance: (2.0 * var.sqrt()).min(1.0),
            risk: self.risk(alloc),
        }
    }

    /// Expected co-located distinct-tenant pairs weighted by escape probability and mean
    /// vulnerability, divided by the number of distinct-tenant pairs overall.
    fn risk(&self, alloc: &[usize]) -> f64 {
        let n = self.vms.len();
        let mut total_pairs = 0usize;
        let mut exposure = 0.0;
        for a in 0..n {
            for b in a + 1..n {
                if self.vms[a].tenant == self.vms[b].tenant {
                    continue;
                }
                total_pairs += 1;
                if alloc[a] == alloc[b] {
                    exposure += self.pms[alloc[a]].escape * 0.5 * (self.vms[a].vuln + self.vms[b].vuln);
                }
            }
        }
        if total_pairs == 0 {
            0.0
        } else {
            exposure / total_pairs as f64
        }
    }

    pub fn cost(&self, alloc: &[usize]) -> f64 {
        self.metrics(alloc).total()
    }

    /// VMs in decreasing normalized demand, each onto the feasible PM left with the least slack.
    pub fn best_fit_decreasing(&self) -> Option<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.vms.len()).collect();
        order.sort_by(|&a, &b| self.demand_weight(b).total_cmp(&self.demand_weight(a)).then(a.cmp(&b)));
        let mut usage = vec![[0.0; RESOURCES]; self.pms.len()];
        let mut alloc = vec![0; self.vms.len()];
        for vm in order {
            let mut best: Option<(f64, usize)> = None;
            for pm in 0..self.pms.len() {
                if !self.fits(&usage, vm, pm, None) {
                    continue;
                }
                let slack: f64 = (0..RESOURCES)
                    .map(|r| (self.pms[pm].capacity[r] - usage[pm][r] - self.vms[vm].demand[r]) / self.pms[pm].capacity[r])
                    .sum();
                if best.is_none_or(|(s, _)| slack < s) {
                    best = Some((slack, pm));
                }
            }
            let (_, pm) = best?;
            alloc[vm] = pm;
            for r in 0..RESOURCES {
                usage[pm][r] += self.vms[vm].demand[r];
            }
        }
        Some(alloc)
    }

    /// Sum of demands relative to the largest capacity of each resource.
    pub fn demand_weight(&self, vm: usize) -> f64 {
        (0..RESOURCES)
            .map(|r| {
                let cap = self.pms.iter().map(|p| p.capacity[r]).fold(1.0, f64::max);
                self.vms[vm].demand[r] / cap
            })
            .sum()
    }
}

pub fn base_graphs(d: &PlacementInstance) -> GraphBundle {
    let alloc = d.best_fit_decreasing().unwrap_or_else(|| vec![0; d.vms.len()]);
    GraphBundle::single("G", build_graph(d, &alloc))
}

/// Node `i < n_vms` is VM `i`; node `n_vms + p` is PM `p`.
fn build_graph(d: &PlacementInstance, alloc: &[usize]) -> Graph {
    let nv = d.vms.len();
    let np = d.pms.len();
    let usage = d.usage(alloc);
    let mut edges = Vec::new();
    let mut etype = Vec::new();
    let mut value = Vec::new();
    for (vm, &pm) in alloc.iter().enumerate() {
        edges.push((vm, nv + pm));
        etype.push(0);
        value.push(d.pm_utilization(&usage, pm));
    }
    for &(a, b, t) in &d.traffic {
        edges.push((a, b));
        etype.push(1);
        value.push(t);
    }
    for &(p, q, l) in &d.latency {
        edges.push((nv + p, nv + q));
        etype.push(2);
        value.push(l);
    }
    let mut g = Graph::new(nv + np, false, edges).expect("placement edges are distinct");
    g.set_edge_attr("type", Attribute::categorical(3, etype)).expect("row count");
    g.set_edge_attr("value", Attribute::scalar(value, Normalization::MinMax)).expect("row count");

    let is_pm = (0..nv + np).map(|i| i >= nv);
    g.set_node_attr("is_pm", Attribute::binary(is_pm)).expect("row count");
    let resources: Vec<Vec<f64>> = d
        .vms
        .iter()
        .map(|v| v.demand.to_vec())
        .chain(d.pms.iter().map(|p| p.capacity.to_vec()))
        .collect();
    g.set_node_attr("resources", Attribute::continuous(resources, Normalization::MinMax)).expect("row count");
    let mut usage_rows = vec![vec![0.0; RESOURCES]; nv];
    let mut power = vec![0.0; nv];
    for (p, pm) in d.pms.iter().enumerate() {
        usage_rows.push((0..RESOURCES).map(|r| usage[p][r] / pm.capacity[r]).collect());
        let active = alloc.contains(&p);
        power.push(if active { (pm.p_idle + (pm.p_peak - pm.p_idle) * usage[p][0] / pm.capacity[0]) / pm.p_peak } else { 0.0 });
    }
    g.set_node_attr("usage", Attribute::continuous(usage_rows, Normalization::None)).expect("row count");
    g.set_node_attr("power", Attribute::scalar(power, Normalization::None)).expect("row count");
    // Class 0 marks PMs.
    let tenant = d.vms.iter().map(|v| v.tenant + 1).chain(std::iter::repeat_n(0, np));
    g.set_node_attr("tenant", Attribute::categorical(MAX_TENANTS + 1, tenant)).expect("row count");
    let security = d.vms.iter().map(|v| v.vuln).chain(d.pms.iter().map(|p| p.escape));
    g.set_node_attr("security", Attribute::scalar(security, Normalization::None)).expect("row count");
    g
}

#[derive(Debug, Clone)]
pub struct PlacementEnv {
    data: PlacementInstance,
    bounds: ScoreBounds,
    actions: Vec<Action>,
    ep: Episode,
    initial: Vec<usize>,
    alloc: Vec<usize>,
    usage: Vec<[f64; RESOURCES]>,
    cost: f64,
    value: f64,
}

impl PlacementEnv {
    pub fn new(data: PlacementInstance, bounds: ScoreBounds, opts: EnvOptions) -> Result<Self, EnvError> {
        let initial = match &bounds.worst_solution {
            Solution::Allocation(a) if data.allocation_valid(a) => a.clone(),
            _ => return Err(EnvError::BadInstance("placement bounds lack a feasible worst allocation".into())),
        };
        let nv = data.vms.len();
        let actions = (0..nv)
            .flat_map(|vm| (0..data.pms.len()).map(move |pm| Action::new(vec![Component::Node(vm), Component::Node(nv + pm)])))
            .collect();
        let mut env = Self {
            actions,
            ep: Episode::new(nv * EnvKind::Placement.episode_coef(), opts),
            alloc: initial.clone(),
            initial,
            usage: Vec::new(),
            cost: 0.0,
            value: 0.0,
            data,
            bounds,
        };
        env.reset(0);
        Ok(env)
    }

    pub fn allocation(&self) -> &[usize] {
        &self.alloc
    }

    pub fn metrics(&self) -> PlacementMetrics {
        self.data.metrics(&self.alloc)
    }

    fn recompute(&mut self) {
        self.usage = self.data.usage(&self.alloc);
        self.cost = self.data.cost(&self.alloc);
        self.value = self.bounds.normalize(self.cost);
    }

    fn feasible(&self, index: usize) -> bool {
        let np = self.data.pms.len();
        let (vm, pm) = (index / np, index % np);
        let cur = self.alloc[vm];
        pm != cur && self.data.fits(&self.usage, vm, pm, Some(cur))
    }
}

impl Environment for PlacementEnv {
    fn kind(&self) -> EnvKind {
        EnvKind::Placement
    }

    fn size(&self) -> usize {
        self.data.vms.len()
    }

    fn bounds(&self) -> &ScoreBounds {
        &self.bounds
    }

    fn reset(&mut self, _seed: u64) {
        self.ep.restart();
        self.alloc = self.initial.clone();
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
            return self.ep.reject(index, "VM already there or PM lacks capacity", false);
        }
        let prev = self.value;
        let np = self.data.pms.len();
        self.alloc[index / np] = index % np;
        self.recompute();
        let best = self.bounds.reached_best(self.cost, false);
        Ok(self.ep.finish_step(self.value - prev - MIGRATION_COST, false, best))
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
        self.cost
    }

    fn score(&self) -> Result<f64, EnvError> {
        if !self.ep.done {
            return Err(EnvError::NotTerminal);
        }
        Ok(self.value)
    }

    fn graphs(&self) -> GraphBundle {
        GraphBundle::single("G", build_graph(&self.data, &self.alloc))
    }

    /// `MAX_PMS` slots of (capacity, usage fraction, power), then per VM slot (demand, tenant, vulnerability, host).
    fn padded_observation(&self, max_size: usize) -> Result<Vec<f64>, EnvError> {
        check_padding(self.data.vms.len(), max_size)?;
        check_padding(self.data.pms.len(), MAX_PMS)?;
        let pm_w = 2 * RESOURCES + 1;
        let vm_w = RESOURCES + 3;
        let mut obs = vec![0.0; MAX_PMS * pm_w + max_size * vm_w];
        for (p, pm) in self.data.pms.iter().enumerate() {
            let o = &mut obs[p * pm_w..(p + 1) * pm_w];
            for r in 0..RESOURCES {
                o[r] = pm.capacity[r] / RESOURCE_SCALE[r];
                o[RESOURCES + r] = self.usage[p][r] / pm.capacity[r];
            }
            if self.alloc.contains(&p) {
                o[2 * RESOURCES] = (pm.p_idle + (pm.p_peak - pm.p_idle) * self.usage[p][0] / pm.capacity[0]) / pm.p_peak;
            }
        }
        let base = MAX_PMS * pm_w;
        for (v, vm) in self.data.vms.iter().enumerate() {
            let o = &mut obs[base + v * vm_w..base + (v + 1) * vm_w];
            for r in 0..RESOURCES {
                o[r] = vm.demand[r] / RESOURCE_SCALE[r];
            }
            o[RESOURCES] = (vm.tenant + 1) as f64 / MAX_TENANTS as f64;
            o[RESOURCES + 1] = vm.vuln;
            o[RESOURCES + 2] = (self.alloc[v] + 1) as f64 / MAX_PMS as f64;
        }
        Ok(obs)
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}
