//! Shared network model for the OSPF and traffic engineering benchmarks.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{Attribute, Graph, Normalization};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Demand {
    pub src: usize,
    pub dst: usize,
    pub volume: f64,
}

/// Undirected capacitated links plus directed traffic demands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub num_nodes: usize,
    pub links: Vec<(usize, usize)>,
    pub capacity: Vec<f64>,
    pub demands: Vec<Demand>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub num_nodes: usize,
    pub communication_edge_ratio: f64,
    pub non_zero_traffic_ratio: f64,
    pub min_capacity: u32,
    pub max_capacity: u32,
    pub max_traffic: u32,
}

impl Network {
    /// Random spanning tree topped up with random links until the edge ratio is met.
    pub fn generate_topology(params: &NetworkParams, rng: &mut impl Rng) -> (Vec<(usize, usize)>, Vec<f64>) {
        let n = params.num_nodes;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut links = Vec::new();
        let mut present = std::collections::HashSet::new();
        for i in 1..n {
            let parent = order[rng.random_range(0..i)];
            let e = (order[i].min(parent), order[i].max(parent));
            present.insert(e);
            links.push(e);
        }
        let all_pairs = n * n.saturating_sub(1) / 2;
        let target = ((params.communication_edge_ratio * all_pairs as f64).round() as usize).clamp(n.saturating_sub(1), all_pairs);
        let mut rest: Vec<(usize, usize)> = (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .filter(|e| !present.contains(e))
            .collect();
        rest.shuffle(rng);
        links.extend(rest.into_iter().take(target - links.len()));
        links.sort_unstable();
        let capacity = links
            .iter()
            .map(|_| rng.random_range(params.min_capacity..=params.max_capacity) as f64)
            .collect();
        (links, capacity)
    }

    /// Samples distinct ordered demand pairs accepted by `allowed`.
    pub fn generate_demands(
        params: &NetworkParams,
        rng: &mut impl Rng,
        allowed: impl Fn(usize, usize) -> bool,
    ) -> Vec<Demand> {
        let n = params.num_nodes;
        let mut pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|s| (0..n).filter(move |&t| t != s).map(move |t| (s, t)))
            .filter(|&(s, t)| allowed(s, t))
            .collect();
        pairs.shuffle(rng);
        let want = ((params.non_zero_traffic_ratio * (n * n.saturating_sub(1)) as f64).round() as usize).max(1);
        let mut chosen: Vec<(usize, usize)> = pairs.into_iter().take(want).collect();
        chosen.sort_unstable();
        chosen
            .into_iter()
            .map(|(src, dst)| Demand {
                src,
                dst,
                volume: rng.random_range(1..=params.max_traffic.max(1)) as f64,
            })
            .collect()
    }

    pub fn link_index(&self) -> HashMap<(usize, usize), usize> {
        self.links.iter().enumerate().map(|(i, e)| (*e, i)).collect()
    }

    /// Neighbour lists `(neighbour, link index)` in increasing neighbour order.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for (i, &(u, v)) in self.links.iter().enumerate() {
            adj[u].push((v, i));
            adj[v].push((u, i));
        }
        for a in adj.iter_mut() {
            a.sort_unstable();
        }
        adj
    }

    pub fn max_utilization(&self, loads: &[f64]) -> f64 {
        loads.iter().zip(&self.capacity).map(|(l, c)| l / c).fold(0.0, f64::max)
    }

    pub fn traffic_in_out(&self) -> (Vec<f64>, Vec<f64>) {
        let mut tin = vec![0.0; self.num_nodes];
        let mut tout = vec![0.0; self.num_nodes];
        for d in &self.demands {
            tout[d.src] += d.volume;
            tin[d.dst] += d.volume;
        }
        (tin, tout)
    }

    /// Communication graph with per-link state attributes.
    pub fn comm_graph(&self, loads: &[f64], weights: Option<&[i64]>) -> Graph {
        let mut g = Graph::new(self.num_nodes, false, self.links.iter().copied()).expect("links are valid");
        let (tin, tout) = self.traffic_in_out();
        g.set_node_attr("traffic_in", Attribute::scalar(tin, Normalization::MinMax)).expect("rows");
        g.set_node_attr("traffic_out", Attribute::scalar(tout, Normalization::MinMax)).expect("rows");
        g.set_edge_attr("capacity", Attribute::scalar(self.capacity.iter().copied(), Normalization::MinMax))
            .expect("rows");
        g.set_edge_attr("load", Attribute::scalar(loads.iter().copied(), Normalization::MinMax)).expect("rows");
        let util = loads.iter().zip(&self.capacity).map(|(l, c)| l / c);
        g.set_edge_attr("utilization", Attribute::scalar(util, Normalization::None)).expect("rows");
        if let Some(w) = weights {
            g.set_edge_attr("weight", Attribute::scalar(w.iter().map(|&x| x as f64), Normalization::MinMax))
                .expect("rows");
        }
        g
    }

    /// Directed demand graph.
    pub fn traffic_graph(&self) -> Graph {
        let mut g = Graph::new(self.num_nodes, true, self.demands.iter().map(|d| (d.src, d.dst))).expect("demands are distinct");
        let (tin, tout) = self.traffic_in_out();
        g.set_node_attr("traffic_in", Attribute::scalar(tin, Normalization::MinMax)).expect("rows");
        g.set_node_attr("traffic_out", Attribute::scalar(tout, Normalization::MinMax)).expect("rows");
        g.set_edge_attr("volume", Attribute::scalar(self.demands.iter().map(|d| d.volume), Normalization::MinMax))
            .expect("rows");
        g
    }
}

/// Single-source shortest distances over link weights.
pub fn dijkstra(adj: &[Vec<(usize, usize)>], weights: &[i64], source: usize) -> Vec<i64> {
    let mut dist = vec![i64::MAX; adj.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0;
    heap.push(Reverse((0i64, source)));
    while let Some(Reverse((d, u))) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, e) in &adj[u] {
            let nd = d + weights[e];
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Reverse((nd, v)));
            }
        }
    }
    dist
}

/// Link loads under shortest-path routing. With `ecmp` the flow at each node is split
/// equally over all next hops on a shortest path; otherwise the lowest-index next hop is used.
pub fn ospf_loads(net: &Network, adj: &[Vec<(usize, usize)>], weights: &[i64], ecmp: bool) -> Vec<f64> {
    let mut loads = vec![0.0; net.links.len()];
    let mut by_dst: Vec<Vec<&Demand>> = vec![Vec::new(); net.num_nodes];
    for d in &net.demands {
        by_dst[d.dst].push(d);
    }
    for (t, ds) in by_dst.iter().enumerate() {
        if ds.is_empty() {
            continue;
        }
        let dist = dijkstra(adj, weights, t);
        let mut flow = vec![0.0; net.num_nodes];
        for d in ds {
            if dist[d.src] != i64::MAX {
                flow[d.src] += d.volume;
            }
        }
        let mut order: Vec<usize> = (0..net.num_nodes).filter(|&u| dist[u] != i64::MAX && u != t).collect();
        order.sort_by_key(|&u| (Reverse(dist[u]), u));
        for u in order {
            if flow[u] == 0.0 {
                continue;
            }
            let hops: Vec<(usize, usize)> = adj[u]
                .iter()
                .copied()
                .filter(|&(v, e)| dist[v] != i64::MAX && dist[v] + weights[e] == dist[u])
                .collect();
            let hops = if ecmp { &hops[..] } else { &hops[..1] };
            let share = flow[u] / hops.len() as f64;
            for &(v, e) in hops {
                loads[e] += share;
                flow[v] += share;
            }
        }
    }
    loads
}

/// All simple paths from `s` to `t` with at most `max_nodes` nodes, in DFS order over sorted neighbours.
pub fn simple_paths(adj: &[Vec<(usize, usize)>], s: usize, t: usize, max_nodes: usize) -> Vec<Vec<usize>> {
    fn dfs(adj: &[Vec<(usize, usize)>], t: usize, max_nodes: usize, path: &mut Vec<usize>, on: &mut [bool], out: &mut Vec<Vec<usize>>) {
        let u = *path.last().expect("non-empty");
        if u == t {
            out.push(path.clone());
            return;
        }
        if path.len() == max_nodes {
            return;
        }
        for &(v, _) in &adj[u] {
            if !on[v] {
                on[v] = true;
                path.push(v);
                dfs(adj, t, max_nodes, path, on, out);
                path.pop();
                on[v] = false;
            }
        }
    }
    let mut out = Vec::new();
    if max_nodes == 0 {
        return out;
    }
    let mut on = vec![false; adj.len()];
    on[s] = true;
    dfs(adj, t, max_nodes, &mut vec![s], &mut on, &mut out);
    out
}

/// Link indices traversed by a node path.
pub fn path_links(index: &HashMap<(usize, usize), usize>, path: &[usize]) -> Vec<usize> {
    path.windows(2).map(|w| index[&(w[0].min(w[1]), w[0].max(w[1]))]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn square_net() -> Network {
        // 0-1-3 and 0-2-3, two equal-cost routes from 0 to 3.
        Network {
            num_nodes: 4,
            links: vec![(0, 1), (0, 2), (1, 3), (2, 3)],
            capacity: vec![10.0; 4],
            demands: vec![Demand {
                src: 0,
                dst: 3,
                volume: 8.0,
            }],
        }
    }

    #[test]
    fn ecmp_splits_equally() {
        let net = square_net();
        let adj = net.adjacency();
        let w = vec![1; 4];
        assert_eq!(ospf_loads(&net, &adj, &w, true), vec![4.0, 4.0, 4.0, 4.0]);
        assert_eq!(ospf_loads(&net, &adj, &w, false), vec![8.0, 0.0, 8.0, 0.0]);
        let w = vec![1, 1, 5, 1];
        assert_eq!(ospf_loads(&net, &adj, &w, true), vec![0.0, 8.0, 0.0, 8.0]);
    }

    #[test]
    fn flow_is_conserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = NetworkParams {
            num_nodes: 12,
            communication_edge_ratio: 0.3,
            non_zero_traffic_ratio: 0.2,
            min_capacity: 10,
            max_capacity: 100,
            max_traffic: 30,
        };
        let (links, capacity) = Network::generate_topology(&p, &mut rng);
        assert_eq!(links.len(), (0.3f64 * 66.0).round() as usize);
        let demands = Network::generate_demands(&p, &mut rng, |_, _| true);
        let net = Network {
            num_nodes: 12,
            links,
            capacity,
            demands,
        };
        let adj = net.adjacency();
        let w: Vec<i64> = (0..net.links.len()).map(|_| rng.random_range(1..=5)).collect();
        let loads = ospf_loads(&net, &adj, &w, true);
        // Total load equals sum over demands of volume x (weighted hop count under ECMP) which
        // for unit weights is bounded below by volume x hop distance.
        let unit = vec![1; net.links.len()];
        let lo: f64 = net
            .demands
            .iter()
            .map(|d| d.volume * dijkstra(&adj, &unit, d.src)[d.dst] as f64)
            .sum();
        assert!(loads.iter().sum::<f64>() >= lo - 1e-9);
    }

    #[test]
    fn spanning_tree_is_connected() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = NetworkParams {
            num_nodes: 20,
            communication_edge_ratio: 0.0,
            non_zero_traffic_ratio: 0.1,
            min_capacity: 10,
            max_capacity: 20,
            max_traffic: 5,
        };
        let (links, capacity) = Network::generate_topology(&p, &mut rng);
        assert_eq!(links.len(), 19);
        let net = Network {
            num_nodes: 20,
            links,
            capacity,
            demands: vec![],
        };
        let d = dijkstra(&net.adjacency(), &vec![1; 19], 0);
        assert!(d.iter().all(|&x| x != i64::MAX));
    }

    #[test]
    fn paths_on_square() {
        let net = square_net();
        let adj = net.adjacency();
        assert_eq!(simple_paths(&adj, 0, 3, 4), vec![vec![0, 1, 3], vec![0, 2, 3]]);
        assert!(simple_paths(&adj, 0, 3, 2).is_empty());
        assert_eq!(simple_paths(&adj, 0, 1, 4), vec![vec![0, 1], vec![0, 2, 3, 1]]);
    }
}
