//! Greedy-stochastic vertex cover and gain-proportional max-cut search.

use rand::Rng;

use crate::envs::maxcut::MaxCutInstance;
use crate::envs::minvertex::MinVertexInstance;

/// Greedy cover picking uniformly among the `top_k` nodes covering most
/// uncovered edges, then pruning redundant nodes in descending id order.
pub fn greedy_cover(d: &MinVertexInstance, top_k: usize, rng: &mut impl Rng) -> Vec<bool> {
    let n = d.num_nodes;
    let mut sel = vec![false; n];
    loop {
        let mut gain = vec![0usize; n];
        for &(u, v) in &d.edges {
            if !sel[u] && !sel[v] {
                gain[u] += 1;
                gain[v] += 1;
            }
        }
        let mut cands: Vec<usize> = (0..n).filter(|&v| gain[v] > 0).collect();
        if cands.is_empty() {
            break;
        }
        cands.sort_by(|&a, &b| gain[b].cmp(&gain[a]).then(a.cmp(&b)));
        cands.truncate(top_k.max(1));
        sel[cands[rng.random_range(0..cands.len())]] = true;
    }
    for v in (0..n).rev() {
        if sel[v] && d.edges.iter().all(|&(a, b)| (a != v && b != v) || sel[if a == v { b } else { a }]) {
            sel[v] = false;
        }
    }
    sel
}

/// Random partition, then improving flips chosen with probability proportional to gain.
pub fn local_cut(d: &MaxCutInstance, rng: &mut impl Rng) -> Vec<bool> {
    let n = d.num_nodes;
    let mut side: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    let mut adj = vec![Vec::new(); n];
    for (&(u, v), &w) in d.edges.iter().zip(&d.weights) {
        adj[u].push((v, w));
        adj[v].push((u, w));
    }
    loop {
        let gains: Vec<f64> = (0..n)
            .map(|v| adj[v].iter().map(|&(o, w)| if side[v] == side[o] { w } else { -w }).sum())
            .collect();
        let total: f64 = gains.iter().filter(|g| **g > 1e-12).sum();
        if total <= 0.0 {
            return side;
        }
        let mut r = rng.random_range(0.0..total);
        let mut chosen = n;
        for (v, &g) in gains.iter().enumerate() {
            if g > 1e-12 {
                chosen = v;
                if r < g {
                    break;
                }
                r -= g;
            }
        }
        side[chosen] = !side[chosen];
    }
}
