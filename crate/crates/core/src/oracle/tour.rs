//! Stochastic 2-opt in both directions.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::envs::tsp::TspInstance;

/// Length change from reversing `tour[i+1..=j]`.
fn delta(d: &TspInstance, t: &[usize], i: usize, j: usize) -> f64 {
    let n = t.len();
    let (a, b, c, e) = (t[i], t[i + 1], t[j], t[(j + 1) % n]);
    d.dist(a, c) + d.dist(b, e) - d.dist(a, b) - d.dist(c, e)
}

fn moves(n: usize) -> Vec<(usize, usize)> {
    let mut m = Vec::new();
    for i in 0..n.saturating_sub(2) {
        for j in i + 2..n {
            if !(i == 0 && j == n - 1) {
                m.push((i, j));
            }
        }
    }
    m
}

/// Softmax over `|Δ|` (temperature 1), shifted by the maximum for stability.
fn pick(cands: &[((usize, usize), f64)], rng: &mut impl Rng) -> (usize, usize) {
    let top = cands.iter().map(|c| c.1.abs()).fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = cands.iter().map(|c| (c.1.abs() - top).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut r = rng.random_range(0.0..total);
    for (c, wi) in cands.iter().zip(&w) {
        if r < *wi {
            return c.0;
        }
        r -= wi;
    }
    cands[cands.len() - 1].0
}

/// Runs 2-opt from `tour` until no move in the requested direction remains.
/// Each step samples `batch` random moves; if none qualifies, every move is scanned.
pub fn local_search(d: &TspInstance, tour: &mut [usize], improve: bool, batch: usize, rng: &mut impl Rng) {
    let all = moves(tour.len());
    if all.is_empty() {
        return;
    }
    let good = |x: f64| if improve { x < -1e-12 } else { x > 1e-12 };
    loop {
        let mut cands: Vec<((usize, usize), f64)> = (0..batch)
            .map(|_| all[rng.random_range(0..all.len())])
            .map(|m| (m, delta(d, tour, m.0, m.1)))
            .filter(|c| good(c.1))
            .collect();
        if cands.is_empty() {
            cands = all.iter().map(|&m| (m, delta(d, tour, m.0, m.1))).filter(|c| good(c.1)).collect();
            if cands.is_empty() {
                return;
            }
        }
        let (i, j) = pick(&cands, rng);
        tour[i + 1..=j].reverse();
    }
}

/// One sweep: a random tour refined downwards and a copy refined upwards.
pub fn sweep(d: &TspInstance, batch: usize, rng: &mut impl Rng) -> ((f64, Vec<usize>), (f64, Vec<usize>)) {
    let mut t: Vec<usize> = (0..d.coords.len()).collect();
    t.shuffle(rng);
    let mut lo = t.clone();
    local_search(d, &mut lo, true, batch, rng);
    local_search(d, &mut t, false, batch, rng);
    ((d.tour_length(&lo), lo), (d.tour_length(&t), t))
}
