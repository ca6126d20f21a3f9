//! Elite-pool stochastic search over integer vectors, used for link weights and path assignments.

use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::parallel::split_seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EliteConfig {
    pub sweeps: usize,
    pub pool: usize,
    pub restart_prob: f64,
    pub perturb_frac: f64,
    pub neighbors: usize,
    pub seed: u64,
}

/// Best (lowest) and worst (highest) objective found, with their vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EliteResult {
    pub best: (f64, Vec<usize>),
    pub worst: (f64, Vec<usize>),
}

struct Pool {
    items: Vec<(f64, Vec<usize>)>,
    cap: usize,
    low: bool,
}

impl Pool {
    fn offer(&mut self, v: f64, x: &[usize]) {
        if self.items.iter().any(|(_, y)| y == x) {
            return;
        }
        self.items.push((v, x.to_vec()));
        let low = self.low;
        self.items.sort_by(|a, b| if low { a.0.total_cmp(&b.0) } else { b.0.total_cmp(&a.0) });
        self.items.truncate(self.cap);
    }
}

fn perturb(x: &mut [usize], domain: &[usize], frac: f64, rng: &mut impl Rng) {
    let k = ((x.len() as f64 * frac).round() as usize).max(1);
    for _ in 0..k {
        let i = rng.random_range(0..x.len());
        x[i] = rng.random_range(0..domain[i]);
    }
}

/// `domain[i]` is the number of values coordinate `i` may take. Sweep `s` aims
/// low when even and high when odd; it starts from a fresh random vector with
/// probability `restart_prob` (or while the pool is empty), otherwise from a
/// perturbed elite of its direction, then climbs through the best of
/// `neighbors` unexplored perturbations per round.
pub fn search(domain: &[usize], cfg: &EliteConfig, eval: impl Fn(&[usize]) -> f64) -> EliteResult {
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut low = Pool { items: Vec::new(), cap: cfg.pool.max(1), low: true };
    let mut high = Pool { items: Vec::new(), cap: cfg.pool.max(1), low: false };
    let zero = vec![0; domain.len()];
    let z = eval(&zero);
    let mut best = (z, zero.clone());
    let mut worst = (z, zero.clone());
    low.offer(z, &zero);
    high.offer(z, &zero);
    seen.insert(zero);
    if domain.is_empty() {
        return EliteResult { best, worst };
    }
    let mut record = |v: f64, x: &Vec<usize>, low: &mut Pool, high: &mut Pool| {
        if v < best.0 {
            best = (v, x.clone());
        }
        if v > worst.0 {
            worst = (v, x.clone());
        }
        low.offer(v, x);
        high.offer(v, x);
    };
    for s in 0..cfg.sweeps {
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed(cfg.seed, s as u64));
        let aim_low = s % 2 == 0;
        let pool = if aim_low { &low } else { &high };
        let mut start: Vec<usize> = if rng.random_bool(cfg.restart_prob) {
            domain.iter().map(|&m| rng.random_range(0..m)).collect()
        } else {
            let mut x = pool.items[rng.random_range(0..pool.items.len())].1.clone();
            perturb(&mut x, domain, cfg.perturb_frac, &mut rng);
            x
        };
        let mut cur = if seen.insert(start.clone()) {
            let v = eval(&start);
            record(v, &start, &mut low, &mut high);
            v
        } else {
            eval(&start)
        };
        // Climb while the best neighbour beats the current point in this sweep's direction.
        loop {
            let mut chosen: Option<(f64, Vec<usize>)> = None;
            for _ in 0..cfg.neighbors {
                let mut y = start.clone();
                perturb(&mut y, domain, cfg.perturb_frac, &mut rng);
                if !seen.insert(y.clone()) {
                    continue;
                }
                let v = eval(&y);
                record(v, &y, &mut low, &mut high);
                if chosen.as_ref().is_none_or(|c| if aim_low { v < c.0 } else { v > c.0 }) {
                    chosen = Some((v, y));
                }
            }
            match chosen {
                Some((v, y)) if (aim_low && v < cur) || (!aim_low && v > cur) => {
                    cur = v;
                    start = y;
                }
                _ => break,
            }
        }
    }
    EliteResult { best, worst }
}
