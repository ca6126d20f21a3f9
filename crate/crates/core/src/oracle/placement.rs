//! Packing and balancing constructions refined by stochastic reassignment.

use rand::Rng;

use crate::envs::placement::{PlacementInstance, RESOURCES};

/// Places VMs in `order`, choosing the feasible PM with the least (`pack`) or most remaining slack.
pub fn construct(d: &PlacementInstance, order: &[usize], pack: bool) -> Option<Vec<usize>> {
    let mut usage = vec![[0.0; RESOURCES]; d.pms.len()];
    let mut alloc = vec![0; d.vms.len()];
    for &vm in order {
        let mut best: Option<(f64, usize)> = None;
        for pm in 0..d.pms.len() {
            if !d.fits(&usage, vm, pm, None) {
                continue;
            }
            let slack: f64 = (0..RESOURCES)
                .map(|r| (d.pms[pm].capacity[r] - usage[pm][r] - d.vms[vm].demand[r]) / d.pms[pm].capacity[r])
                .sum();
            let better = match best {
                None => true,
                Some((s, _)) => (pack && slack < s) || (!pack && slack > s),
            };
            if better {
                best = Some((slack, pm));
            }
        }
        let (_, pm) = best?;
        alloc[vm] = pm;
        for r in 0..RESOURCES {
            usage[pm][r] += d.vms[vm].demand[r];
        }
    }
    Some(alloc)
}

/// Random single-VM moves, kept when they lower (or, with `minimize == false`, raise) the cost.
pub fn refine(d: &PlacementInstance, alloc: &mut [usize], minimize: bool, steps: usize, rng: &mut impl Rng) -> f64 {
    let mut cost = d.cost(alloc);
    let mut usage = d.usage(alloc);
    let np = d.pms.len();
    for _ in 0..steps {
        let vm = rng.random_range(0..alloc.len());
        let pm = rng.random_range(0..np);
        let cur = alloc[vm];
        if pm == cur || !d.fits(&usage, vm, pm, Some(cur)) {
            continue;
        }
        alloc[vm] = pm;
        let c = d.cost(alloc);
        if (minimize && c < cost) || (!minimize && c > cost) {
            cost = c;
            for r in 0..RESOURCES {
                usage[cur][r] -= d.vms[vm].demand[r];
                usage[pm][r] += d.vms[vm].demand[r];
            }
        } else {
            alloc[vm] = cur;
        }
    }
    cost
}

/// One sweep: a noisy high-demand-first order, a random construction, then refinement both ways.
pub fn sweep(d: &PlacementInstance, rng: &mut impl Rng) -> ((f64, Vec<usize>), (f64, Vec<usize>)) {
    let mut keyed: Vec<(f64, usize)> = (0..d.vms.len()).map(|v| (d.demand_weight(v) * rng.random_range(0.8..1.2), v)).collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let order: Vec<usize> = keyed.into_iter().map(|k| k.1).collect();
    let pack = rng.random_bool(0.5);
    let start = construct(d, &order, pack)
        .or_else(|| construct(d, &order, !pack))
        .or_else(|| d.best_fit_decreasing())
        .expect("generated placement instances are feasible");
    let steps = 2 * d.vms.len();
    let mut lo = start.clone();
    let lo_cost = refine(d, &mut lo, true, steps, rng);
    let mut hi = start;
    let hi_cost = refine(d, &mut hi, false, steps, rng);
    ((lo_cost, lo), (hi_cost, hi))
}
