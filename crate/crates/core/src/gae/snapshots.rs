use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::GaeError;
use crate::envs::{make_env, EnvOptions, Instance};
use crate::graph::{normalize_features, Graph};
use crate::parallel::{split_seed, Exec};

/// Plays one random-valid-action episode and returns the normalized graph
/// bundle seen before every step.
fn rollout(instance: &Instance, seed: u64) -> Result<Vec<BTreeMap<String, Graph>>, GaeError> {
    let mut env = make_env(instance, EnvOptions::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    env.reset(rng.random());
    let mut out = Vec::new();
    loop {
        let bundle = env.graphs();
        out.push(bundle.iter().map(|(k, g)| (k.clone(), normalize_features(g))).collect());
        if env.is_done() || env.steps_taken() >= env.cutoff() {
            break;
        }
        let valid = env.valid_actions()?;
        if valid.is_empty() {
            break;
        }
        let a = valid[rng.random_range(0..valid.len())];
        if env.step(a)?.done {
            let bundle = env.graphs();
            out.push(bundle.iter().map(|(k, g)| (k.clone(), normalize_features(g))).collect());
            break;
        }
    }
    Ok(out)
}

/// Normalized graph snapshots grouped by graph name, with at least `min_pool`
/// per name. Rollouts are spread over instances; round `r` of instance `i`
/// uses seed `split_seed(split_seed(seed, i), r)`.
pub fn collect_snapshots(instances: &[Instance], min_pool: usize, seed: u64, exec: Exec) -> Result<BTreeMap<String, Vec<Graph>>, GaeError> {
    if instances.is_empty() {
        return Err(GaeError::Empty);
    }
    let mut pool: BTreeMap<String, Vec<Graph>> = BTreeMap::new();
    let mut round = 0u64;
    loop {
        let batches = exec.map_range(instances.len(), |i| rollout(&instances[i], split_seed(split_seed(seed, i as u64), round)));
        for b in batches {
            for bundle in b? {
                for (name, g) in bundle {
                    pool.entry(name).or_default().push(g);
                }
            }
        }
        round += 1;
        let smallest = pool.values().map(Vec::len).min().unwrap_or(0);
        if smallest >= min_pool.max(1) {
            return Ok(pool);
        }
    }
}
