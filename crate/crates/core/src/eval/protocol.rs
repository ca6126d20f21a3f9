use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Smallest,
    Medium,
    Largest,
    Varied,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [StrategyKind::Smallest, StrategyKind::Medium, StrategyKind::Largest, StrategyKind::Varied];

    pub fn letter(self) -> &'static str {
        match self {
            StrategyKind::Smallest => "S",
            StrategyKind::Medium => "M",
            StrategyKind::Largest => "L",
            StrategyKind::Varied => "V",
        }
    }

    /// Accepts the letter or the full name, case-insensitively.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|k| k.letter().eq_ignore_ascii_case(&s) || serde_json::to_value(k).ok().and_then(|v| v.as_str().map(|x| x == s)).unwrap_or(false))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub kind: StrategyKind,
    pub repeats: usize,
    pub varied_fraction: f64,
    /// Episodes between training-instance switches (varied only).
    pub rotation_interval: usize,
}

impl Strategy {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            repeats: 5,
            varied_fraction: 0.2,
            rotation_interval: 50,
        }
    }
}

/// Training seeds of the repeated runs.
pub const TRAIN_SEEDS: [u64; 5] = [42, 100, 123, 200, 300];

/// Episodes per test instance.
pub const TEST_EPISODES: usize = 5;

/// 42, 100, 123, 200, then 400, 500, ... in steps of 100 up to 5000.
pub fn test_seeds(count: usize) -> Vec<u64> {
    [42u64, 100, 123, 200].into_iter().chain((4..=50).map(|k| k * 100)).take(count).collect()
}

/// Training and test instance indices of one repeat.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub repeat: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Instance splits for every repeat. `sizes[i]` is the size of instance `i`.
///
/// S/M/L take the smallest, median or largest instance of a pool from which
/// earlier picks are removed. V shuffles with `seed` and cuts disjoint folds.
pub fn splits(sizes: &[usize], strategy: &Strategy, seed: u64) -> Result<Vec<Split>, EvalError> {
    let n = sizes.len();
    let r = strategy.repeats;
    let complement = |train: &[usize]| (0..n).filter(|i| !train.contains(i)).collect::<Vec<_>>();
    match strategy.kind {
        StrategyKind::Varied => {
            let fold = (strategy.varied_fraction * n as f64).round() as usize;
            if fold == 0 || fold * r > n || fold == n {
                return Err(EvalError::TooFewInstances { have: n, strategy: strategy.kind });
            }
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            Ok((0..r)
                .map(|k| {
                    let mut train = perm[k * fold..(k + 1) * fold].to_vec();
                    train.sort_unstable();
                    Split {
                        repeat: k,
                        test: complement(&train),
                        train,
                    }
                })
                .collect())
        }
        kind => {
            if n < r + 1 {
                return Err(EvalError::TooFewInstances { have: n, strategy: kind });
            }
            let mut pool: Vec<usize> = (0..n).collect();
            pool.sort_by_key(|&i| (sizes[i], i));
            let mut out = Vec::with_capacity(r);
            for k in 0..r {
                let pos = match kind {
                    StrategyKind::Smallest => 0,
                    StrategyKind::Largest => pool.len() - 1,
                    _ => (pool.len() - 1) / 2,
                };
                let pick = pool.remove(pos);
                out.push(Split {
                    repeat: k,
                    train: vec![pick],
                    test: complement(&[pick]),
                });
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_sequence() {
        assert_eq!(test_seeds(7), vec![42, 100, 123, 200, 400, 500, 600]);
        assert_eq!(*test_seeds(1000).last().unwrap(), 5000);
        assert_eq!(test_seeds(1000).len(), 4 + 47);
    }

    #[test]
    fn smallest_removes_previous_picks() {
        let sizes = [30, 10, 20, 50, 40, 15, 25];
        let s = splits(&sizes, &Strategy::new(StrategyKind::Smallest), 42).unwrap();
        let picks: Vec<usize> = s.iter().map(|x| x.train[0]).collect();
        assert_eq!(picks, vec![1, 5, 2, 6, 0]);
        assert!(s.iter().all(|x| x.test.len() == 6 && !x.test.contains(&x.train[0])));
        let l = splits(&sizes, &Strategy::new(StrategyKind::Largest), 42).unwrap();
        assert_eq!(l[0].train, vec![3]);
        assert_eq!(l[1].train, vec![4]);
        let m = splits(&sizes, &Strategy::new(StrategyKind::Medium), 42).unwrap();
        // Sorted: 10 15 20 25 30 40 50 -> median 25 (index 6), then 20 (index 2) of the remaining six.
        assert_eq!(m[0].train, vec![6]);
        assert_eq!(m[1].train, vec![2]);
    }

    #[test]
    fn varied_folds_are_disjoint_and_deterministic() {
        let sizes: Vec<usize> = (0..101).collect();
        let st = Strategy::new(StrategyKind::Varied);
        let s = splits(&sizes, &st, 42).unwrap();
        assert_eq!(s.len(), 5);
        let mut all: Vec<usize> = s.iter().flat_map(|x| x.train.clone()).collect();
        assert!(s.iter().all(|x| x.train.len() == 20 && x.test.len() == 81));
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 100);
        assert_eq!(s, splits(&sizes, &st, 42).unwrap());
        assert_ne!(s, splits(&sizes, &st, 7).unwrap());
    }

    #[test]
    fn too_few_instances() {
        assert!(splits(&[1, 2, 3], &Strategy::new(StrategyKind::Smallest), 0).is_err());
        assert!(splits(&[1, 2, 3], &Strategy::new(StrategyKind::Varied), 0).is_err());
    }

    #[test]
    fn parse_strategy() {
        assert_eq!(StrategyKind::parse("S"), Some(StrategyKind::Smallest));
        assert_eq!(StrategyKind::parse("varied"), Some(StrategyKind::Varied));
        assert_eq!(StrategyKind::parse("x"), None);
    }
}
