use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LatentError;
use crate::envs::Action;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"LAGL";
const MIN_STD: f64 = 1e-12;

/// Z-score statistics and box bounds fitted on training instances, then frozen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl LatentStats {
    /// Per-dimension mean and population std over all rows of all matrices;
    /// a zero-variance dimension keeps std 1. The box is the normalized
    /// range widened by 1 on each side.
    pub fn fit(raw: &[&Tensor]) -> Result<Self, LatentError> {
        let q = raw.first().ok_or(LatentError::Empty("training embeddings"))?.cols();
        let mut count = 0usize;
        let mut sum = vec![0.0; q];
        for t in raw {
            if t.cols() != q {
                return Err(LatentError::Dim { expected: q, found: t.cols() });
            }
            for r in 0..t.rows() {
                sum.iter_mut().zip(t.row_slice(r)).for_each(|(s, v)| *s += v);
            }
            count += t.rows();
        }
        if count == 0 {
            return Err(LatentError::Empty("training embeddings"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut var = vec![0.0; q];
        for t in raw {
            for r in 0..t.rows() {
                for (c, v) in t.row_slice(r).iter().enumerate() {
                    var[c] += (v - mean[c]).powi(2);
                }
            }
        }
        let std: Vec<f64> = var
            .iter()
            .map(|v| {
                let s = (v / count as f64).sqrt();
                if s > MIN_STD {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        let mut lo = vec![f64::INFINITY; q];
        let mut hi = vec![f64::NEG_INFINITY; q];
        for t in raw {
            for r in 0..t.rows() {
                for (c, v) in t.row_slice(r).iter().enumerate() {
                    let x = (v - mean[c]) / std[c];
                    lo[c] = lo[c].min(x);
                    hi[c] = hi[c].max(x);
                }
            }
        }
        lo.iter_mut().for_each(|x| *x -= 1.0);
        hi.iter_mut().for_each(|x| *x += 1.0);
        Ok(Self { mean, std, lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| v * s + m).collect()
    }

    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.lo.iter().zip(&self.hi)).map(|(v, (l, h))| v.clamp(*l, *h)).collect()
    }
}

/// The normalized embeddings of one instance's action table with a flat
/// exhaustive cosine index. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSpace {
    pub actions: Vec<Action>,
    pub stats: LatentStats,
    embeddings: Tensor,
    norms: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dims: [usize; 2],
    stats: LatentStats,
    actions: Vec<Action>,
}

fn row_norms(t: &Tensor) -> Vec<f64> {
    (0..t.rows()).map(|r| t.row_slice(r).iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
}

fn cosine(u: &[f64], nu: f64, p: &[f64], np: f64) -> f64 {
    if nu == 0.0 || np == 0.0 {
        return 0.0;
    }
    u.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() / (nu * np)
}

/// Exact top-`k` rows of `emb` by cosine similarity to `proto`, among rows
/// allowed by `mask`. Ties go to the lower row index.
pub fn knn_scan(emb: &Tensor, proto: &[f64], k: usize, mask: Option<&[bool]>) -> Vec<usize> {
    knn_with_norms(emb, &row_norms(emb), proto, k, mask)
}

fn knn_with_norms(emb: &Tensor, norms: &[f64], proto: &[f64], k: usize, mask: Option<&[bool]>) -> Vec<usize> {
    let np = proto.iter().map(|v| v * v).sum::<f64>().sqrt();
    let allowed = |i: usize| mask.is_none_or(|m| m[i]);
    if k == 1 {
        let mut best: Option<(f64, usize)> = None;
        for i in (0..emb.rows()).filter(|&i| allowed(i)) {
            let s = cosine(emb.row_slice(i), norms[i], proto, np);
            if best.is_none_or(|(b, _)| s > b) {
                best = Some((s, i));
            }
        }
        return best.map(|b| vec![b.1]).unwrap_or_default();
    }
    let mut scored: Vec<(f64, usize)> = (0..emb.rows())
        .filter(|&i| allowed(i))
        .map(|i| (cosine(emb.row_slice(i), norms[i], proto, np), i))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|x| x.1).collect()
}

impl LatentSpace {
    /// Normalizes `raw` (one row per action) with frozen `stats` and indexes it.
    pub fn build(actions: Vec<Action>, raw: &Tensor, stats: LatentStats) -> Result<Self, LatentError> {
        if actions.is_empty() {
            return Err(LatentError::Empty("action set"));
        }
        if raw.rows() != actions.len() {
            return Err(LatentError::Dim {
                expected: actions.len(),
                found: raw.rows(),
            });
        }
        if raw.cols() != stats.dim() {
            return Err(LatentError::Dim {
                expected: stats.dim(),
                found: raw.cols(),
            });
        }
        let mut data = Vec::with_capacity(raw.len());
        for r in 0..raw.rows() {
            data.extend(stats.normalize(raw.row_slice(r)));
        }
        let embeddings = Tensor::new(raw.shape().to_vec(), data).expect("same shape");
        let norms = row_norms(&embeddings);
        Ok(Self {
            actions,
            stats,
            embeddings,
            norms,
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.stats.dim()
    }

    /// Normalized embedding matrix `U`.
    pub fn embeddings(&self) -> &Tensor {
        &self.embeddings
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        self.embeddings.row_slice(i)
    }

    /// Clamps `proto` to the box, then returns the indices of the `k` most
    /// cosine-similar valid actions, best first.
    pub fn decode(&self, proto: &[f64], k: usize, mask: Option<&[bool]>) -> Result<Vec<usize>, LatentError> {
        if proto.len() != self.dim() {
            return Err(LatentError::Dim {
                expected: self.dim(),
                found: proto.len(),
            });
        }
        if let Some(m) = mask {
            if m.len() != self.len() {
                return Err(LatentError::Dim {
                    expected: self.len(),
                    found: m.len(),
                });
            }
            if !m.iter().any(|&b| b) {
                return Err(LatentError::Empty("valid action set"));
            }
        }
        let p = self.stats.clamp(proto);
        Ok(knn_with_norms(&self.embeddings, &self.norms, &p, k.max(1), mask))
    }

    /// Number of actions whose embedding duplicates an earlier one.
    pub fn collisions(&self) -> usize {
        let mut seen = std::collections::HashSet::new();
        (0..self.len())
            .filter(|&i| !seen.insert(self.embedding(i).iter().map(|v| v.to_bits()).collect::<Vec<_>>()))
            .count()
    }

    /// JSON header (dims, stats, actions) followed by the embeddings as little-endian f64.
    pub fn write(&self, mut w: impl Write) -> Result<(), LatentError> {
        let io = |e: std::io::Error| LatentError::Io(e.to_string());
        let header = Header {
            dims: [self.len(), self.dim()],
            stats: self.stats.clone(),
            actions: self.actions.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| LatentError::Io(e.to_string()))?;
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&json).map_err(io)?;
        for v in self.embeddings.data() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        Ok(())
    }

    pub fn read(mut r: impl Read) -> Result<Self, LatentError> {
        let io = |e: std::io::Error| LatentError::Io(e.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(LatentError::Io("bad magic".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(io)?;
        let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut json).map_err(io)?;
        let h: Header = serde_json::from_slice(&json).map_err(|e| LatentError::Io(e.to_string()))?;
        let [n, q] = h.dims;
        let mut data = Vec::with_capacity(n * q);
        let mut buf = [0u8; 8];
        for _ in 0..n * q {
            r.read_exact(&mut buf).map_err(io)?;
            data.push(f64::from_le_bytes(buf));
        }
        let embeddings = Tensor::new(vec![n, q], data).map_err(|e| LatentError::Io(e.to_string()))?;
        let norms = row_norms(&embeddings);
        Ok(Self {
            actions: h.actions,
            stats: h.stats,
            embeddings,
            norms,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), LatentError> {
        let f = std::fs::File::create(path).map_err(|e| LatentError::Io(format!("{}: {e}", path.display())))?;
        self.write(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self, LatentError> {
        let f = std::fs::File::open(path).map_err(|e| LatentError::Io(format!("{}: {e}", path.display())))?;
        Self::read(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn space_from(rows: &[Vec<f64>]) -> LatentSpace {
        let raw = Tensor::from_rows(rows).unwrap();
        let stats = LatentStats::fit(&[&raw]).unwrap();
        LatentSpace::build((0..rows.len()).map(Action::node).collect(), &raw, stats).unwrap()
    }

    #[test]
    fn zscore_and_box() {
        let s = space_from(&[vec![0.0, 5.0], vec![2.0, 5.0]]);
        assert_eq!(s.embedding(0), &[-1.0, 0.0]);
        assert_eq!(s.embedding(1), &[1.0, 0.0]);
        assert_eq!(s.stats.std[1], 1.0);
        assert_eq!((s.stats.lo[0], s.stats.hi[0]), (-2.0, 2.0));
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn frozen_stats_apply_to_other_instances() {
        let a = Tensor::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![4.0]]).unwrap();
        let stats = LatentStats::fit(&[&a]).unwrap();
        let s = LatentSpace::build(vec![Action::node(0)], &b, stats).unwrap();
        assert_eq!(s.embedding(0), &[3.0]);
    }

    #[test]
    fn training_rows_are_standardized_and_inside_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::new(vec![50, 4], (0..200).map(|_| rng.random_range(-3.0..7.0)).collect()).unwrap();
        let b = Tensor::new(vec![30, 4], (0..120).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let stats = LatentStats::fit(&[&a, &b]).unwrap();
        let mut all = Vec::new();
        for t in [&a, &b] {
            for r in 0..t.rows() {
                all.push(stats.normalize(t.row_slice(r)));
            }
        }
        for c in 0..4 {
            let m: f64 = all.iter().map(|r| r[c]).sum::<f64>() / all.len() as f64;
            let v: f64 = all.iter().map(|r| (r[c] - m).powi(2)).sum::<f64>() / all.len() as f64;
            assert!(m.abs() < 1e-6 && (v.sqrt() - 1.0).abs() < 1e-6);
            assert!(all.iter().all(|r| r[c] > stats.lo[c] && r[c] < stats.hi[c]));
        }
    }

    #[test]
    fn decode_exact_match_and_mask() {
        let s = space_from(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, -1.0]]);
        for i in 0..3 {
            assert_eq!(s.decode(s.embedding(i), 1, None).unwrap(), vec![i]);
        }
        let mask = [false, false, true];
        assert_eq!(s.decode(s.embedding(0), 1, Some(&mask)).unwrap(), vec![2]);
        assert!(s.decode(&[0.0, 0.0], 1, Some(&[false; 3])).is_err());
        assert!(s.decode(&[0.0], 1, None).is_err());
    }

    #[test]
    fn ties_go_to_lower_index() {
        let emb = Tensor::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.0], vec![1.0, 0.0], vec![3.0, 0.0]]).unwrap();
        assert_eq!(knn_scan(&emb, &[1.0, 0.0], 1, None), vec![1]);
        assert_eq!(knn_scan(&emb, &[1.0, 0.0], 4, None), vec![1, 2, 3, 0]);
    }

    #[test]
    fn dump_round_trips() {
        let s = space_from(&[vec![0.3, -1.0], vec![2.0, 0.25], vec![1.0, 1.0]]);
        let mut buf = Vec::new();
        s.write(&mut buf).unwrap();
        assert_eq!(LatentSpace::read(buf.as_slice()).unwrap(), s);
        assert_eq!(s.collisions(), 0);
        assert_eq!(space_from(&[vec![1.0], vec![1.0], vec![2.0]]).collisions(), 1);
    }

    proptest! {
        #[test]
        fn full_ranking_is_sorted_by_cosine(seed in 0u64..500, n in 2usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let s = space_from(&rows);
            let p: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let order = s.decode(&p, n, None).unwrap();
            prop_assert_eq!(order.len(), n);
            let pc = s.stats.clamp(&p);
            let cos = |i: usize| {
                let u = s.embedding(i);
                let d: f64 = u.iter().zip(&pc).map(|(a, b)| a * b).sum();
                d / (u.iter().map(|v| v * v).sum::<f64>().sqrt() * pc.iter().map(|v| v * v).sum::<f64>().sqrt())
            };
            for w in order.windows(2) {
                prop_assert!(cos(w[0]) >= cos(w[1]));
            }
        }

        #[test]
        fn normalize_round_trip(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..10).map(|_| (0..4).map(|_| rng.random_range(-50.0..50.0)).collect()).collect();
            let raw = Tensor::from_rows(&rows).unwrap();
            let st = LatentStats::fit(&[&raw]).unwrap();
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-100.0..100.0)).collect();
            for (a, b) in st.denormalize(&st.normalize(&x)).iter().zip(&x) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn clamping_inside_box_is_identity(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..20).map(|_| (0..3).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
            let s = space_from(&rows);
            let inside: Vec<f64> = (0..3).map(|c| rng.random_range(s.stats.lo[c]..s.stats.hi[c])).collect();
            prop_assert_eq!(s.stats.clamp(&inside), inside.clone());
            let far: Vec<f64> = inside.iter().map(|v| v * 100.0).collect();
            prop_assert_eq!(s.decode(&far, 1, None).unwrap(), s.decode(&s.stats.clamp(&far), 1, None).unwrap());
        }

        #[test]
        fn decode_is_scale_invariant(seed in 0u64..500, scale in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let emb = Tensor::new(vec![30, 4], (0..120).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let p: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let scaled = crate::tensor::map(&emb, |v| v * scale);
            let ps: Vec<f64> = p.iter().map(|v| v * scale).collect();
            prop_assert_eq!(knn_scan(&emb, &p, 1, None), knn_scan(&scaled, &ps, 1, None));
        }
    }
}
