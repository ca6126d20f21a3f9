use std::collections::BTreeMap;

use super::LatentError;
use crate::graph::{Graph, GraphBundle};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Mean,
    Max,
    Min,
    Sum,
}

impl Pooling {
    pub const ALL: [Pooling; 4] = [Pooling::Mean, Pooling::Max, Pooling::Min, Pooling::Sum];
}

/// Number of structural descriptors per graph.
pub const DESCRIPTORS: usize = 4;

/// Column-wise pooling of the rows of `z`.
pub fn pool_rows(z: &Tensor, op: Pooling) -> Result<Vec<f64>, LatentError> {
    let (n, d) = (z.rows(), z.cols());
    if n == 0 {
        return Err(LatentError::Empty("embedding matrix"));
    }
    let mut out = match op {
        Pooling::Mean | Pooling::Sum => vec![0.0; d],
        Pooling::Max => vec![f64::NEG_INFINITY; d],
        Pooling::Min => vec![f64::INFINITY; d],
    };
    for r in 0..n {
        for (o, &v) in out.iter_mut().zip(z.row_slice(r)) {
            match op {
                Pooling::Mean | Pooling::Sum => *o += v,
                Pooling::Max => *o = o.max(v),
                Pooling::Min => *o = o.min(v),
            }
        }
    }
    if op == Pooling::Mean {
        out.iter_mut().for_each(|o| *o /= n as f64);
    }
    Ok(out)
}

/// Node count, edge count, average degree and density.
pub fn descriptors(g: &Graph) -> [f64; DESCRIPTORS] {
    [g.num_nodes as f64, g.num_edges() as f64, g.avg_degree(), g.density()]
}

/// For every graph (in name order): mean, max, min and sum poolings of its node
/// embeddings followed by its descriptors. With `actions`, the same four
/// poolings of the action embedding matrix are appended.
pub fn build_observation(bundle: &GraphBundle, z: &BTreeMap<String, Tensor>, actions: Option<&Tensor>) -> Result<Vec<f64>, LatentError> {
    let mut out = Vec::new();
    for (name, g) in bundle.iter() {
        let zg = z.get(name).ok_or_else(|| LatentError::MissingGraph(name.clone()))?;
        if g.num_nodes == 0 {
            return Err(LatentError::Empty("graph"));
        }
        for op in Pooling::ALL {
            out.extend(pool_rows(zg, op)?);
        }
        out.extend(descriptors(g));
    }
    if let Some(u) = actions {
        for op in Pooling::ALL {
            out.extend(pool_rows(u, op)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poolings_on_two_rows() {
        let z = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(pool_rows(&z, Pooling::Mean).unwrap(), vec![2.0, 3.0]);
        assert_eq!(pool_rows(&z, Pooling::Sum).unwrap(), vec![4.0, 6.0]);
        assert_eq!(pool_rows(&z, Pooling::Max).unwrap(), vec![3.0, 4.0]);
        assert_eq!(pool_rows(&z, Pooling::Min).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn path_graph_descriptors() {
        let g = Graph::new(4, false, [(0, 1), (1, 2), (2, 3)]).unwrap();
        assert_eq!(descriptors(&g), [4.0, 3.0, 1.5, 0.5]);
    }

    #[test]
    fn observation_layout_and_permutation_invariance() {
        let g = Graph::new(3, false, [(0, 1), (1, 2)]).unwrap();
        let bundle = GraphBundle::single("G", g);
        let z = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]]).unwrap();
        let zp = Tensor::from_rows(&[vec![0.5, 0.5], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let a = build_observation(&bundle, &BTreeMap::from([("G".to_string(), z)]), None).unwrap();
        let b = build_observation(&bundle, &BTreeMap::from([("G".to_string(), zp)]), None).unwrap();
        assert_eq!(a.len(), 4 * 2 + DESCRIPTORS);
        assert_eq!(a, b);
        let u = Tensor::from_rows(&[vec![1.0], vec![3.0]]).unwrap();
        let c = build_observation(&bundle, &BTreeMap::from([("G".to_string(), Tensor::zeros(&[3, 2]))]), Some(&u)).unwrap();
        assert_eq!(&c[c.len() - 4..], &[2.0, 3.0, 1.0, 4.0]);
    }

    #[test]
    fn empty_graph_is_an_error() {
        let bundle = GraphBundle::single("G", Graph::new(0, false, []).unwrap());
        let z = BTreeMap::from([("G".to_string(), Tensor::zeros(&[0, 2]))]);
        assert!(build_observation(&bundle, &z, None).is_err());
    }
}
