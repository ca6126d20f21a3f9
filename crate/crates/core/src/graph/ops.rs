use super::{AttrKind, Attribute, Graph, GraphError, Normalization};

/// Applies each attribute's declared normalization.
///
/// Min-max scales every column of an attribute to `[0, 1]` within this graph
/// (constant columns become 0). L1 divides each row by its L1 norm.
pub fn normalize_features(g: &Graph) -> Graph {
    let mut out = g.clone();
    for a in out.node_attrs.values_mut().chain(out.edge_attrs.values_mut()) {
        normalize_attr(a);
    }
    out
}

fn normalize_attr(a: &mut Attribute) {
    if !matches!(a.kind, AttrKind::Continuous { .. }) {
        return;
    }
    match a.normalization {
        Normalization::None => {}
        Normalization::MinMax => {
            let width = a.kind.width();
            for c in 0..width {
                let (lo, hi) = a
                    .values
                    .iter()
                    .map(|r| r[c])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                let span = hi - lo;
                for r in a.values.iter_mut() {
                    r[c] = if span > 0.0 { (r[c] - lo) / span } else { 0.0 };
                }
            }
        }
        Normalization::L1 => {
            for r in a.values.iter_mut() {
                let norm: f64 = r.iter().map(|v| v.abs()).sum();
                if norm > 0.0 {
                    r.iter_mut().for_each(|v| *v /= norm);
                }
            }
        }
    }
}

/// Keeps, for every node, its `k` incident edges with the smallest weight.
///
/// The result is the union of the per-node selections, so an undirected edge
/// survives if either endpoint picked it. Ties go to the lower neighbour index.
/// Directed graphs select among out-edges. `k >= |V|` returns the graph unchanged.
pub fn sparsify_knn(g: &Graph, k: usize, weight_attr: &str) -> Result<Graph, GraphError> {
    let attr = g
        .edge_attrs
        .get(weight_attr)
        .ok_or_else(|| GraphError::UnknownAttribute(weight_attr.to_string()))?;
    if attr.kind != (AttrKind::Continuous { dim: 1 }) {
        return Err(GraphError::Schema(format!("{weight_attr} is not a scalar continuous attribute")));
    }
    if k >= g.num_nodes {
        return Ok(g.clone());
    }
    let mut incident: Vec<Vec<(f64, usize, usize)>> = vec![Vec::new(); g.num_nodes];
    for (i, &(u, v)) in g.edges().iter().enumerate() {
        let w = attr.values[i][0];
        incident[u].push((w, v, i));
        if !g.directed {
            incident[v].push((w, u, i));
        }
    }
    let mut keep = vec![false; g.num_edges()];
    for list in incident.iter_mut() {
        list.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, _, i) in list.iter().take(k) {
            keep[i] = true;
        }
    }
    let idx: Vec<usize> = (0..g.num_edges()).filter(|&i| keep[i]).collect();
    Ok(g.with_edge_subset(&idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn euclid(points: &[(f64, f64)]) -> Graph {
        let mut g = Graph::complete(points.len(), false);
        let w = g
            .edges()
            .iter()
            .map(|&(u, v)| ((points[u].0 - points[v].0).powi(2) + (points[u].1 - points[v].1).powi(2)).sqrt())
            .collect::<Vec<_>>();
        g.set_edge_attr("dist", Attribute::scalar(w, Normalization::None)).unwrap();
        g
    }

    #[test]
    fn min_max_column() {
        let mut g = Graph::new(3, false, []).unwrap();
        g.set_node_attr("c", Attribute::scalar([10.0, 20.0, 30.0], Normalization::MinMax)).unwrap();
        g.set_node_attr("k", Attribute::scalar([5.0, 5.0, 5.0], Normalization::MinMax)).unwrap();
        let n = normalize_features(&g);
        assert_eq!(n.node_attrs["c"].values, vec![vec![0.0], vec![0.5], vec![1.0]]);
        assert_eq!(n.node_attrs["k"].values, vec![vec![0.0]; 3]);
    }

    #[test]
    fn l1_row_and_untouched_kinds() {
        let mut g = Graph::new(1, false, []).unwrap();
        g.set_node_attr("e", Attribute::continuous(vec![vec![2.0, -2.0, 4.0]], Normalization::L1)).unwrap();
        g.set_node_attr("b", Attribute::binary([true])).unwrap();
        let n = normalize_features(&g);
        assert_eq!(n.node_attrs["e"].values, vec![vec![0.25, -0.25, 0.5]]);
        assert_eq!(n.node_attrs["b"], g.node_attrs["b"]);
    }

    /// Independent oracle: for each node sort all other nodes by distance (ties by index).
    fn knn_oracle(points: &[(f64, f64)], k: usize) -> Vec<(usize, usize)> {
        let n = points.len();
        let d = |a: usize, b: usize| ((points[a].0 - points[b].0).powi(2) + (points[a].1 - points[b].1).powi(2)).sqrt();
        let mut set = std::collections::BTreeSet::new();
        for u in 0..n {
            let mut others: Vec<usize> = (0..n).filter(|&v| v != u).collect();
            others.sort_by(|&a, &b| d(u, a).partial_cmp(&d(u, b)).unwrap().then(a.cmp(&b)));
            for &v in others.iter().take(k) {
                set.insert((u.min(v), u.max(v)));
            }
        }
        set.into_iter().collect()
    }

    #[test]
    fn line_k1_matches_exhaustive_sort() {
        let pts = [(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)];
        let s = sparsify_knn(&euclid(&pts), 1, "dist").unwrap();
        // Node 1 is equidistant from 0 and 2 and keeps 0; node 2 keeps 1; node 3 keeps 2.
        assert_eq!(s.edges(), &[(0, 1), (1, 2), (2, 3)]);
        assert_eq!(s.edges(), knn_oracle(&pts, 1).as_slice());
    }

    #[test]
    fn square_k2_drops_diagonals() {
        let pts = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        let s = sparsify_knn(&euclid(&pts), 2, "dist").unwrap();
        assert_eq!(s.edges(), &[(0, 1), (0, 3), (1, 2), (2, 3)]);
    }

    #[test]
    fn large_k_is_identity() {
        let pts = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        let g = euclid(&pts);
        assert_eq!(sparsify_knn(&g, 3, "dist").unwrap(), g);
        assert_eq!(sparsify_knn(&g, 10, "dist").unwrap(), g);
    }

    proptest! {
        #[test]
        fn knn_matches_oracle_and_is_bounded(pts in proptest::collection::vec((0.0f64..10.0, 0.0f64..10.0), 3..12), k in 1usize..5) {
            let g = euclid(&pts);
            let s = sparsify_knn(&g, k, "dist").unwrap();
            prop_assert!(s.num_edges() <= k * pts.len());
            for &(u, v) in s.edges() {
                prop_assert!(g.has_edge(u, v));
            }
            if k < pts.len() {
                prop_assert_eq!(s.edges().to_vec(), knn_oracle(&pts, k));
            }
            let w = &s.edge_attrs["dist"].values;
            for (i, &(u, v)) in s.edges().iter().enumerate() {
                let d = ((pts[u].0 - pts[v].0).powi(2) + (pts[u].1 - pts[v].1).powi(2)).sqrt();
                prop_assert_eq!(w[i][0], d);
            }
        }

        #[test]
        fn min_max_is_idempotent(vals in proptest::collection::vec(-1e4f64..1e4, 1..20)) {
            let mut g = Graph::new(vals.len(), false, []).unwrap();
            g.set_node_attr("v", Attribute::scalar(vals, Normalization::MinMax)).unwrap();
            let once = normalize_features(&g);
            let twice = normalize_features(&once);
            prop_assert_eq!(once, twice);
        }
    }
}
