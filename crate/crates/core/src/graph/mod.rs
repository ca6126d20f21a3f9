//! Typed attributed graphs.
//!
//! A [`Graph`] stores its edge list plus named node and edge attribute
//! tables. Attributes are binary flags, categorical class indices or
//! continuous vectors; each declares how it is normalized before it reaches
//! the encoder.

mod ops;

pub use ops::{normalize_features, sparsify_knn};

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    EdgeOutOfRange(usize, usize, usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("attribute {name}: expected {expected} rows, got {got}")]
    RowCount { name: String, expected: usize, got: usize },
    #[error("attribute {name}: row {row} has width {got}, expected {expected}")]
    RowWidth {
        name: String,
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("attribute {name}: invalid value {value} at row {row}")]
    BadValue { name: String, row: usize, value: f64 },
    #[error("invalid schema for {0}")]
    Schema(String),
    #[error("unknown attribute {0}")]
    UnknownAttribute(String),
    #[error("graph bundle is empty")]
    EmptyBundle,
    #[error("json: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AttrKind {
    Binary,
    Categorical { classes: usize },
    Continuous { dim: usize },
}

impl AttrKind {
    /// Stored width of one row.
    pub fn width(self) -> usize {
        match self {
            AttrKind::Binary | AttrKind::Categorical { .. } => 1,
            AttrKind::Continuous { dim } => dim,
        }
    }

    /// Width once expanded into encoder features (categoricals become one-hot).
    pub fn feature_width(self) -> usize {
        match self {
            AttrKind::Binary => 1,
            AttrKind::Categorical { classes } => classes,
            AttrKind::Continuous { dim } => dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    MinMax,
    L1,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub name: String,
    pub kind: AttrKind,
    pub normalization: Normalization,
}

/// One attribute table: a row per node (or edge).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub kind: AttrKind,
    #[serde(default)]
    pub normalization: Normalization,
    pub values: Vec<Vec<f64>>,
}

impl Attribute {
    pub fn binary(flags: impl IntoIterator<Item = bool>) -> Self {
        Self {
            kind: AttrKind::Binary,
            normalization: Normalization::None,
            values: flags.into_iter().map(|b| vec![if b { 1.0 } else { 0.0 }]).collect(),
        }
    }

    pub fn categorical(classes: usize, labels: impl IntoIterator<Item = usize>) -> Self {
        Self {
            kind: AttrKind::Categorical { classes },
            normalization: Normalization::None,
            values: labels.into_iter().map(|c| vec![c as f64]).collect(),
        }
    }

    pub fn continuous(rows: Vec<Vec<f64>>, normalization: Normalization) -> Self {
        let dim = rows.first().map_or(1, Vec::len);
        Self {
            kind: AttrKind::Continuous { dim },
            normalization,
            values: rows,
        }
    }

    /// Continuous attribute with a declared width, so an empty table keeps its schema.
    pub fn vectors(dim: usize, rows: Vec<Vec<f64>>, normalization: Normalization) -> Self {
        Self {
            kind: AttrKind::Continuous { dim },
            normalization,
            values: rows,
        }
    }

    /// Single-column continuous attribute.
    pub fn scalar(values: impl IntoIterator<Item = f64>, normalization: Normalization) -> Self {
        Self {
            kind: AttrKind::Continuous { dim: 1 },
            normalization,
            values: values.into_iter().map(|v| vec![v]).collect(),
        }
    }

    fn validate(&self, name: &str, rows: usize) -> Result<(), GraphError> {
        match self.kind {
            AttrKind::Categorical { classes } if classes < 2 => return Err(GraphError::Schema(name.into())),
            AttrKind::Continuous { dim } if dim < 1 => return Err(GraphError::Schema(name.into())),
            _ => {}
        }
        if self.values.len() != rows {
            return Err(GraphError::RowCount {
                name: name.into(),
                expected: rows,
                got: self.values.len(),
            });
        }
        let width = self.kind.width();
        for (r, row) in self.values.iter().enumerate() {
            if row.len() != width {
                return Err(GraphError::RowWidth {
                    name: name.into(),
                    row: r,
                    expected: width,
                    got: row.len(),
                });
            }
            for &v in row {
                let ok = match self.kind {
                    AttrKind::Binary => v == 0.0 || v == 1.0,
                    AttrKind::Categorical { classes } => v >= 0.0 && v.fract() == 0.0 && (v as usize) < classes,
                    AttrKind::Continuous { .. } => v.is_finite(),
                };
                if !ok {
                    return Err(GraphError::BadValue {
                        name: name.into(),
                        row: r,
                        value: v,
                    });
                }
            }
        }
        Ok(())
    }

    /// Appends this attribute's encoder features for row `r` to `out`.
    fn push_features(&self, r: usize, out: &mut Vec<f64>) {
        match self.kind {
            AttrKind::Categorical { classes } => {
                let c = self.values[r][0] as usize;
                out.extend((0..classes).map(|k| if k == c { 1.0 } else { 0.0 }));
            }
            _ => out.extend_from_slice(&self.values[r]),
        }
    }
}

/// A typed attributed graph. Undirected edges are stored as `(min, max)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub directed: bool,
    pub num_nodes: usize,
    edges: Vec<(usize, usize)>,
    #[serde(default)]
    pub node_attrs: BTreeMap<String, Attribute>,
    #[serde(default)]
    pub edge_attrs: BTreeMap<String, Attribute>,
}

impl Graph {
    pub fn new(num_nodes: usize, directed: bool, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, GraphError> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for (u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(GraphError::EdgeOutOfRange(u, v, num_nodes));
            }
            let e = if directed { (u, v) } else { (u.min(v), u.max(v)) };
            if !seen.insert(e) {
                return Err(GraphError::DuplicateEdge(e.0, e.1));
            }
            out.push(e);
        }
        Ok(Self {
            directed,
            num_nodes,
            edges: out,
            node_attrs: BTreeMap::new(),
            edge_attrs: BTreeMap::new(),
        })
    }

    /// Complete graph on `n` nodes, edges in lexicographic order.
    pub fn complete(n: usize, directed: bool) -> Self {
        let edges = (0..n).flat_map(|u| (0..n).filter(move |&v| if directed { u != v } else { u < v }).map(move |v| (u, v)));
        Self::new(n, directed, edges).expect("complete graph is valid")
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn set_node_attr(&mut self, name: &str, attr: Attribute) -> Result<(), GraphError> {
        attr.validate(name, self.num_nodes)?;
        self.node_attrs.insert(name.to_string(), attr);
        Ok(())
    }

    pub fn set_edge_attr(&mut self, name: &str, attr: Attribute) -> Result<(), GraphError> {
        attr.validate(name, self.edges.len())?;
        self.edge_attrs.insert(name.to_string(), attr);
        Ok(())
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let check = Graph::new(self.num_nodes, self.directed, self.edges.iter().copied())?;
        if check.edges != self.edges {
            return Err(GraphError::Schema("edges are not in canonical order".into()));
        }
        for (k, a) in &self.node_attrs {
            a.validate(k, self.num_nodes)?;
        }
        for (k, a) in &self.edge_attrs {
            a.validate(k, self.edges.len())?;
        }
        Ok(())
    }

    pub fn node_schemas(&self) -> Vec<AttributeSchema> {
        schemas(&self.node_attrs)
    }

    pub fn edge_schemas(&self) -> Vec<AttributeSchema> {
        schemas(&self.edge_attrs)
    }

    /// `[|V|, d_v]` encoder features, attributes in name order.
    pub fn node_features(&self) -> Tensor {
        features(&self.node_attrs, self.num_nodes)
    }

    /// `[|E|, d_e]` encoder features, attributes in name order.
    pub fn edge_features(&self) -> Tensor {
        features(&self.edge_attrs, self.edges.len())
    }

    /// Directed message arcs `(src, dst, edge index)`; undirected edges yield both directions.
    pub fn arcs(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::with_capacity(self.edges.len() * 2);
        for (i, &(u, v)) in self.edges.iter().enumerate() {
            out.push((u, v, i));
            if !self.directed && u != v {
                out.push((v, u, i));
            }
        }
        out
    }

    /// Total degree of each node (in + out for directed graphs).
    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.num_nodes];
        for &(u, v) in &self.edges {
            d[u] += 1;
            d[v] += 1;
        }
        d
    }

    pub fn edge_lookup(&self) -> HashMap<(usize, usize), usize> {
        self.edges.iter().enumerate().map(|(i, e)| (*e, i)).collect()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        let e = if self.directed { (u, v) } else { (u.min(v), u.max(v)) };
        self.edges.contains(&e)
    }

    /// Average node degree and density as used by observation descriptors.
    pub fn avg_degree(&self) -> f64 {
        if self.num_nodes == 0 {
            return 0.0;
        }
        let per_edge = if self.directed { 1.0 } else { 2.0 };
        per_edge * self.edges.len() as f64 / self.num_nodes as f64
    }

    pub fn density(&self) -> f64 {
        let n = self.num_nodes as f64;
        if self.num_nodes < 2 {
            return 0.0;
        }
        let pairs = if self.directed { n * (n - 1.0) } else { n * (n - 1.0) / 2.0 };
        self.edges.len() as f64 / pairs
    }

    /// Keeps the listed edges (by index, in the given order) together with their attribute rows.
    pub fn with_edge_subset(&self, keep: &[usize]) -> Graph {
        let edges = keep.iter().map(|&i| self.edges[i]).collect();
        let edge_attrs = self
            .edge_attrs
            .iter()
            .map(|(k, a)| {
                let values = keep.iter().map(|&i| a.values[i].clone()).collect();
                (k.clone(), Attribute { values, ..a.clone() })
            })
            .collect();
        Graph {
            directed: self.directed,
            num_nodes: self.num_nodes,
            edges,
            node_attrs: self.node_attrs.clone(),
            edge_attrs,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("graph serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, GraphError> {
        let g: Graph = serde_json::from_str(s).map_err(|e| GraphError::Json(e.to_string()))?;
        g.validate()?;
        Ok(g)
    }
}

fn schemas(attrs: &BTreeMap<String, Attribute>) -> Vec<AttributeSchema> {
    attrs
        .iter()
        .map(|(k, a)| AttributeSchema {
            name: k.clone(),
            kind: a.kind,
            normalization: a.normalization,
        })
        .collect()
}

fn features(attrs: &BTreeMap<String, Attribute>, rows: usize) -> Tensor {
    let width: usize = attrs.values().map(|a| a.kind.feature_width()).sum();
    let mut data = Vec::with_capacity(rows * width);
    for r in 0..rows {
        for a in attrs.values() {
            a.push_features(r, &mut data);
        }
    }
    Tensor::new(vec![rows, width], data).expect("validated attributes are finite")
}

/// Named graphs describing one environment state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GraphBundle {
    graphs: BTreeMap<String, Graph>,
}

impl GraphBundle {
    pub fn new(graphs: impl IntoIterator<Item = (String, Graph)>) -> Result<Self, GraphError> {
        let graphs: BTreeMap<_, _> = graphs.into_iter().collect();
        if graphs.is_empty() {
            return Err(GraphError::EmptyBundle);
        }
        Ok(Self { graphs })
    }

    pub fn single(name: &str, g: Graph) -> Self {
        Self {
            graphs: BTreeMap::from([(name.to_string(), g)]),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Graph> {
        self.graphs.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.graphs.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Graph)> {
        self.graphs.iter()
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn map(&self, f: impl Fn(&Graph) -> Graph) -> GraphBundle {
        GraphBundle {
            graphs: self.graphs.iter().map(|(k, g)| (k.clone(), f(g))).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn undirected_edges_are_canonical() {
        let g = Graph::new(3, false, [(2, 0), (1, 2)]).unwrap();
        assert_eq!(g.edges(), &[(0, 2), (1, 2)]);
        assert!(g.has_edge(2, 0));
        assert!(matches!(Graph::new(3, false, [(0, 1), (1, 0)]), Err(GraphError::DuplicateEdge(0, 1))));
        assert!(Graph::new(3, true, [(0, 1), (1, 0)]).is_ok());
    }

    #[test]
    fn rejects_out_of_range_and_bad_rows() {
        assert!(matches!(Graph::new(2, false, [(0, 2)]), Err(GraphError::EdgeOutOfRange(..))));
        let mut g = Graph::new(2, false, [(0, 1)]).unwrap();
        assert!(g.set_node_attr("f", Attribute::binary([true])).is_err());
        assert!(g.set_node_attr("f", Attribute::categorical(3, [0, 3])).is_err());
        assert!(g.set_node_attr("f", Attribute::categorical(1, [0, 0])).is_err());
        assert!(g.set_edge_attr("w", Attribute::scalar([1.5], Normalization::MinMax)).is_ok());
    }

    #[test]
    fn features_expand_categoricals() {
        let mut g = Graph::new(2, false, [(0, 1)]).unwrap();
        g.set_node_attr("a_flag", Attribute::binary([true, false])).unwrap();
        g.set_node_attr("b_cls", Attribute::categorical(3, [2, 0])).unwrap();
        let f = g.node_features();
        assert_eq!(f.shape(), &[2, 4]);
        assert_eq!(f.data(), &[1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn path_descriptors() {
        let g = Graph::new(4, false, [(0, 1), (1, 2), (2, 3)]).unwrap();
        assert_eq!(g.avg_degree(), 1.5);
        assert_eq!(g.density(), 0.5);
        assert_eq!(g.arcs().len(), 6);
    }

    #[test]
    fn bundle_requires_a_graph() {
        assert!(matches!(GraphBundle::new(Vec::new()), Err(GraphError::EmptyBundle)));
    }

    fn arb_graph() -> impl Strategy<Value = Graph> {
        (2usize..8, any::<bool>()).prop_flat_map(|(n, directed)| {
            let pairs: Vec<(usize, usize)> = (0..n).flat_map(|u| (0..n).map(move |v| (u, v))).filter(|(u, v)| u != v && (directed || u < v)).collect();
            let m = pairs.len();
            (proptest::sample::subsequence(pairs, 0..=m), proptest::collection::vec(-1e3f64..1e3, n * 2), Just(n), Just(directed))
                .prop_flat_map(|(edges, coords, n, directed)| {
                    let e = edges.len();
                    (Just(edges), Just(coords), Just(n), Just(directed), proptest::collection::vec(-1e3f64..1e3, e))
                })
                .prop_map(|(edges, coords, n, directed, w)| {
                    let mut g = Graph::new(n, directed, edges).unwrap();
                    g.set_node_attr("xy", Attribute::continuous(coords.chunks(2).map(|c| c.to_vec()).collect(), Normalization::MinMax))
                        .unwrap();
                    g.set_node_attr("flag", Attribute::binary((0..n).map(|i| i % 2 == 0))).unwrap();
                    g.set_edge_attr("w", Attribute::scalar(w, Normalization::None)).unwrap();
                    g
                })
        })
    }

    proptest! {
        #[test]
        fn json_roundtrip_is_bit_exact(g in arb_graph()) {
            let s = g.to_json();
            let back = Graph::from_json(&s).unwrap();
            prop_assert_eq!(&back, &g);
            prop_assert_eq!(back.to_json(), s);
        }
    }
}
