use std::collections::BTreeMap;

use super::hash::{feature_hash, HASH_DIM};
use super::LatentError;
use crate::envs::{Action, Component, EnvKind, Instance, InstanceData, Payload};
use crate::tensor::Tensor;

/// Weight changes of the OSPF action table, in one-hot order.
pub const OSPF_DELTAS: [i64; 3] = crate::envs::ospf::DELTAS;

/// Maps action descriptors to vectors `u(a)` by concatenating component
/// embeddings and encoded attributes:
///
/// | env | `u(a)` |
/// |---|---|
/// | TSP, MinVertex, MaxCut | `z_v` |
/// | Placement | `z_vm ⊕ z_pm` |
/// | CyberPath | `z_s ⊕ z_t ⊕ hash(text)` |
/// | OSPF | `z_u ⊕ z_v ⊕ onehot(Δw)` on `comm_G` |
/// | Traffic | `z_s ⊕ z_d` on `traffic_G`, then the zero-padded path on `comm_G` |
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionEmbedder {
    pub kind: EnvKind,
    /// Node embedding width.
    pub p: usize,
    /// Maximum number of nodes on a path (Traffic only).
    pub path_len: usize,
}

impl ActionEmbedder {
    pub fn new(kind: EnvKind, p: usize) -> Self {
        Self { kind, p, path_len: 4 }
    }

    pub fn for_instance(instance: &Instance, p: usize) -> Self {
        let mut e = Self::new(instance.kind, p);
        if let InstanceData::Traffic(d) = &instance.data {
            e.path_len = d.params.max_path_len;
        }
        e
    }

    pub fn dim(&self) -> usize {
        let p = self.p;
        match self.kind {
            EnvKind::Tsp | EnvKind::MinVertex | EnvKind::MaxCut => p,
            EnvKind::Placement => 2 * p,
            EnvKind::CyberPath => 2 * p + HASH_DIM,
            EnvKind::Ospf => 2 * p + OSPF_DELTAS.len(),
            EnvKind::Traffic => 2 * p + self.path_len * p,
        }
    }

    fn rows<'a>(&self, z: &'a BTreeMap<String, Tensor>, graph: &str) -> Result<&'a Tensor, LatentError> {
        let t = z.get(graph).ok_or_else(|| LatentError::MissingGraph(graph.to_string()))?;
        if t.cols() != self.p {
            return Err(LatentError::Dim { expected: self.p, found: t.cols() });
        }
        Ok(t)
    }

    fn node(&self, out: &mut Vec<f64>, z: &Tensor, id: usize, c: &Component) -> Result<(), LatentError> {
        if id >= z.rows() {
            return Err(LatentError::OutOfRange {
                component: format!("{c:?}"),
                id,
                nodes: z.rows(),
            });
        }
        out.extend_from_slice(z.row_slice(id));
        Ok(())
    }

    pub fn embed(&self, a: &Action, z: &BTreeMap<String, Tensor>) -> Result<Vec<f64>, LatentError> {
        let mut out = Vec::with_capacity(self.dim());
        let arity = || LatentError::Arity(a.clone());
        match (self.kind, a.components.as_slice()) {
            (EnvKind::Tsp | EnvKind::MinVertex | EnvKind::MaxCut, [c @ Component::Node(v)]) => {
                self.node(&mut out, self.rows(z, "G")?, *v, c)?;
            }
            (EnvKind::Placement, [c1 @ Component::Node(u), c2 @ Component::Node(v)]) => {
                let g = self.rows(z, "G")?;
                self.node(&mut out, g, *u, c1)?;
                self.node(&mut out, g, *v, c2)?;
            }
            (EnvKind::CyberPath, [c1 @ Component::Node(s), c2 @ Component::Node(t), Component::Object(Payload::Text(text))]) => {
                let g = self.rows(z, "G")?;
                self.node(&mut out, g, *s, c1)?;
                self.node(&mut out, g, *t, c2)?;
                out.extend(feature_hash(text, HASH_DIM));
            }
            (EnvKind::Ospf, [c @ Component::Edge(u, v), Component::Object(Payload::WeightDelta(d))]) => {
                let g = self.rows(z, "comm_G")?;
                self.node(&mut out, g, *u, c)?;
                self.node(&mut out, g, *v, c)?;
                let k = OSPF_DELTAS.iter().position(|x| x == d).ok_or_else(arity)?;
                out.extend((0..OSPF_DELTAS.len()).map(|i| if i == k { 1.0 } else { 0.0 }));
            }
            (EnvKind::Traffic, [c1 @ Component::Edge(s, t), c2 @ Component::Path(path)]) => {
                let tg = self.rows(z, "traffic_G")?;
                self.node(&mut out, tg, *s, c1)?;
                self.node(&mut out, tg, *t, c1)?;
                if path.len() > self.path_len {
                    return Err(arity());
                }
                let cg = self.rows(z, "comm_G")?;
                for &v in path {
                    self.node(&mut out, cg, v, c2)?;
                }
                out.resize(self.dim(), 0.0);
            }
            _ => return Err(arity()),
        }
        Ok(out)
    }

    /// Stacks `u(a)` for every action, one row each.
    pub fn embed_all(&self, actions: &[Action], z: &BTreeMap<String, Tensor>) -> Result<Tensor, LatentError> {
        let mut data = Vec::with_capacity(actions.len() * self.dim());
        for a in actions {
            data.extend(self.embed(a, z)?);
        }
        Ok(Tensor::new(vec![actions.len(), self.dim()], data).expect("row widths match"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z(name: &str, rows: usize, p: usize) -> BTreeMap<String, Tensor> {
        let data = (0..rows * p).map(|i| i as f64 + 1.0).collect();
        BTreeMap::from([(name.to_string(), Tensor::new(vec![rows, p], data).unwrap())])
    }

    #[test]
    fn node_action_is_the_embedding_row() {
        let e = ActionEmbedder::new(EnvKind::MaxCut, 3);
        let zz = z("G", 4, 3);
        assert_eq!(e.embed(&Action::node(2), &zz).unwrap(), zz["G"].row_slice(2).to_vec());
        assert!(matches!(e.embed(&Action::node(9), &zz), Err(LatentError::OutOfRange { .. })));
    }

    #[test]
    fn ospf_action_ends_in_onehot_delta() {
        let e = ActionEmbedder::new(EnvKind::Ospf, 16);
        let zz = z("comm_G", 3, 16);
        let a = Action::new(vec![Component::Edge(0, 1), Component::Object(Payload::WeightDelta(1))]);
        let u = e.embed(&a, &zz).unwrap();
        assert_eq!(u.len(), 35);
        assert_eq!(&u[32..], &[0.0, 0.0, 1.0]);
        let rev = Action::new(vec![Component::Edge(1, 0), Component::Object(Payload::WeightDelta(1))]);
        assert_ne!(e.embed(&rev, &zz).unwrap(), u);
    }

    #[test]
    fn traffic_path_is_zero_padded() {
        let e = ActionEmbedder::new(EnvKind::Traffic, 16);
        let mut zz = z("comm_G", 5, 16);
        zz.extend(z("traffic_G", 5, 16));
        let a = Action::new(vec![Component::Edge(0, 1), Component::Path(vec![0, 1])]);
        let u = e.embed(&a, &zz).unwrap();
        assert_eq!(u.len(), 32 + 64);
        assert!(u[64..].iter().all(|&x| x == 0.0));
        assert!(u[32..64].iter().all(|&x| x != 0.0));
    }

    #[test]
    fn cyber_actions_differ_only_in_hash_block() {
        let e = ActionEmbedder::new(EnvKind::CyberPath, 16);
        let zz = z("G", 3, 16);
        let mk = |t: &str| Action::new(vec![Component::Node(0), Component::Node(1), Component::Object(Payload::Text(t.into()))]);
        let a = e.embed(&mk("ssh flaw allows credential"), &zz).unwrap();
        let b = e.embed(&mk("http flaw allows dos"), &zz).unwrap();
        assert_eq!(a.len(), 64);
        assert_eq!(a[..32], b[..32]);
        assert_ne!(a[32..], b[32..]);
    }

    #[test]
    fn wrong_arity_is_rejected() {
        let e = ActionEmbedder::new(EnvKind::Placement, 2);
        assert!(matches!(e.embed(&Action::node(0), &z("G", 3, 2)), Err(LatentError::Arity(_))));
    }
}
