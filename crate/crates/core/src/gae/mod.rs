//! Graph auto-encoder: a message-passing encoder producing node embeddings `Z`
//! and a multi-head decoder used only during pre-training.

mod snapshots;

pub use snapshots::collect_snapshots;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::{EnvError, EnvKind, Instance};
use crate::graph::{normalize_features, AttrKind, AttributeSchema, Graph};
use crate::parallel::{split_seed, Exec};
use crate::tensor::{self, Activation, Adam, AdamConfig, Bound, CheckpointMeta, Linear, Mlp, Params, Reduce, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum GaeError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("graph '{graph}' has {found} {what} features, encoder expects {expected}")]
    Schema {
        graph: String,
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("no training instances")]
    Empty,
    #[error("checkpoint metadata: {0}")]
    Meta(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub hidden: usize,
    pub out: usize,
    pub activation: Activation,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            hidden: 32,
            out: 16,
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub node: f64,
    pub edge: f64,
    pub adjacency: f64,
    pub temperature: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            node: 1.0,
            edge: 1.0,
            adjacency: 1.0,
            temperature: 0.5,
        }
    }
}

/// Feature layout an encoder was built for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSchema {
    pub node: Vec<AttributeSchema>,
    pub edge: Vec<AttributeSchema>,
}

impl GraphSchema {
    pub fn of(g: &Graph) -> Self {
        Self {
            node: g.node_schemas(),
            edge: g.edge_schemas(),
        }
    }

    pub fn node_dim(&self) -> usize {
        self.node.iter().map(|s| s.kind.feature_width()).sum()
    }

    pub fn edge_dim(&self) -> usize {
        self.edge.iter().map(|s| s.kind.feature_width()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MpLayer {
    msg: Linear,
    upd: Linear,
}

/// Per layer: `m_uv = act(W_m [h_u, e_uv])`, `a_v = mean_u m_uv`,
/// `h_v' = W_u [h_v, a_v]` followed by `act`, except the last layer, which
/// is linear and row-L2-normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub graph: String,
    pub schema: GraphSchema,
    layers: Vec<MpLayer>,
}

struct Arcs {
    src: Vec<usize>,
    dst: Vec<usize>,
    edge: Vec<usize>,
}

fn arcs_of(g: &Graph) -> Arcs {
    let a = g.arcs();
    Arcs {
        src: a.iter().map(|x| x.0).collect(),
        dst: a.iter().map(|x| x.1).collect(),
        edge: a.iter().map(|x| x.2).collect(),
    }
}

impl Encoder {
    pub fn new(graph: &str, schema: GraphSchema, config: EncoderConfig, params: &mut Params, rng: &mut ChaCha8Rng) -> Self {
        let (dv, de) = (schema.node_dim(), schema.edge_dim());
        let mut layers = Vec::new();
        let mut d_in = dv;
        for l in 0..config.layers.max(1) {
            let last = l + 1 == config.layers.max(1);
            let d_out = if last { config.out } else { config.hidden };
            layers.push(MpLayer {
                msg: Linear::new(&format!("enc.{graph}.{l}.msg"), d_in + de, config.hidden, params, rng),
                upd: Linear::new(&format!("enc.{graph}.{l}.upd"), d_in + config.hidden, d_out, params, rng),
            });
            d_in = d_out;
        }
        Self {
            config,
            graph: graph.to_string(),
            schema,
            layers,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.config.out
    }

    pub fn param_prefix(&self) -> String {
        format!("enc.{}.", self.graph)
    }

    fn check(&self, x: &Tensor, e: &Tensor) -> Result<(), GaeError> {
        let err = |what, expected, found| GaeError::Schema {
            graph: self.graph.clone(),
            what,
            expected,
            found,
        };
        if x.cols() != self.schema.node_dim() {
            return Err(err("node", self.schema.node_dim(), x.cols()));
        }
        if e.cols() != self.schema.edge_dim() {
            return Err(err("edge", self.schema.edge_dim(), e.cols()));
        }
        Ok(())
    }

    /// Embeds a normalized graph without recording gradients.
    pub fn encode(&self, params: &Params, g: &Graph) -> Result<Tensor, GaeError> {
        let x = g.node_features();
        let e = g.edge_features();
        self.check(&x, &e)?;
        let arcs = arcs_of(g);
        let e_arc = tensor::index_select_rows(&e, &arcs.edge)?;
        let n = g.num_nodes;
        let mut h = x;
        for (l, layer) in self.layers.iter().enumerate() {
            let hs = tensor::index_select_rows(&h, &arcs.src)?;
            let m = layer.msg.infer(params, &tensor::concat(&[&hs, &e_arc], 1)?)?;
            let m = self.config.activation.apply(m);
            let agg = tensor::segment_mean(&m, &arcs.dst, n)?;
            h = layer.upd.infer(params, &tensor::concat(&[&h, &agg], 1)?)?;
            if l + 1 < self.layers.len() {
                h = self.config.activation.apply(h);
            }
        }
        Ok(tensor::row_l2_normalize(&h)?)
    }

    /// Normalizes `g`'s features first, then embeds it.
    pub fn embed(&self, params: &Params, g: &Graph) -> Result<Tensor, GaeError> {
        self.encode(params, &normalize_features(g))
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, g: &Graph) -> Result<Var, GaeError> {
        let x = g.node_features();
        let e = g.edge_features();
        self.check(&x, &e)?;
        let arcs = arcs_of(g);
        let e_arc = tape.constant(tensor::index_select_rows(&e, &arcs.edge)?);
        let n = g.num_nodes;
        let mut h = tape.constant(x);
        for (l, layer) in self.layers.iter().enumerate() {
            let hs = tape.index_select(h, arcs.src.clone())?;
            let cat = tape.concat(&[hs, e_arc], 1)?;
            let m = layer.msg.forward(tape, bound, cat)?;
            let m = self.config.activation.apply_tape(tape, m);
            let agg = tape.segment_mean(m, arcs.dst.clone(), n)?;
            let cat = tape.concat(&[h, agg], 1)?;
            h = layer.upd.forward(tape, bound, cat)?;
            if l + 1 < self.layers.len() {
                h = self.config.activation.apply_tape(tape, h);
            }
        }
        Ok(tape.row_l2_normalize(h)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Head {
    attr: String,
    kind: AttrKind,
    mlp: Mlp,
}

/// Per-attribute node and edge heads; adjacency is scored by `z_i . z_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoder {
    node: Vec<Head>,
    edge: Vec<Head>,
}

fn head_width(kind: AttrKind) -> usize {
    match kind {
        AttrKind::Binary => 1,
        AttrKind::Categorical { classes } => classes,
        AttrKind::Continuous { dim } => dim,
    }
}

impl Decoder {
    pub fn new(graph: &str, schema: &GraphSchema, config: &EncoderConfig, params: &mut Params, rng: &mut ChaCha8Rng) -> Self {
        let p = config.out;
        let mk = |prefix: &str, s: &AttributeSchema, in_dim: usize, params: &mut Params, rng: &mut ChaCha8Rng| Head {
            attr: s.name.clone(),
            kind: s.kind,
            mlp: Mlp::new(
                &format!("dec.{graph}.{prefix}.{}", s.name),
                &[in_dim, config.hidden, head_width(s.kind)],
                Activation::Relu,
                Activation::Identity,
                params,
                rng,
            ),
        };
        let node = schema.node.iter().map(|s| mk("node", s, p, params, rng)).collect();
        let edge = schema.edge.iter().map(|s| mk("edge", s, 2 * p, params, rng)).collect();
        Self { node, edge }
    }
}

/// Per-head loss, already averaged over reconstructed elements.
fn head_loss(tape: &mut Tape, head: &Head, pred: Var, values: &[Vec<f64>]) -> Result<Var, GaeError> {
    let n = values.len();
    Ok(match head.kind {
        AttrKind::Continuous { dim } => {
            let t = Tensor::new(vec![n, dim], values.iter().flatten().copied().collect())?;
            tape.mse_loss(pred, t)?
        }
        AttrKind::Binary => {
            let t = Tensor::new(vec![n, 1], values.iter().map(|r| r[0]).collect())?;
            tape.bce_with_logits_loss(pred, t)?
        }
        AttrKind::Categorical { .. } => tape.cross_entropy_loss(pred, values.iter().map(|r| r[0] as usize).collect())?,
    })
}

/// Loss terms of one graph, before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub node: f64,
    pub edge: f64,
    pub adjacency: f64,
    pub total: f64,
}

/// Encoder plus decoder with their shared parameter set.
#[derive(Debug, Clone)]
pub struct GaeModel {
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub params: Params,
}

impl GaeModel {
    pub fn new(graph: &str, schema: GraphSchema, config: EncoderConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let encoder = Encoder::new(graph, schema.clone(), config, &mut params, &mut rng);
        let decoder = Decoder::new(graph, &schema, &config, &mut params, &mut rng);
        Self { encoder, decoder, params }
    }

    /// Weighted reconstruction loss of one normalized graph, recorded on `tape`.
    pub fn loss_on_tape(&self, tape: &mut Tape, bound: &Bound, g: &Graph, w: &LossWeights) -> Result<Var, GaeError> {
        let z = self.encoder.forward(tape, bound, g)?;
        let mut terms: Vec<Var> = Vec::new();

        let mut node_terms = Vec::new();
        for head in &self.decoder.node {
            let pred = head.mlp.forward(tape, bound, z)?;
            node_terms.push(head_loss(tape, head, pred, &g.node_attrs[&head.attr].values)?);
        }
        if let Some(t) = sum_vars(tape, &node_terms)? {
            terms.push(tape.scale(t, w.node));
        }

        if g.num_edges() > 0 {
            let (us, vs): (Vec<usize>, Vec<usize>) = g.edges().iter().copied().unzip();
            let zu = tape.index_select(z, us)?;
            let zv = tape.index_select(z, vs)?;
            let pair = tape.concat(&[zu, zv], 1)?;
            let mut edge_terms = Vec::new();
            for head in &self.decoder.edge {
                let pred = head.mlp.forward(tape, bound, pair)?;
                edge_terms.push(head_loss(tape, head, pred, &g.edge_attrs[&head.attr].values)?);
            }
            if let Some(t) = sum_vars(tape, &edge_terms)? {
                terms.push(tape.scale(t, w.edge));
            }
            if let Some(t) = info_nce(tape, z, g, w.temperature)? {
                terms.push(tape.scale(t, w.adjacency));
            }
        }
        match sum_vars(tape, &terms)? {
            Some(t) => Ok(t),
            None => {
                let zero = tape.constant(Tensor::scalar(0.0));
                Ok(zero)
            }
        }
    }

    /// Unweighted parts and weighted total for one normalized graph.
    pub fn loss_parts(&self, g: &Graph, w: &LossWeights) -> Result<LossParts, GaeError> {
        let part = |w: LossWeights| -> Result<f64, GaeError> {
            let mut tape = Tape::new();
            let bound = self.params.bind(&mut tape);
            let l = self.loss_on_tape(&mut tape, &bound, g, &w)?;
            Ok(tape.value(l).item())
        };
        let only = |node, edge, adjacency| LossWeights {
            node,
            edge,
            adjacency,
            temperature: w.temperature,
        };
        Ok(LossParts {
            node: part(only(1.0, 0.0, 0.0))?,
            edge: part(only(0.0, 1.0, 0.0))?,
            adjacency: part(only(0.0, 0.0, 1.0))?,
            total: part(*w)?,
        })
    }

    pub fn loss(&self, g: &Graph, w: &LossWeights) -> Result<f64, GaeError> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let l = self.loss_on_tape(&mut tape, &bound, g, w)?;
        Ok(tape.value(l).item())
    }

    pub fn mean_loss(&self, graphs: &[Graph], w: &LossWeights) -> Result<f64, GaeError> {
        if graphs.is_empty() {
            return Ok(0.0);
        }
        let mut s = 0.0;
        for g in graphs {
            s += self.loss(g, w)?;
        }
        Ok(s / graphs.len() as f64)
    }

    /// Mini-batch Adam over `graphs`; returns the mean training loss per epoch.
    pub fn fit(&mut self, graphs: &[Graph], cfg: &GaeTrainConfig) -> Result<Vec<f64>, GaeError> {
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed(cfg.seed, 0xA11CE));
        let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr));
        let mut order: Vec<usize> = (0..graphs.len()).collect();
        let mut history = Vec::with_capacity(cfg.epochs);
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut epoch = 0.0;
            for chunk in order.chunks(cfg.batch.max(1)) {
                let mut tape = Tape::new();
                let bound = self.params.bind(&mut tape);
                let mut losses = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    losses.push(self.loss_on_tape(&mut tape, &bound, &graphs[i], &cfg.weights)?);
                }
                let total = sum_vars(&mut tape, &losses)?.expect("non-empty chunk");
                let mean = tape.scale(total, 1.0 / chunk.len() as f64);
                epoch += tape.value(total).item();
                let grads = tape.backward(mean)?;
                let named = bound.named_grads(&grads, &self.params);
                adam.step(&mut self.params, &named)?;
            }
            history.push(epoch / graphs.len().max(1) as f64);
        }
        Ok(history)
    }

    /// Drops the decoder.
    pub fn into_encoder(self) -> TrainedEncoder {
        let params = self.params.filter_prefix(&self.encoder.param_prefix());
        TrainedEncoder {
            encoder: self.encoder,
            params,
        }
    }

    /// Adjacency-ranking AUC of `z_i . z_j` for edges vs non-edges, pooled over graphs.
    pub fn adjacency_auc(&self, graphs: &[Graph]) -> Result<f64, GaeError> {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for g in graphs {
            let z = self.encoder.encode(&self.params, g)?;
            let s = tensor::matmul(&z, &tensor::transpose(&z)?)?;
            for i in 0..g.num_nodes {
                for j in 0..g.num_nodes {
                    if i == j || (!g.directed && j < i) {
                        continue;
                    }
                    if g.has_edge(i, j) {
                        pos.push(s.get(i, j));
                    } else {
                        neg.push(s.get(i, j));
                    }
                }
            }
        }
        Ok(auc(&pos, &neg))
    }
}

/// Probability that a random positive outranks a random negative (ties count half).
pub fn auc(pos: &[f64], neg: &[f64]) -> f64 {
    if pos.is_empty() || neg.is_empty() {
        return 0.5;
    }
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Mann-Whitney U with average ranks for ties.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += all[i..=j].iter().filter(|x| x.1).count() as f64 * avg;
        i = j + 1;
    }
    let np = pos.len() as f64;
    (rank_sum - np * (np + 1.0) / 2.0) / (np * neg.len() as f64)
}

fn sum_vars(tape: &mut Tape, vars: &[Var]) -> Result<Option<Var>, TensorError> {
    let mut it = vars.iter();
    let Some(&first) = it.next() else {
        return Ok(None);
    };
    let mut acc = first;
    for &v in it {
        acc = tape.add(acc, v)?;
    }
    Ok(Some(acc))
}

/// Mean over nodes with at least one neighbour of
/// `-log( sum_{j in N(i)} exp(s_ij) / sum_{j != i} exp(s_ij) )`, `s = Z Z^T / tau`.
fn info_nce(tape: &mut Tape, z: Var, g: &Graph, tau: f64) -> Result<Option<Var>, GaeError> {
    let n = g.num_nodes;
    if n < 2 {
        return Ok(None);
    }
    let mut pos = vec![0.0; n * n];
    for &(u, v) in g.edges() {
        if u != v {
            pos[u * n + v] = 1.0;
            if !g.directed {
                pos[v * n + u] = 1.0;
            }
        }
    }
    let anchors: Vec<usize> = (0..n).filter(|&i| pos[i * n..(i + 1) * n].iter().any(|&p| p > 0.0)).collect();
    if anchors.is_empty() {
        return Ok(None);
    }
    let zt = tape.transpose(z)?;
    let s = tape.matmul(z, zt)?;
    let s = tape.scale(s, 1.0 / tau);
    let mask: Vec<bool> = (0..n * n).map(|k| k / n != k % n).collect();
    let ls = tape.log_softmax(s, Some(mask))?;
    let p = tape.exp(ls);
    let a = tape.constant(Tensor::new(vec![n, n], pos)?);
    let hit = tape.mul(p, a)?;
    let row = tape.reduce(hit, Reduce::Sum, Some(1))?;
    let row = tape.index_select(row, anchors)?;
    let lg = tape.log(row);
    let m = tape.mean(lg);
    Ok(Some(tape.scale(m, -1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaeTrainConfig {
    pub encoder: EncoderConfig,
    pub weights: LossWeights,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Minimum snapshot pool as a multiple of the batch size.
    pub pool_factor: usize,
}

impl Default for GaeTrainConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            weights: LossWeights::default(),
            lr: 0.01,
            batch: 32,
            epochs: 20,
            seed: 42,
            pool_factor: 10,
        }
    }
}

/// A frozen encoder with only its own parameters.
#[derive(Debug, Clone)]
pub struct TrainedEncoder {
    pub encoder: Encoder,
    pub params: Params,
}

impl TrainedEncoder {
    pub fn embed(&self, g: &Graph) -> Result<Tensor, GaeError> {
        self.encoder.embed(&self.params, g)
    }
}

/// One frozen encoder per graph name of an environment.
#[derive(Debug, Clone)]
pub struct EncoderSet {
    pub kind: EnvKind,
    pub encoders: BTreeMap<String, TrainedEncoder>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EncoderSetMeta {
    kind: EnvKind,
    encoders: Vec<Encoder>,
}

impl EncoderSet {
    pub fn get(&self, graph: &str) -> Option<&TrainedEncoder> {
        self.encoders.get(graph)
    }

    /// Embeds every graph of a bundle.
    pub fn embed_bundle(&self, bundle: &crate::graph::GraphBundle) -> Result<BTreeMap<String, Tensor>, GaeError> {
        let mut out = BTreeMap::new();
        for (name, g) in bundle.iter() {
            if let Some(enc) = self.encoders.get(name) {
                out.insert(name.clone(), enc.embed(g)?);
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<(), GaeError> {
        let mut params = Params::new();
        for e in self.encoders.values() {
            params.extend(e.params.clone());
        }
        let meta = EncoderSetMeta {
            kind: self.kind,
            encoders: self.encoders.values().map(|e| e.encoder.clone()).collect(),
        };
        let json = serde_json::to_value(&meta).map_err(|e| GaeError::Meta(e.to_string()))?;
        tensor::save_checkpoint(path, &params, &CheckpointMeta::new("gae-encoder", json))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GaeError> {
        let (params, meta) = tensor::load_checkpoint(path)?;
        if meta.kind != "gae-encoder" {
            return Err(GaeError::Meta(format!("expected a gae-encoder checkpoint, found {}", meta.kind)));
        }
        let m: EncoderSetMeta = serde_json::from_value(meta.metadata).map_err(|e| GaeError::Meta(e.to_string()))?;
        let encoders = m
            .encoders
            .into_iter()
            .map(|e| {
                let p = params.filter_prefix(&e.param_prefix());
                (e.graph.clone(), TrainedEncoder { encoder: e, params: p })
            })
            .collect();
        Ok(Self { kind: m.kind, encoders })
    }
}

/// Summary of a pre-training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaeReport {
    pub graph: String,
    pub snapshots: usize,
    pub epoch_losses: Vec<f64>,
}

/// Collects random-valid-action snapshots from `instances`, trains one GAE per
/// graph name and keeps only the encoders.
pub fn train_gae(instances: &[Instance], cfg: &GaeTrainConfig, exec: Exec) -> Result<(EncoderSet, Vec<GaeReport>), GaeError> {
    let first = instances.first().ok_or(GaeError::Empty)?;
    let kind = first.kind;
    let pool = collect_snapshots(instances, cfg.pool_factor * cfg.batch, cfg.seed, exec)?;
    let mut encoders = BTreeMap::new();
    let mut reports = Vec::new();
    for (name, graphs) in pool {
        let schema = GraphSchema::of(&graphs[0]);
        let mut model = GaeModel::new(&name, schema, cfg.encoder, split_seed(cfg.seed, name.len() as u64));
        let history = model.fit(&graphs, cfg)?;
        reports.push(GaeReport {
            graph: name.clone(),
            snapshots: graphs.len(),
            epoch_losses: history,
        });
        encoders.insert(name, model.into_encoder());
    }
    Ok((EncoderSet { kind, encoders }, reports))
}

#[cfg(test)]
mod tests;
