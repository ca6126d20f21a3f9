use super::*;
use crate::graph::{Attribute, Normalization};
use crate::oracle::{generate_scenarios, sweep_all, SweepConfig};
use crate::tensor::gradcheck::check_params;
use proptest::prelude::*;

fn toy(n: usize, edges: &[(usize, usize)], seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new(n, false, edges.iter().copied()).unwrap();
    let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
    g.set_node_attr("pos", Attribute::continuous(xs, Normalization::None)).unwrap();
    g.set_node_attr("flag", Attribute::binary((0..n).map(|i| i % 2 == 0))).unwrap();
    g.set_node_attr("cls", Attribute::categorical(3, (0..n).map(|i| i % 3))).unwrap();
    let w: Vec<f64> = (0..edges.len()).map(|_| rng.random::<f64>()).collect();
    g.set_edge_attr("w", Attribute::scalar(w, Normalization::None)).unwrap();
    g
}

use rand::Rng;

fn small_model(g: &Graph, act: Activation) -> GaeModel {
    let cfg = EncoderConfig {
        layers: 2,
        hidden: 6,
        out: 4,
        activation: act,
    };
    GaeModel::new("G", GraphSchema::of(g), cfg, 7)
}

fn unwrap_tensor(e: GaeError) -> TensorError {
    match e {
        GaeError::Tensor(t) => t,
        other => panic!("{other}"),
    }
}

#[test]
fn gradcheck_four_node_graph() {
    let g = toy(4, &[(0, 1), (1, 2), (2, 3), (0, 3)], 1);
    let model = small_model(&g, Activation::Tanh);
    let w = LossWeights::default();
    let report = check_params(&model.params, 1e-5, 1e-4, 1e-6, |tape, bound| {
        model.loss_on_tape(tape, bound, &g, &w).map_err(unwrap_tensor)
    })
    .unwrap();
    assert!(report.passed(), "max rel error {}: {:?}", report.max_rel_error, report.failures.first());
    assert!(report.checked > 100);
}

#[test]
fn embeddings_have_unit_rows_and_tape_matches_inference() {
    let g = toy(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)], 2);
    let model = small_model(&g, Activation::Relu);
    let z = model.encoder.encode(&model.params, &g).unwrap();
    assert_eq!(z.shape(), &[6, 4]);
    for r in 0..6 {
        let norm: f64 = z.row_slice(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let v = model.encoder.forward(&mut tape, &bound, &g).unwrap();
    for (a, b) in tape.value(v).data().iter().zip(z.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn isolated_nodes_and_no_edges() {
    let g = toy(3, &[], 3);
    let model = small_model(&g, Activation::Relu);
    let parts = model.loss_parts(&g, &LossWeights::default()).unwrap();
    assert_eq!(parts.edge, 0.0);
    assert_eq!(parts.adjacency, 0.0);
    assert!(parts.node > 0.0);
    assert!((parts.total - parts.node).abs() < 1e-12);
}

#[test]
fn info_nce_two_nodes_is_zero() {
    // With a single candidate per row the softmax puts all mass on the neighbour.
    let g = toy(2, &[(0, 1)], 4);
    let model = small_model(&g, Activation::Relu);
    let parts = model.loss_parts(&g, &LossWeights::default()).unwrap();
    assert!(parts.adjacency.abs() < 1e-12);
}

#[test]
fn info_nce_matches_direct_formula() {
    let g = toy(4, &[(0, 1), (1, 2)], 5);
    let model = small_model(&g, Activation::Relu);
    let z = model.encoder.encode(&model.params, &g).unwrap();
    let tau = 0.5;
    let s = |i: usize, j: usize| z.row_slice(i).iter().zip(z.row_slice(j)).map(|(a, b)| a * b).sum::<f64>() / tau;
    let mut total = 0.0;
    let mut count = 0;
    for i in 0..4 {
        let nbrs: Vec<usize> = (0..4).filter(|&j| j != i && g.has_edge(i, j)).collect();
        if nbrs.is_empty() {
            continue;
        }
        let den: f64 = (0..4).filter(|&j| j != i).map(|j| s(i, j).exp()).sum();
        let num: f64 = nbrs.iter().map(|&j| s(i, j).exp()).sum();
        total += -(num / den).ln();
        count += 1;
    }
    let expected = total / count as f64;
    let parts = model.loss_parts(&g, &LossWeights::default()).unwrap();
    assert!((parts.adjacency - expected).abs() < 1e-10);
}

#[test]
fn auc_counts_ties_half() {
    assert_eq!(auc(&[2.0, 3.0], &[1.0]), 1.0);
    assert_eq!(auc(&[1.0], &[2.0, 3.0]), 0.0);
    assert_eq!(auc(&[1.0], &[1.0]), 0.5);
    assert!((auc(&[1.0, 3.0], &[2.0]) - 0.5).abs() < 1e-12);
}

#[test]
fn schema_mismatch_is_reported() {
    let g = toy(4, &[(0, 1)], 6);
    let model = small_model(&g, Activation::Relu);
    let mut other = g.clone();
    other.node_attrs.remove("cls");
    assert!(matches!(model.encoder.encode(&model.params, &other), Err(GaeError::Schema { what: "node", .. })));
}

#[test]
fn training_reduces_loss_and_checkpoint_round_trips() {
    let mut instances = generate_scenarios(EnvKind::MinVertex, 4, 11);
    let cfg = SweepConfig {
        sweeps: Some(20),
        ..SweepConfig::default()
    };
    sweep_all(&mut instances, &cfg, Exec::Parallel);
    let tcfg = GaeTrainConfig {
        epochs: 8,
        batch: 8,
        pool_factor: 4,
        ..GaeTrainConfig::default()
    };
    let pool = collect_snapshots(&instances, 32, 3, Exec::Parallel).unwrap();
    let graphs = &pool["G"];
    let mut model = GaeModel::new("G", GraphSchema::of(&graphs[0]), tcfg.encoder, 1);
    let before = model.mean_loss(graphs, &tcfg.weights).unwrap();
    let hist = model.fit(graphs, &tcfg).unwrap();
    let after = model.mean_loss(graphs, &tcfg.weights).unwrap();
    assert_eq!(hist.len(), 8);
    assert!(after < before, "{before} -> {after}");

    let (set, reports) = train_gae(&instances, &tcfg, Exec::Parallel).unwrap();
    assert!(reports.iter().all(|r| r.snapshots >= 32));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gae.ckpt");
    set.save(&path).unwrap();
    let back = EncoderSet::load(&path).unwrap();
    assert_eq!(back.kind, EnvKind::MinVertex);
    let g = &graphs[0];
    let a = set.get("G").unwrap().encoder.encode(&set.get("G").unwrap().params, g).unwrap();
    let b = back.get("G").unwrap().encoder.encode(&back.get("G").unwrap().params, g).unwrap();
    assert_eq!(a, b);
}

#[test]
fn snapshots_identical_across_exec_modes() {
    let mut instances = generate_scenarios(EnvKind::Tsp, 3, 5);
    let cfg = SweepConfig {
        sweeps: Some(5),
        ..SweepConfig::default()
    };
    sweep_all(&mut instances, &cfg, Exec::Parallel);
    let a = collect_snapshots(&instances, 20, 9, Exec::Parallel).unwrap();
    let b = collect_snapshots(&instances, 20, 9, Exec::Sequential).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn encoder_is_permutation_equivariant(seed in 0u64..1000, n in 3usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.random_bool(0.4) {
                    edges.push((u, v));
                }
            }
        }
        let g = toy(n, &edges, seed);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        // Node i of g becomes node perm[i] of h.
        let pe: Vec<(usize, usize)> = edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let mut h = Graph::new(n, false, pe.iter().copied()).unwrap();
        for (name, a) in &g.node_attrs {
            let mut rows = vec![Vec::new(); n];
            for i in 0..n {
                rows[perm[i]] = a.values[i].clone();
            }
            h.set_node_attr(name, Attribute { values: rows, ..a.clone() }).unwrap();
        }
        let hl = h.edge_lookup();
        let a = &g.edge_attrs["w"];
        let mut rows = vec![Vec::new(); edges.len()];
        for (k, &(u, v)) in pe.iter().enumerate() {
            rows[hl[&(u.min(v), u.max(v))]] = a.values[k].clone();
        }
        h.set_edge_attr("w", Attribute { values: rows, ..a.clone() }).unwrap();

        let model = small_model(&g, Activation::Relu);
        let zg = model.encoder.encode(&model.params, &g).unwrap();
        let zh = model.encoder.encode(&model.params, &h).unwrap();
        for i in 0..n {
            for (x, y) in zg.row_slice(i).iter().zip(zh.row_slice(perm[i])) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
