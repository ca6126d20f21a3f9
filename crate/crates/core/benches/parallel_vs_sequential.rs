use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use lagco_core::envs::EnvKind;
use lagco_core::gae::EncoderConfig;
use lagco_core::graph::Graph;
use lagco_core::oracle::{generate_sized, sweep_all, SweepConfig};
use lagco_core::parallel::Exec;
use lagco_core::pipeline::random_encoders;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn oracle_sweeps(c: &mut Criterion) {
    let mut group = c.benchmark_group("oracle_sweeps");
    group.sample_size(10);
    for kind in [EnvKind::Tsp, EnvKind::MaxCut] {
        let base = generate_sized(kind, Some(20), 16, 7);
        let cfg = SweepConfig {
            sweeps: Some(8),
            ..SweepConfig::default()
        };
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, kind.name()), &base, |b, base| {
                b.iter(|| {
                    let mut v = base.clone();
                    sweep_all(&mut v, &cfg, exec);
                    black_box(v)
                })
            });
        }
    }
    group.finish();
}

fn gae_encoding(c: &mut Criterion) {
    let mut group = c.benchmark_group("gae_encoding");
    let instances = generate_sized(EnvKind::Tsp, Some(40), 64, 11);
    let enc = random_encoders(&instances[0], EncoderConfig::default(), 3);
    let graphs: Vec<Graph> = instances.iter().map(|i| i.graphs.get("G").expect("tsp graph").clone()).collect();
    let model = enc.get("G").expect("encoder");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new(name, graphs.len()), |b| b.iter(|| black_box(exec.map(&graphs, |g| model.embed(g).expect("embed")))));
    }
    group.finish();
}

criterion_group!(benches, oracle_sweeps, gae_encoding);
criterion_main!(benches);
