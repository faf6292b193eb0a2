use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hgat_bench::{encode, labeled, news_graph};
use hgat_core::model::{forward, init_params, HgatConfig, SchemaMode, Task};
use hgat_core::train::loss_and_gradients;
use std::hint::black_box;

fn bench_model(c: &mut Criterion) {
    let mut group = c.benchmark_group("model");
    group.sample_size(20);
    for articles in [200, 2_000] {
        let graph = news_graph(articles);
        let features = encode(&graph);
        let set = labeled(&graph);
        let config = HgatConfig::new(Task::Multiclass, 6);
        let params = init_params(&config, features.type_names(), &features.dims(), 0).unwrap();
        group.bench_with_input(BenchmarkId::new("forward", articles), &articles, |b, _| {
            b.iter(|| {
                forward(
                    &graph,
                    &features,
                    &params,
                    &config,
                    black_box(&set.targets),
                    SchemaMode::Learned,
                )
                .unwrap()
            })
        });
        group.bench_with_input(
            BenchmarkId::new("loss_and_gradients", articles),
            &articles,
            |b, _| {
                b.iter(|| {
                    loss_and_gradients(
                        &graph,
                        &features,
                        &params,
                        &config,
                        black_box(&set),
                        SchemaMode::Learned,
                    )
                    .unwrap()
                })
            },
        );
    }
    group.finish();
}

criterion_group!(benches, bench_model);
criterion_main!(benches);
