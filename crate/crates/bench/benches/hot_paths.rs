use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use ltscm_bench::stp_fixture;
use ltscm_core::loss::loss_and_grad;
use ltscm_core::optimizer::ftl_update;
use ltscm_core::policy::policy_prob;
use ltscm_core::{lts_search, OptimConfig};

fn benches(c: &mut Criterion) {
    let fx = stp_fixture(100, 10);
    let steps: Vec<_> = fx.trajectories.iter().flat_map(|t| t.steps.iter()).take(256).collect();

    c.bench_function("policy_prob/256 steps", |b| {
        b.iter(|| {
            for s in &steps {
                black_box(policy_prob(&s.active, s.valid, &fx.store, true).unwrap());
            }
        })
    });

    c.bench_function("lts_search/8-puzzle x10", |b| {
        b.iter(|| {
            for p in &fx.test {
                black_box(lts_search(&fx.domain, p, 1_000_000, &fx.store, true).unwrap());
            }
        })
    });

    let shift = 0.0;
    c.bench_function("loss_and_grad/100 solutions", |b| {
        b.iter(|| black_box(loss_and_grad(&fx.trajectories, &fx.store, shift).unwrap()))
    });

    let cfg = OptimConfig { max_iters: 20, ..OptimConfig::default() };
    let mut group = c.benchmark_group("ftl_update");
    group.sample_size(10);
    group.bench_function("20 iterations", |b| {
        b.iter_batched(
            || fx.store.clone(),
            |store| black_box(ftl_update(&fx.trajectories, store, &cfg).unwrap()),
            BatchSize::LargeInput,
        )
    });
    group.finish();

}

criterion_group!(hot_paths, benches);
criterion_main!(hot_paths);
