use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use rand::rngs::StdRng;
use rand::SeedableRng;

use brw_lab_core::brw_sim::{global_min, min_decomposition, simulate_line, simulate_tree, BarrierPolicy};
use brw_lab_core::spine_sim::{min_tail_curve, ReversedConfig};
use brw_lab_core::{make_spec, Exec, Family};

fn trees(c: &mut Criterion) {
    let spec = make_spec(Family::GaussianDyadic, 1.0).unwrap();
    let mut rng = StdRng::seed_from_u64(1);
    c.bench_function("tree/horizon-10", |b| {
        b.iter(|| simulate_tree(&spec, 10, BarrierPolicy::None, usize::MAX, &mut rng).unwrap().len())
    });
    c.bench_function("tree/horizon-12+decomposition", |b| {
        b.iter_batched(
            || simulate_tree(&spec, 12, BarrierPolicy::None, usize::MAX, &mut rng).unwrap(),
            |t| {
                let m = global_min(&t, &mut StdRng::seed_from_u64(0));
                min_decomposition(&t, &m, 12).unwrap().frak_d
            },
            BatchSize::SmallInput,
        )
    });
    let mut stack = Vec::new();
    c.bench_function("line/level-8", |b| {
        b.iter(|| simulate_line(&spec, 8.0, usize::MAX, &mut stack, &mut rng).unwrap().d_shifted())
    });
}

fn reversed(c: &mut Criterion) {
    let spec = make_spec(Family::GaussianDyadic, 1.0).unwrap();
    let xs: Vec<f64> = (0..=8).map(f64::from).collect();
    let cfg = ReversedConfig::for_levels(8.0);
    let exec = Exec::new(1);
    let mut g = c.benchmark_group("reversed");
    g.sample_size(10);
    g.bench_function("min-tail-curve/2e3-paths", |b| {
        b.iter(|| min_tail_curve(&spec, black_box(&xs), &cfg, Some(0.44), 2_000, &exec, 7).unwrap().plateau.value)
    });
    g.finish();
}

criterion_group!(benches, trees, reversed);
criterion_main!(benches);
