use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use brw_lab_core::harness::{ks_two_sample_weighted, ks_weighted, Reference};
use brw_lab_core::walk::{renewal_identity_grid, LatticeLadder};
use brw_lab_core::StepDistribution;

fn ladders(c: &mut Criterion) {
    let d = StepDistribution::asymmetric5();
    c.bench_function("ladder/asym5-r-minus-200", |b| {
        b.iter(|| {
            let mut l = LatticeLadder::new(&d).unwrap();
            l.r_minus(black_box(200.0))
        })
    });
    let mut g = c.benchmark_group("path-dp");
    g.sample_size(10);
    g.bench_function("srw-identity-10x2", |b| {
        b.iter(|| renewal_identity_grid(&StepDistribution::srw(), &[1, 5, 10], &[1, 2]).unwrap().len())
    });
    g.finish();
}

fn ks(c: &mut Criterion) {
    let mut rng = StdRng::seed_from_u64(3);
    let a: Vec<f64> = (0..10_000).map(|_| -rng.gen::<f64>().ln()).collect();
    let b: Vec<f64> = (0..10_000).map(|_| -rng.gen::<f64>().ln()).collect();
    let w: Vec<f64> = (0..10_000).map(|_| rng.gen::<f64>()).collect();
    c.bench_function("ks/weighted-exp-1e4", |bch| bch.iter(|| ks_weighted(&a, &w, Reference::Exponential { rate: 1.0 }).unwrap().p_value));
    c.bench_function("ks/two-sample-weighted-1e4", |bch| {
        bch.iter(|| ks_two_sample_weighted(&a, &w, &b, &w).unwrap().p_value)
    });
}

criterion_group!(benches, ladders, ks);
criterion_main!(benches);
