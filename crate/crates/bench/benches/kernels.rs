use criterion::{black_box, criterion_group, criterion_main, Criterion};
use hcount::arithmetic::build_r2q_prefix;
use hcount::distribution::component_law;
use hcount::lattice::{count_points, GroupParams, Radius};
use hcount::moments::{power_mean, q2_closed};
use hcount::phi::PhiSeries;

fn counting(c: &mut Criterion) {
    let params = GroupParams::new(3).unwrap();
    let tables = build_r2q_prefix(3, 4 * 300 * 300).unwrap();
    let x = Radius::from_ratio(601, 2).unwrap();
    c.bench_function("count_points q=3 x=300.5", |b| {
        b.iter(|| count_points(&params, &tables, black_box(&x)).unwrap())
    });
    c.bench_function("build_r2q_prefix q=3 N=1e5", |b| {
        b.iter(|| build_r2q_prefix(3, black_box(100_000)).unwrap())
    });
}

fn moments(c: &mut Criterion) {
    let s = PhiSeries::resummed(3, 5, 8, 8).unwrap();
    c.bench_function("power_mean l=3 m=5 D=K=8", |b| {
        b.iter(|| power_mean(black_box(&s), 3).unwrap())
    });
    c.bench_function("q2_closed m=13 D=K=40", |b| {
        b.iter(|| q2_closed(3, black_box(13), 40, 40).unwrap())
    });
}

fn laws(c: &mut Criterion) {
    let mut g = c.benchmark_group("component_law");
    g.sample_size(10);
    g.bench_function("m=2 D=6 K=16", |b| {
        b.iter(|| component_law(3, black_box(2), 6, 16, &[]).unwrap())
    });
    g.finish();
}

criterion_group!(benches, counting, moments, laws);
criterion_main!(benches);
