use criterion::{criterion_group, criterion_main, Criterion};
use gcc_core::wave::assemble_and_eig;
use gcc_core::{Domain, MetricField};

fn eigen(c: &mut Criterion) {
    let mut g = c.benchmark_group("eigen");
    g.sample_size(10);
    let interval = Domain::interval(0.0, 1.0);
    let flat1 = MetricField::flat(1);
    g.bench_function("interval_N2000_400", |b| b.iter(|| assemble_and_eig(&interval, &flat1, 2000, 400).unwrap()));
    let sq = Domain::unit_square();
    let flat2 = MetricField::flat(2);
    g.bench_function("square_N160_400", |b| b.iter(|| assemble_and_eig(&sq, &flat2, 160, 400).unwrap()));
    let disc = Domain::unit_disc();
    g.bench_function("disc_N40_50", |b| b.iter(|| assemble_and_eig(&disc, &flat2, 40, 50).unwrap()));
    g.finish();
}

criterion_group!(benches, eigen);
criterion_main!(benches);
