use criterion::{criterion_group, criterion_main, Criterion};
use gcc_bench::{coarse_settings, flat_square};
use gcc_core::gcc::{check_interior_gcc, ObservationRegion, RegionShape};
use std::hint::black_box;

fn gcc(c: &mut Criterion) {
    let ch = flat_square();
    let strip = ObservationRegion::new(RegionShape::Strip { axis: 0, lo: -1.0, hi: 0.3 });
    let ball = ObservationRegion::new(RegionShape::Ball { center: [0.5, 0.5], radius: 0.2 });
    let s = coarse_settings(8, 8);
    let mut g = c.benchmark_group("gcc");
    g.sample_size(10);
    g.bench_function("square_strip_T10", |b| b.iter(|| check_interior_gcc(&ch, black_box(&strip), 10.0, &s).unwrap()));
    g.bench_function("square_ball_T5", |b| b.iter(|| check_interior_gcc(&ch, black_box(&ball), 5.0, &s).unwrap()));
    g.finish();
}

criterion_group!(benches, gcc);
criterion_main!(benches);
