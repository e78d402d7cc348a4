use criterion::{criterion_group, criterion_main, Criterion};
use gcc_bench::rough_disc;
use gcc_core::bichar::{advance_generalized, BranchPolicy, FlowOptions};
use gcc_core::PhasePoint;
use std::hint::black_box;

fn flow(c: &mut Criterion) {
    let ch = rough_disc();
    let a: f64 = 0.7;
    let rho = PhasePoint::from_velocity(ch.metric(), 0.0, [0.2, -0.1], [a.cos(), a.sin()], 1.0);
    let policy = BranchPolicy::default();
    let opts = FlowOptions::default();
    let mut g = c.benchmark_group("flow");
    for t in [1.0, 5.0] {
        g.bench_function(format!("disc_rough_T{t}"), |b| {
            b.iter(|| advance_generalized(&ch, black_box(&rho), t, &policy, &opts).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, flow);
criterion_main!(benches);
