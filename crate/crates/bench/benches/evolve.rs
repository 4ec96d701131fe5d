use std::f64::consts::PI;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fluxgrad::linalg::C64;
use fluxgrad::workflow::{create_cr_pulses, fluxonium_chain, ChainOptions};
use fluxgrad::{extract_params, CMat, CrPair, EvolveOptions, GradientMode, Simulator, TrotterOrder};

fn chain(n: usize) -> fluxgrad::DeviceGraph {
    let g = fluxonium_chain(&ChainOptions {
        n,
        ..Default::default()
    })
    .unwrap();
    let pairs = [CrPair {
        control: 0,
        target: 1,
        length: 20.0,
    }];
    create_cr_pulses(&g, &pairs, 2).unwrap()
}

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward");
    for n in [3, 5] {
        for order in [TrotterOrder::Second, TrotterOrder::Fourth] {
            let sim = Simulator::new(&chain(n), &EvolveOptions::new(20.0, 100).truncated_dim(2).order(order)).unwrap();
            group.bench_with_input(BenchmarkId::new(format!("order {order}"), n), &sim, |b, sim| {
                b.iter(|| sim.run().unwrap())
            });
        }
    }
    group.finish();
}

fn gradient(c: &mut Criterion) {
    let mut group = c.benchmark_group("gradient");
    for n in [3, 5] {
        let g = chain(n);
        let theta = extract_params(&g, true, true).unwrap();
        let sim = Simulator::new(&g, &EvolveOptions::new(20.0, 100).truncated_dim(2)).unwrap();
        let evo = sim.run().unwrap();
        let seed = CMat::from_fn(evo.matrix.nrows(), evo.matrix.ncols(), |r, col| {
            C64::from_polar(1.0, PI * (r + 3 * col) as f64 / 7.0)
        });
        for mode in [GradientMode::Adjoint, GradientMode::StoreAll] {
            group.bench_function(BenchmarkId::new(format!("{mode:?}"), n), |b| {
                b.iter(|| sim.param_gradient(&evo, &seed, &theta, mode).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, forward, gradient);
criterion_main!(benches);
