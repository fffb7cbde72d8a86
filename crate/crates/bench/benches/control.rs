use std::hint::black_box;

use copilot_sim::control::{mpc_step, solve_qp, MpcConfig, MpcWeights};
use copilot_sim::sim::{build_scenario, ScenarioConfig, ScenarioKind, VehicleState};
use copilot_sim_bench::{random_qp, rng};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn qp(c: &mut Criterion) {
    let mut group = c.benchmark_group("qp");
    for n in [4, 8, 20] {
        let mut r = rng(n as u64);
        let problems: Vec<_> = (0..32).map(|_| random_qp(n, &mut r)).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &problems, |b, ps| {
            let mut i = 0;
            b.iter(|| {
                i = (i + 1) % ps.len();
                solve_qp(black_box(&ps[i])).unwrap()
            })
        });
    }
    group.finish();
}

fn mpc(c: &mut Criterion) {
    let spec = build_scenario(ScenarioKind::LeftTurn, &ScenarioConfig::default()).unwrap();
    let path = spec.reference_path().unwrap();
    // Slightly off the path so the horizon has work to do.
    let state = VehicleState { y: 0.3, psi: 0.05, ..spec.ego_initial };
    let weights = MpcWeights::new(6.0, 10.0, 0.5);
    let cfg = MpcConfig::default();
    c.bench_function("mpc_step/n20", |b| b.iter(|| mpc_step(&weights, black_box(&state), &path, &cfg).unwrap()));
}

criterion_group!(benches, qp, mpc);
criterion_main!(benches);
