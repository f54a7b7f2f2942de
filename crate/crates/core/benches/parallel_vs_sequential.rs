use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use dynba::evaluation::{initial_estimate, SuiteConfig};
use dynba::simulator::{simulate, SimConfig};
use dynba::solver::{optimize, Evaluator, NormalEquations, ProblemState, SolverConfig};
use dynba::Execution;

fn scene() -> (dynba::simulator::SimulatedScene, dynba::Trajectory) {
    let mut sim = SimConfig::default();
    sim.noise.sigma_px = 2.0;
    sim.noise.outlier_max = 8;
    sim.perturb.sigma_p = 0.2;
    sim.perturb.sigma_o = 2.0;
    let scene = simulate(&sim).expect("scene");
    let init = initial_estimate(&scene, &SuiteConfig::default()).expect("initialization");
    (scene, init.trajectory)
}

fn bench(c: &mut Criterion) {
    let (scene, x0) = scene();
    let q = scene.config.quad_params();
    let modes = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

    let mut g = c.benchmark_group("normal_equations");
    let state = ProblemState::new(scene.initial_cameras.clone(), x0.clone(), &q);
    for (name, exec) in modes {
        let cfg = SolverConfig { execution: exec, ..SolverConfig::default() };
        let targets = dynba::priors::compute_targets(&cfg.prior, &x0, &q).expect("targets");
        g.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| {
                let ev = Evaluator::new(&state, &scene.observations, targets.as_ref(), &q, cfg);
                black_box(NormalEquations::build(&ev, &state, cfg.execution))
            })
        });
    }
    g.finish();

    let mut g = c.benchmark_group("optimize_3_iterations");
    g.sample_size(10);
    for (name, exec) in modes {
        let cfg = SolverConfig { execution: exec, iterations: 3, ..SolverConfig::default() };
        g.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| black_box(optimize(&scene.observations, &scene.initial_cameras, &x0, &q, cfg).expect("optimize")))
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
