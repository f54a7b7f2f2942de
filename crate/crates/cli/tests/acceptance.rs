//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits with a failure status if any criterion fails.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use dynba::association::{ransac_triangulate, score_point};
use dynba::dynamics::{latent_to_trajectory, trajectory_to_latent, InitialState, LatentSequence, QuadParams, Trajectory};
use dynba::evaluation::{
    initial_estimate, mean_by_cell, prior_sensitivity_sweep, run_method, trajectory_metrics, Method, MethodRun, SuiteConfig,
};
use dynba::priors::{compute_targets, PriorKind};
use dynba::rng::rng_for;
use dynba::scene::{triangulate_two_view, Camera};
use dynba::simulator::{place_cameras, simulate, OutlierModel, SimConfig, SimulatedScene};
use dynba::solver::{optimize, ConsistencyPredictor, Evaluator, Family, OptimizeResult, ProblemState, SolverConfig};
use dynba::{RobustLoss, Vec2, Vec3};
use rand::Rng;

const SEEDS: std::ops::Range<u64> = 0..10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Solver hygiene observed across every optimization the suite runs.
#[derive(Default)]
struct Hygiene {
    runs: usize,
    violations: Vec<String>,
}

impl Hygiene {
    fn check(&mut self, label: &str, initial: &[Camera], res: &OptimizeResult) {
        self.runs += 1;
        for e in res.trace.iter().filter(|e| e.accepted) {
            if e.after.total > e.before.total {
                self.violations.push(format!("{label}: energy rose at iteration {}", e.iteration));
            }
        }
        let (a, b) = (&initial[0], &res.cameras[0]);
        let bits = |c: &Camera| {
            let q = c.rotation.coords;
            [q[0], q[1], q[2], q[3], c.translation.x, c.translation.y, c.translation.z].map(f64::to_bits)
        };
        if bits(a) != bits(b) || a.intrinsics != b.intrinsics {
            self.violations.push(format!("{label}: camera 0 moved"));
        }
    }
}

fn moderate_noise() -> SimConfig {
    let mut sim = SimConfig::default();
    sim.noise.sigma_px = 2.0;
    sim.noise.outlier_max = 8;
    sim.perturb.sigma_p = 0.2;
    sim.perturb.sigma_o = 2.0;
    sim
}

/// Mean RMSE per method over `SEEDS`, feeding every solver run to `hygiene`.
fn method_means(sim: &SimConfig, methods: &[Method], suite: &SuiteConfig, hygiene: &mut Hygiene) -> Vec<f64> {
    let mut sums = vec![0.0; methods.len()];
    for seed in SEEDS {
        let scene = simulate(&SimConfig { seed, ..*sim }).expect("scene");
        let init = initial_estimate(&scene, suite).expect("initialization");
        for (k, &m) in methods.iter().enumerate() {
            let run: MethodRun = run_method(&scene, &init, m, suite).expect("method run");
            if let Some(res) = &run.result {
                hygiene.check(&format!("{m} seed {seed}"), &scene.initial_cameras, res);
            }
            sums[k] += run.metrics.rmse;
        }
    }
    sums.iter().map(|s| s / SEEDS.end as f64).collect()
}

fn fmt_means(methods: &[Method], means: &[f64]) -> String {
    methods.iter().zip(means).map(|(m, v)| format!("{m} {v:.4}")).collect::<Vec<_>>().join(", ")
}

fn random_latents(rng: &mut impl Rng, n: usize, q: &QuadParams) -> LatentSequence {
    let hover = q.hover_thrust();
    let mut wave = |amp: f64| {
        let (a, w, p) = (rng.random_range(0.2..1.0) * amp, rng.random_range(0.5..4.0), rng.random_range(0.0..6.3));
        (0..n).map(move |t| a * (w * t as f64 * q.dt + p).sin()).collect::<Vec<_>>()
    };
    let phi = wave(0.4);
    let theta = wave(0.4);
    let u = wave(0.3 * hover).into_iter().map(|v| hover + v).collect();
    LatentSequence::new(phi, theta, u).expect("equal lengths")
}

fn c1_round_trip() -> Outcome {
    let start = Instant::now();
    let q = QuadParams::with_fps(30.0);
    let mut rng = rng_for(1, 0, 0);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let gamma = random_latents(&mut rng, 510, &q);
        let s0 =
            InitialState { x0: Vec3::from_fn(|_, _| rng.random_range(-5.0..5.0)), v0: Vec3::from_fn(|_, _| rng.random_range(-2.0..2.0)) };
        let x = latent_to_trajectory(&gamma, &s0, &q).expect("integration");
        let (g, s) = trajectory_to_latent(&x, &q).expect("inversion");
        let back = latent_to_trajectory(&g, &s, &q).expect("integration");
        for (a, b) in back.positions.iter().zip(&x.positions) {
            worst = worst.max((a - b).amax());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst < 1e-9 && secs < 5.0, format!("max error {worst:.2e} m, {secs:.2} s"))
}

fn c2_jacobians() -> Outcome {
    let configs = [
        (PriorKind::gaussian(), ConsistencyPredictor::Centered),
        (PriorKind::spline(), ConsistencyPredictor::Centered),
        (PriorKind::kalman(), ConsistencyPredictor::Centered),
        (PriorKind::dynamics(), ConsistencyPredictor::Centered),
        (PriorKind::dynamics(), ConsistencyPredictor::Backward),
    ];
    let mut worst: Vec<(Family, f64)> = Vec::new();
    let h = 1e-6;
    for i in 0..100u64 {
        let mut sim = SimConfig { frames: 24, n_cameras: 4, seed: i, ..SimConfig::default() };
        sim.noise.sigma_px = 1.0;
        sim.noise.outlier_max = 2;
        sim.perturb.sigma_p = 0.1;
        sim.perturb.sigma_o = 1.0;
        let scene = simulate(&sim).expect("scene");
        let q = sim.quad_params();
        let mut rng = rng_for(i, 7, 0);
        let mut jitter = |x: &Trajectory, s: f64| {
            let p = x.positions.iter().map(|p| p + Vec3::from_fn(|_, _| rng.random_range(-s..s))).collect();
            x.with_positions(p).expect("same length")
        };
        let gt = &scene.ground_truth.trajectory;
        let prev = jitter(gt, 0.02);
        let x = jitter(gt, 0.02);
        let (prior, predictor) = configs[i as usize % configs.len()];
        let cfg = SolverConfig { prior, predictor, ..SolverConfig::default() };
        let targets = compute_targets(&prior, &prev, &q).expect("targets").map(|t| t.with_weight(cfg.lambda));
        let mut state = ProblemState::new(scene.initial_cameras.clone(), x.clone(), &q);
        let mut latent = trajectory_to_latent(&x, &q).expect("latent").0;
        for t in 0..latent.len() {
            latent.phi[t] = latent.phi[t] * 0.5 + rng.random_range(-0.05..0.05);
            latent.theta[t] = latent.theta[t] * 0.5 + rng.random_range(-0.05..0.05);
            latent.u[t] = q.hover_thrust() + rng.random_range(-1.0..1.0);
        }
        state.latent = latent;
        let ev = Evaluator::new(&state, &scene.observations, targets.as_ref(), &q, &cfg);
        for g in 0..ev.n_groups() {
            let blocks = ev.group_blocks(&state, g);
            for (bi, b) in blocks.iter().enumerate() {
                let mut err = 0.0f64;
                for (p, jac) in &b.jacobians {
                    for c in 0..p.dim() {
                        let plus = ev.group_blocks(&state.perturbed(*p, c, h), g);
                        let minus = ev.group_blocks(&state.perturbed(*p, c, -h), g);
                        let fd = (&plus[bi].residual - &minus[bi].residual) / (2.0 * h);
                        let an = jac.column(c);
                        err = err.max((&fd - an).norm() / (1.0 + an.norm()));
                    }
                }
                match worst.iter_mut().find(|(f, _)| *f == b.family) {
                    Some((_, w)) => *w = w.max(err),
                    None => worst.push((b.family, err)),
                }
            }
        }
    }
    let all =
        [Family::Reprojection, Family::Consistency, Family::PositionTarget, Family::AnchorPhi, Family::AnchorTheta, Family::AnchorThrust];
    let covered = all.iter().all(|f| worst.iter().any(|(g, _)| g == f));
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let detail = worst.iter().map(|(f, e)| format!("{f:?} {e:.1e}")).collect::<Vec<_>>().join(", ");
    outcome(covered && max < 1e-4, format!("max relative error {max:.2e} ({detail})"))
}

fn c3_noiseless(hygiene: &mut Hygiene) -> Outcome {
    let scene = simulate(&SimConfig::default()).expect("scene");
    let suite = SuiteConfig::default();
    let init = initial_estimate(&scene, &suite).expect("initialization");
    let rmse = trajectory_metrics(&init.trajectory, &scene.ground_truth.trajectory).expect("metrics").rmse;
    let q = scene.config.quad_params();
    let dm = PriorKind::Dynamics { lambda1: 1.0, lambda2: 1.0, lambda3: 0.1, sigma_latent: 0.0 };
    let mut energies = Vec::new();
    for (name, prior) in [("BA", PriorKind::None), ("BA-pDM", dm)] {
        let cfg = SolverConfig { prior, iterations: 2, ..SolverConfig::default() };
        let res = optimize(&scene.observations, &scene.initial_cameras, &init.trajectory, &q, &cfg).expect("optimize");
        hygiene.check(name, &scene.initial_cameras, &res);
        energies.push((name, res.trace[0].before.total));
    }
    let max_e = energies.iter().map(|e| e.1).fold(0.0, f64::max);
    let e = energies.iter().map(|(n, v)| format!("{n} {v:.2e}")).collect::<Vec<_>>().join(", ");
    outcome(rmse < 1e-5 && max_e < 1e-12, format!("triangulation rmse {rmse:.2e} m, iteration-1 energy {e}"))
}

fn c4_ransac_oracle() -> Outcome {
    let sim = SimConfig { n_cameras: 4, ..SimConfig::default() };
    let loss = RobustLoss::huber(2.0);
    let mut matches = 0;
    for i in 0..200u64 {
        let cams = place_cameras(&SimConfig { seed: i, ..sim }).expect("cameras");
        let mut rng = rng_for(i, 11, 0);
        let x = sim.volume.sample(&mut rng);
        let sets: Vec<Vec<Vec2>> = cams
            .iter()
            .map(|c| {
                let n = rng.random_range(1..=4usize);
                let truth = rng.random_range(0..n);
                let w = c.intrinsics.width;
                let hgt = c.intrinsics.height;
                (0..n)
                    .map(|k| match (k == truth, c.project(&x)) {
                        (true, Ok(p)) => p + Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                        _ => Vec2::new(rng.random_range(0.0..w), rng.random_range(0.0..hgt)),
                    })
                    .collect()
            })
            .collect();
        let mut oracle = f64::INFINITY;
        for (m, cm) in cams.iter().enumerate() {
            for (n, cn) in cams.iter().enumerate().filter(|(n, _)| *n != m) {
                for pm in &sets[m] {
                    for pn in &sets[n] {
                        if let Ok(p) = triangulate_two_view(pm, cm, pn, cn) {
                            oracle = oracle.min(score_point(&cams, &sets, &p, &loss).0);
                        }
                    }
                }
            }
        }
        let found = ransac_triangulate(&cams, &sets, 500, &loss, i).expect("ransac").map_or(f64::INFINITY, |h| h.score);
        if (found - oracle).abs() <= 1e-9 * (1.0 + oracle.abs()) || (found.is_infinite() && oracle.is_infinite()) {
            matches += 1;
        }
    }
    outcome(matches >= 190, format!("{matches}/200 instances match the exhaustive oracle"))
}

fn c5_ordering(hygiene: &mut Hygiene) -> Outcome {
    let start = Instant::now();
    let methods = [Method::NoOpt, Method::Ba, Method::BaPgs, Method::BaPdm];
    let m = method_means(&moderate_noise(), &methods, &SuiteConfig::default(), hygiene);
    let secs = start.elapsed().as_secs_f64();
    let pass = m[3] < m[1] && m[1] < m[0] && m[3] <= m[2] && secs < 1800.0;
    outcome(pass, format!("{}; {secs:.0} s", fmt_means(&methods, &m)))
}

fn c6_high_noise(hygiene: &mut Hygiene) -> Outcome {
    let mut sim = moderate_noise();
    sim.perturb.sigma_p = 0.5;
    sim.perturb.sigma_o = 5.0;
    let methods = [Method::Ba, Method::BaPdm];
    let m = method_means(&sim, &methods, &SuiteConfig::default(), hygiene);
    outcome(m[1] < m[0], fmt_means(&methods, &m))
}

fn c7_clutter(hygiene: &mut Hygiene) -> Outcome {
    let mut sim = moderate_noise();
    sim.noise.outlier_model = OutlierModel::NearTarget { sigma_clutter: 30.0 };
    sim.noise.miss_rate = 0.2;
    let methods = [Method::BaPdmSingle, Method::BaPdm];
    let m = method_means(&sim, &methods, &SuiteConfig::default(), hygiene);
    outcome(m[1] <= m[0], fmt_means(&methods, &m))
}

fn c8_kalman(hygiene: &mut Hygiene) -> Outcome {
    let suite = SuiteConfig { init_noise: 1.0, ..SuiteConfig::default() };
    let methods = [Method::BaPkf, Method::BaPdm];
    let m = method_means(&moderate_noise(), &methods, &suite, hygiene);
    outcome(m[0] > m[1], fmt_means(&methods, &m))
}

fn c9_controls() -> Outcome {
    let mut sim = SimConfig::default();
    sim.noise.sigma_px = 0.1;
    let cells = [(0.01, 0.8), (0.02, 1.1), (0.03, 1.4)];
    let seeds: Vec<u64> = SEEDS.collect();
    let rows = prior_sensitivity_sweep(&sim, &cells, &seeds, &SuiteConfig::default()).expect("sweep");
    let cells = mean_by_cell(&rows);
    let corr = cells[1].2.correlation_u;
    let hf: Vec<f64> = cells.iter().map(|c| c.2.hf_energy_u).collect();
    let monotone = hf.windows(2).all(|w| w[1] <= w[0]);
    outcome(corr > 0.9 && monotone, format!("throttle correlation {corr:.3} at (0.02,1.1), high-frequency energy {hf:.4?}"))
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_dynba")).current_dir(dir).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).trim().to_string())
    }
}

fn cli_pipeline(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    fs::write(
        dir.join("sim.toml"),
        "frames = 150\nn_cameras = 6\n[noise]\nsigma_px = 1.0\noutlier_max = 3\n[perturb]\nsigma_p = 0.1\nsigma_o = 1.0\n",
    )
    .map_err(|e| e.to_string())?;
    run_cli(dir, &["simulate", "--config", "sim.toml", "--out", "sim", "--seed", "4"])?;
    run_cli(dir, &["triangulate", "--scene", "sim/scene.toml", "--detections", "sim/detections.csv", "--out", "tri", "--seed", "4"])?;
    run_cli(
        dir,
        &[
            "optimize",
            "--scene",
            "sim/scene.toml",
            "--detections",
            "sim/detections.csv",
            "--init",
            "tri/init_trajectory.csv",
            "--out",
            "opt",
        ],
    )?;
    let mut files = Vec::new();
    for stage in ["sim", "tri", "opt"] {
        let mut names: Vec<_> =
            fs::read_dir(dir.join(stage)).map_err(|e| e.to_string())?.filter_map(|e| e.ok()).map(|e| e.file_name()).collect();
        names.sort();
        for name in names.into_iter().filter(|n| n != "timings.csv") {
            let path = dir.join(stage).join(&name);
            files.push((format!("{stage}/{}", name.to_string_lossy()), fs::read(path).map_err(|e| e.to_string())?));
        }
    }
    Ok(files)
}

fn c10_hygiene(hygiene: &Hygiene) -> Outcome {
    let (a, b) = (tempfile::tempdir().expect("tempdir"), tempfile::tempdir().expect("tempdir"));
    let cli = match (cli_pipeline(a.path()), cli_pipeline(b.path())) {
        (Ok(x), Ok(y)) if x == y => Ok(x.len()),
        (Ok(_), Ok(_)) => Err("outputs differ between identical runs".to_string()),
        (Err(e), _) | (_, Err(e)) => Err(e),
    };
    let pass = hygiene.violations.is_empty() && cli.is_ok();
    let mut detail = format!("{} solver runs, {} violations", hygiene.runs, hygiene.violations.len());
    if let Some(v) = hygiene.violations.first() {
        detail += &format!(" (first: {v})");
    }
    match cli {
        Ok(n) => detail += &format!("; {n} CLI artifacts identical across runs"),
        Err(e) => detail += &format!("; CLI: {e}"),
    }
    outcome(pass, detail)
}

fn c11_scale(hygiene: &mut Hygiene) -> Outcome {
    let scene: SimulatedScene = simulate(&moderate_noise()).expect("scene");
    let suite = SuiteConfig::default();
    let init = initial_estimate(&scene, &suite).expect("initialization");
    let start = Instant::now();
    let res = optimize(&scene.observations, &scene.initial_cameras, &init.trajectory, &scene.config.quad_params(), &suite.solver)
        .expect("optimize");
    let secs = start.elapsed().as_secs_f64();
    hygiene.check("full scale", &scene.initial_cameras, &res);
    let outer = res.trace.iter().map(|e| e.iteration).max().unwrap_or(0);
    outcome(secs < 60.0, format!("T=510, M=10, {outer} outer iterations in {secs:.1} s"))
}

fn main() -> ExitCode {
    let mut hygiene = Hygiene::default();
    let mut failed = 0;
    let mut report = |n: usize, name: &str, o: Outcome| {
        failed += usize::from(!o.pass);
        println!("criterion {n:>2} {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    };
    report(1, "dynamics round trip", c1_round_trip());
    report(2, "jacobians", c2_jacobians());
    report(3, "noiseless end-to-end", c3_noiseless(&mut hygiene));
    report(4, "ransac oracle", c4_ransac_oracle());
    report(5, "method ordering", c5_ordering(&mut hygiene));
    report(6, "high-noise advantage", c6_high_noise(&mut hygiene));
    report(7, "clutter", c7_clutter(&mut hygiene));
    report(8, "kalman fragility", c8_kalman(&mut hygiene));
    report(9, "control recovery", c9_controls());
    let scale = c11_scale(&mut hygiene);
    report(10, "solver hygiene", c10_hygiene(&hygiene));
    report(11, "full-scale runtime", scale);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
