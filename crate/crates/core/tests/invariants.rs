use dynba::dynamics::{latent_to_trajectory, trajectory_to_latent, InitialState, LatentSequence, QuadParams, Trajectory};
use dynba::evaluation::trajectory_metrics;
use dynba::io::{read_detections, read_latent, read_trajectory, write_detections, write_latent, write_trajectory, SceneFile};
use dynba::scene::{Camera, SimilarityTransform};
use dynba::simulator::{default_intrinsics, simulate, SimConfig, Volume};
use dynba::solver::{optimize, SolverConfig};
use dynba::{Execution, ObservationTable, RobustLoss, Vec2, Vec3};
use nalgebra::UnitQuaternion;
use proptest::prelude::*;

fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-range..range).prop_map(Vec3::from)
}

fn rotation() -> impl Strategy<Value = UnitQuaternion<f64>> {
    vec3(3.0).prop_map(UnitQuaternion::from_scaled_axis)
}

fn camera(id: u32) -> impl Strategy<Value = Camera> {
    (rotation(), vec3(20.0)).prop_map(move |(r, t)| Camera::new(id, default_intrinsics(), r, t))
}

fn latents(n: usize) -> impl Strategy<Value = LatentSequence> {
    let hover = QuadParams::with_fps(30.0).hover_thrust();
    prop::collection::vec((-0.5..0.5f64, -0.5..0.5f64, 0.5 * hover..1.5 * hover), n).prop_map(|v| {
        let (phi, rest): (Vec<f64>, Vec<(f64, f64)>) = v.into_iter().map(|(a, b, c)| (a, (b, c))).unzip();
        let (theta, u) = rest.into_iter().unzip();
        LatentSequence::new(phi, theta, u).unwrap()
    })
}

fn trajectory(n: usize) -> impl Strategy<Value = Trajectory> {
    prop::collection::vec(vec3(10.0), n).prop_map(|p| Trajectory::new(1.0 / 30.0, p).unwrap())
}

proptest! {
    #[test]
    fn scene_file_round_trips(cams in prop::collection::vec(camera(0), 1..6), fps in 1.0..240.0f64) {
        let cams: Vec<Camera> = cams.into_iter().enumerate().map(|(j, c)| Camera { id: j as u32, ..c }).collect();
        let file = SceneFile::new(fps, QuadParams::with_fps(fps), Volume::default(), &cams);
        let text = file.to_toml();
        let back = SceneFile::from_toml(&text).unwrap();
        prop_assert_eq!(back.to_toml(), text);
        for (a, b) in back.cameras().unwrap().iter().zip(&cams) {
            prop_assert_eq!(a.translation, b.translation);
            prop_assert!(a.rotation.angle_to(&b.rotation) < 1e-12);
        }
    }

    #[test]
    fn trajectory_and_latent_tables_round_trip(x in trajectory(12), g in latents(12)) {
        prop_assert_eq!(read_trajectory(&write_trajectory(&x), x.dt).unwrap(), x);
        prop_assert_eq!(read_latent(&write_latent(&g)).unwrap(), g);
    }

    #[test]
    fn detection_table_round_trips(cells in prop::collection::vec(prop::collection::vec((0.0..2704.0f64, 0.0..1536.0f64), 0..4), 15)) {
        let mut obs = ObservationTable::new(5, 3);
        for (i, c) in cells.iter().enumerate() {
            *obs.candidates_mut(i / 3, i % 3) = c.iter().map(|&(x, y)| Vec2::new(x, y)).collect();
        }
        let ids = [4, 9, 2];
        let back = read_detections(&write_detections(&obs, &ids), &ids, Some(5)).unwrap();
        prop_assert_eq!(back, obs);
    }

    #[test]
    fn integration_inverts_latents(g in latents(40), x0 in vec3(5.0), v0 in vec3(3.0)) {
        let q = QuadParams::with_fps(30.0);
        let x = latent_to_trajectory(&g, &InitialState { x0, v0 }, &q).unwrap();
        let (g2, s) = trajectory_to_latent(&x, &q).unwrap();
        let back = latent_to_trajectory(&g2, &s, &q).unwrap();
        for (a, b) in back.positions.iter().zip(&x.positions) {
            prop_assert!((a - b).norm() < 1e-9);
        }
        for t in 0..g.len() - 2 {
            prop_assert!((g2.phi[t] - g.phi[t]).abs() < 1e-6 && (g2.theta[t] - g.theta[t]).abs() < 1e-6);
            prop_assert!((g2.u[t] - g.u[t]).abs() < 1e-6);
        }
    }

    #[test]
    fn alignment_removes_similarities(x in trajectory(20), r in rotation(), t in vec3(50.0), log_s in -2.0..2.0f64) {
        let sim = SimilarityTransform { scale: log_s.exp(), rotation: r, translation: t };
        let moved = x.with_positions(x.positions.iter().map(|p| sim.apply(p)).collect()).unwrap();
        let m = trajectory_metrics(&moved, &x).unwrap();
        prop_assert!(m.rmse < 1e-7, "rmse {}", m.rmse);
    }

    #[test]
    fn huber_is_monotone_and_bounded_weight(delta in 0.01..10.0f64, a in 0.0..100.0f64, b in 0.0..100.0f64) {
        let l = RobustLoss::huber(delta);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(l.rho(lo) <= l.rho(hi));
        prop_assert!(l.rho(lo) <= lo + 1e-12);
        let w = l.weight(hi);
        prop_assert!(w > 0.0 && w <= 1.0);
    }

    #[test]
    fn execution_modes_agree(n in 0..500usize) {
        let f = |i: usize| (i as f64 * 0.37).sin();
        prop_assert_eq!(Execution::Sequential.map(n, f), Execution::Parallel.map(n, f));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn solver_keeps_gauge_and_descends(seed in 0..1000u64, sigma_px in 0.0..3.0f64, outliers in 0..4usize) {
        let mut cfg = SimConfig { frames: 40, n_cameras: 4, seed, ..SimConfig::default() };
        cfg.noise.sigma_px = sigma_px;
        cfg.noise.outlier_max = outliers;
        cfg.perturb.sigma_p = 0.1;
        cfg.perturb.sigma_o = 1.0;
        let scene = simulate(&cfg).unwrap();
        let x0 = scene.ground_truth.trajectory.with_positions(
            scene.ground_truth.trajectory.positions.iter().enumerate().map(|(t, p)| p + Vec3::repeat(0.02 * (t as f64).sin())).collect(),
        ).unwrap();
        let solver = SolverConfig { iterations: 5, ..SolverConfig::default() };
        let res = optimize(&scene.observations, &scene.initial_cameras, &x0, &cfg.quad_params(), &solver).unwrap();
        prop_assert_eq!(&res.cameras[0], &scene.initial_cameras[0]);
        for e in res.trace.iter().filter(|e| e.accepted) {
            prop_assert!(e.after.total <= e.before.total);
        }
    }
}
