use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::info;
use serde::de::DeserializeOwned;

use dynba::association::{initialize_trajectory, min_candidate_residual, Assignment, InitConfig};
use dynba::dynamics::control_inputs;
use dynba::evaluation::{control_metrics, mean_by_cell, trajectory_metrics, Method, SweepConfig, SweepOutput};
use dynba::io::{self, Manifest, SceneFile};
use dynba::plot::{heatmap, line_chart, Series};
use dynba::priors::PriorKind;
use dynba::simulator::{simulate as run_simulation, SimConfig};
use dynba::solver::{optimize as run_optimizer, SolverConfig};
use dynba::{Camera, Execution, ObservationTable};

use crate::{PlotKind, PriorArg};

fn read(path: &Path) -> Result<String> {
    Ok(io::read_text(path)?)
}

fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    toml::from_str(&read(path)?).map_err(|e| anyhow::anyhow!("{}: {}", path.display(), e.message()))
}

fn load_scene(path: &Path) -> Result<(SceneFile, Vec<Camera>)> {
    let scene = SceneFile::from_toml(&read(path)?).with_context(|| path.display().to_string())?;
    let cameras = scene.cameras().with_context(|| path.display().to_string())?;
    Ok((scene, cameras))
}

fn load_detections(path: &Path, ids: &[u32], n_frames: Option<usize>) -> Result<ObservationTable> {
    io::read_detections(&read(path)?, ids, n_frames).with_context(|| path.display().to_string())
}

fn finish(manifest: &Manifest, out: &Path, timings: &[(&str, f64)]) -> Result<()> {
    manifest.write(out)?;
    io::write_timings(out, timings)?;
    Ok(())
}

pub fn simulate(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let start = Instant::now();
    let mut cfg: SimConfig = match config {
        Some(p) => read_toml(p)?,
        None => SimConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let scene = run_simulation(&cfg)?;
    let quad = cfg.quad_params();
    let gt = &scene.ground_truth;
    let ids: Vec<u32> = scene.initial_cameras.iter().map(|c| c.id).collect();
    let mut m = Manifest::new("simulate", Some(cfg.seed), &cfg);
    m.write_artifact(out, "scene.toml", &SceneFile::new(cfg.fps, quad, cfg.volume, &scene.initial_cameras).to_toml())?;
    m.write_artifact(out, "detections.csv", &io::write_detections(&scene.observations, &ids))?;
    m.write_artifact(out, "gt_scene.toml", &SceneFile::new(cfg.fps, quad, cfg.volume, &gt.cameras).to_toml())?;
    m.write_artifact(out, "gt_trajectory.csv", &io::write_trajectory(&gt.trajectory))?;
    m.write_artifact(out, "gt_latent.csv", &io::write_latent(&gt.latent))?;
    m.write_artifact(out, "gt_controls.csv", &io::write_controls(&gt.controls))?;
    m.write_artifact(out, "gt_assignment.csv", &io::write_assignment(&gt.assignment, &ids))?;
    info!("simulated {} frames from {} cameras", cfg.frames, cfg.n_cameras);
    finish(&m, out, &[("simulate", start.elapsed().as_secs_f64())])
}

pub fn triangulate(scene: &Path, detections: &Path, out: &Path, seed: u64, iterations: usize) -> Result<()> {
    let start = Instant::now();
    let (file, cameras) = load_scene(scene)?;
    let obs = load_detections(detections, &file.camera_ids(), None)?;
    let cfg = InitConfig { iterations, seed, ..InitConfig::default() };
    let init = initialize_trajectory(&obs, &cameras, 1.0 / file.fps, &cfg)?;
    let resolved = init.resolved.iter().filter(|r| **r).count();
    info!("resolved {resolved} of {} frames", obs.n_frames());
    let mut m = Manifest::new("triangulate", Some(seed), &cfg);
    m.write_artifact(out, "init_trajectory.csv", &io::write_trajectory(&init.trajectory))?;
    m.write_artifact(out, "init_assignment.csv", &io::write_assignment(&init.assignment, &file.camera_ids()))?;
    finish(&m, out, &[("triangulate", start.elapsed().as_secs_f64())])
}

pub struct OptimizeArgs<'a> {
    pub scene: &'a Path,
    pub detections: &'a Path,
    pub init: &'a Path,
    pub prior: PriorArg,
    pub single_detection: bool,
    pub assignment: Option<&'a Path>,
    pub config: Option<&'a Path>,
    pub lambda: Option<f64>,
    pub iterations: Option<usize>,
    pub sequential: bool,
    pub out: &'a Path,
}

fn prior_kind(p: PriorArg, configured: PriorKind) -> PriorKind {
    let name = match p {
        PriorArg::None => "none",
        PriorArg::Gs => "gs",
        PriorArg::Ss => "ss",
        PriorArg::Kf => "kf",
        PriorArg::Dm => "dm",
    };
    let default = PriorKind::from_name(name).expect("every flag value names a prior");
    if std::mem::discriminant(&default) == std::mem::discriminant(&configured) {
        configured
    } else {
        default
    }
}

/// Closest candidate per frame and camera to the projected initial points.
fn nearest_assignment(obs: &ObservationTable, cameras: &[Camera], x: &dynba::Trajectory, loss: &dynba::RobustLoss) -> Assignment {
    let mut a = Assignment::empty(obs.n_frames(), obs.n_cameras());
    for t in 0..obs.n_frames() {
        for (j, cam) in cameras.iter().enumerate() {
            a.set(t, j, min_candidate_residual(cam, &x.positions[t], obs.candidates(t, j), loss).1);
        }
    }
    a
}

pub fn optimize(args: OptimizeArgs<'_>) -> Result<()> {
    let start = Instant::now();
    let (file, cameras) = load_scene(args.scene)?;
    let ids = file.camera_ids();
    let x0 = io::read_trajectory(&read(args.init)?, 1.0 / file.fps).with_context(|| args.init.display().to_string())?;
    let mut obs = load_detections(args.detections, &ids, Some(x0.len()))?;
    let mut cfg: SolverConfig = match args.config {
        Some(p) => read_toml(p)?,
        None => SolverConfig::default(),
    };
    cfg.prior = prior_kind(args.prior, cfg.prior);
    if let Some(l) = args.lambda {
        cfg.lambda = l;
    }
    if let Some(s) = args.iterations {
        cfg.iterations = s;
    }
    if args.sequential {
        cfg.execution = Execution::Sequential;
    }
    if args.single_detection {
        let a = match args.assignment {
            Some(p) => io::read_assignment(&read(p)?, &ids, obs.n_frames()).with_context(|| p.display().to_string())?,
            None => nearest_assignment(&obs, &cameras, &x0, &cfg.losses.reprojection),
        };
        obs = obs.restricted_to(&a);
    }
    let res = run_optimizer(&obs, &cameras, &x0, &file.quad, &cfg)?;
    if let Some(e) = res.final_energy() {
        info!("final energy {:.6e} after {} iterations", e.total, res.trace.len());
    }
    let mut m = Manifest::new("optimize", None, &cfg);
    let out = args.out;
    m.write_artifact(out, "trajectory.csv", &io::write_trajectory(&res.trajectory))?;
    m.write_artifact(out, "latent.csv", &io::write_latent(&res.latent))?;
    if let Some(raw) = &res.latent_raw {
        m.write_artifact(out, "latent_optimized.csv", &io::write_latent(raw))?;
    }
    m.write_artifact(out, "controls.csv", &io::write_controls(&res.controls))?;
    m.write_artifact(out, "cameras.toml", &file.with_cameras(&res.cameras).to_toml())?;
    m.write_artifact(out, "assignment.csv", &io::write_assignment(&res.assignment, &ids))?;
    m.write_artifact(out, "energy_trace.csv", &io::write_trace(&res.trace))?;
    finish(&m, out, &[("optimize", start.elapsed().as_secs_f64())])
}

pub fn evaluate(estimate: &Path, ground_truth: &Path, controls: Option<((&Path, &Path), &Path)>, out: &Path) -> Result<()> {
    let start = Instant::now();
    let est = io::read_trajectory(&read(estimate)?, 1.0).with_context(|| estimate.display().to_string())?;
    let gt = io::read_trajectory(&read(ground_truth)?, 1.0).with_context(|| ground_truth.display().to_string())?;
    let mut doc = serde_json::json!({ "trajectory": trajectory_metrics(&est, &gt)? });
    if let Some(((latent, gt_latent), scene)) = controls {
        let (file, _) = load_scene(scene)?;
        let quad = dynba::QuadParams { dt: 1.0 / file.fps, ..file.quad };
        let e = io::read_latent(&read(latent)?).with_context(|| latent.display().to_string())?;
        let g = io::read_latent(&read(gt_latent)?).with_context(|| gt_latent.display().to_string())?;
        let (ec, gc) = (control_inputs(&e, &quad), control_inputs(&g, &quad));
        doc["controls"] = serde_json::to_value(control_metrics((&e, &ec), (&g, &gc))?)?;
    }
    info!("rmse {}", doc["trajectory"]["rmse"]);
    let mut m = Manifest::new("evaluate", None, &serde_json::json!({ "estimate": estimate, "ground_truth": ground_truth }));
    m.write_artifact(out, "metrics.json", &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    finish(&m, out, &[("evaluate", start.elapsed().as_secs_f64())])
}

pub fn sweep(config: &Path, out: &Path, sequential: bool) -> Result<()> {
    let start = Instant::now();
    let mut cfg: SweepConfig = read_toml(config)?;
    if sequential {
        cfg.suite.execution = Execution::Sequential;
        cfg.suite.solver.execution = Execution::Sequential;
        cfg.suite.init.execution = Execution::Sequential;
    }
    let mut m = Manifest::new("sweep", None, &cfg);
    let mut timings = Vec::new();
    match cfg.run()? {
        SweepOutput::Rmse(r) => {
            m.write_artifact(out, "results.csv", &io::write_sweep_rows(&r.rows))?;
            m.write_artifact(out, "summary.json", &(serde_json::to_string_pretty(&r.aggregates)? + "\n"))?;
            timings.extend(r.rows.iter().map(|row| (row.method.name(), row.runtime_s)));
        }
        SweepOutput::Controls(rows) => {
            let mut table =
                String::from("lambda,sigma,seed,rmse_u,rmse_phi,rmse_theta,rmse_u_phi,rmse_u_theta,correlation_u,hf_energy_u\n");
            for r in &rows {
                let c = &r.metrics;
                table += &format!(
                    "{},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                    r.lambda,
                    r.sigma,
                    r.seed,
                    c.rmse_u,
                    c.rmse_phi,
                    c.rmse_theta,
                    c.rmse_u_phi,
                    c.rmse_u_theta,
                    c.correlation_u,
                    c.hf_energy_u
                );
            }
            m.write_artifact(out, "sensitivity.csv", &table)?;
            let summary: Vec<_> = mean_by_cell(&rows)
                .into_iter()
                .map(|(lambda, sigma, metrics)| serde_json::json!({ "lambda": lambda, "sigma": sigma, "metrics": metrics }))
                .collect();
            m.write_artifact(out, "summary.json", &(serde_json::to_string_pretty(&summary)? + "\n"))?;
        }
    }
    timings.push(("total", start.elapsed().as_secs_f64()));
    finish(&m, out, &timings)
}

pub fn plot(kind: PlotKind, inputs: &[std::path::PathBuf], truth: Option<&Path>, method: Option<&str>, out: &Path) -> Result<()> {
    let svg = match kind {
        PlotKind::Sweep => {
            let rows = io::read_sweep_rows(&read(&inputs[0])?).with_context(|| inputs[0].display().to_string())?;
            let result = dynba::evaluation::SweepResult::from_rows(rows);
            match method {
                Some(name) => {
                    let Some(method) = Method::from_name(name) else { bail!("unknown method `{name}`") };
                    let mut sp: Vec<f64> = result.aggregates.iter().map(|a| a.sigma_p).collect();
                    let mut so: Vec<f64> = result.aggregates.iter().map(|a| a.sigma_o).collect();
                    for v in [&mut sp, &mut so] {
                        v.sort_by(f64::total_cmp);
                        v.dedup();
                    }
                    let values: Vec<Vec<f64>> =
                        sp.iter().map(|&p| so.iter().map(|&o| result.cell_mean(method, p, o).unwrap_or(f64::NAN)).collect()).collect();
                    heatmap(
                        &format!("{method} mean RMSE (m); rows sigma_p (m), columns sigma_o (deg)"),
                        &so.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
                        &sp.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
                        &values,
                    )
                }
                None => {
                    let mut methods: Vec<Method> = result.aggregates.iter().map(|a| a.method).collect();
                    methods.dedup();
                    let series: Vec<Series> = methods
                        .iter()
                        .map(|&m| {
                            let pts =
                                result.aggregates.iter().filter(|a| a.method == m).enumerate().map(|(i, a)| (i as f64, a.mean)).collect();
                            Series::new(m.name(), pts)
                        })
                        .collect();
                    line_chart("Mean RMSE per sweep cell", "cell", "RMSE (m)", &series)
                }
            }
        }
        PlotKind::Controls => {
            let Some(truth) = truth else { bail!("--kind controls needs --truth") };
            let est = io::read_latent(&read(&inputs[0])?).with_context(|| inputs[0].display().to_string())?;
            let gt = io::read_latent(&read(truth)?).with_context(|| truth.display().to_string())?;
            let pts = |u: &[f64]| u.iter().enumerate().map(|(t, v)| ((t + 1) as f64, *v)).collect();
            line_chart("Throttle", "frame", "u (N)", &[Series::new("estimated", pts(&est.u)), Series::new("true", pts(&gt.u))])
        }
        PlotKind::Curve => {
            let mut series = Vec::new();
            for p in inputs {
                let doc: serde_json::Value = serde_json::from_str(&read(p)?).with_context(|| p.display().to_string())?;
                let curve: Vec<(f64, f64)> = serde_json::from_value(doc["trajectory"]["threshold_curve"].clone())
                    .with_context(|| format!("{}: no trajectory threshold curve", p.display()))?;
                let name =
                    p.parent().and_then(|d| d.file_name()).map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
                series.push(Series::new(name, curve));
            }
            line_chart("Fraction of points within error threshold", "threshold (m)", "fraction", &series)
        }
    };
    io::write_text(out, &svg)?;
    Ok(())
}
