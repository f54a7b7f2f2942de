//! Metrics and experiment drivers: the method ladder on simulated scenes,
//! noise sweeps over camera perturbation, and the prior-weight sensitivity of
//! recovered controls.

mod metrics;

pub use metrics::{
    control_metrics, high_frequency_energy, pearson, rmse, trajectory_metrics, ControlMetrics, TrajectoryMetrics, HIGH_FREQUENCY_FRACTION,
    THRESHOLD_MAX, THRESHOLD_STEP,
};

use std::time::Instant;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::{initialize_trajectory, AssociationError, InitConfig, Initialization};
use crate::dynamics::{control_inputs, DynamicsError};
use crate::exec::Execution;
use crate::priors::PriorKind;
use crate::rng::{rng_for, stream};
use crate::scene::SceneError;
use crate::simulator::{simulate, SimConfig, SimError, SimulatedScene};
use crate::solver::{optimize, OptimizeResult, SolverConfig, SolverError};
use crate::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty grid")]
    EmptyGrid,
    #[error("sensitivity sweep needs a flight-model prior")]
    NotDynamicsPrior,
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Association(#[from] AssociationError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "No-Opt")]
    NoOpt,
    #[serde(rename = "BA")]
    Ba,
    #[serde(rename = "BA-pGS")]
    BaPgs,
    #[serde(rename = "BA-pSS")]
    BaPss,
    #[serde(rename = "BA-pKF")]
    BaPkf,
    #[serde(rename = "BA-pDM")]
    BaPdm,
    #[serde(rename = "BA-pDM-single")]
    BaPdmSingle,
}

impl Method {
    pub const ALL: [Method; 7] =
        [Method::NoOpt, Method::Ba, Method::BaPgs, Method::BaPss, Method::BaPkf, Method::BaPdm, Method::BaPdmSingle];

    pub fn name(&self) -> &'static str {
        match self {
            Method::NoOpt => "No-Opt",
            Method::Ba => "BA",
            Method::BaPgs => "BA-pGS",
            Method::BaPss => "BA-pSS",
            Method::BaPkf => "BA-pKF",
            Method::BaPdm => "BA-pDM",
            Method::BaPdmSingle => "BA-pDM-single",
        }
    }

    pub fn from_name(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name().eq_ignore_ascii_case(s))
    }

    /// Prior used by this method, or `None` for the unoptimized baseline.
    pub fn prior(&self, suite: &SuiteConfig) -> Option<PriorKind> {
        Some(match self {
            Method::NoOpt => return None,
            Method::Ba => PriorKind::None,
            Method::BaPgs => suite.gaussian,
            Method::BaPss => suite.spline,
            Method::BaPkf => suite.kalman,
            Method::BaPdm | Method::BaPdmSingle => suite.dynamics,
        })
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Which latent sequence control metrics are computed from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentSource {
    /// Latents recomputed from the optimized trajectory.
    #[default]
    Trajectory,
    /// The optimized latent variables themselves.
    Optimized,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub solver: SolverConfig,
    pub init: InitConfig,
    pub gaussian: PriorKind,
    pub spline: PriorKind,
    pub kalman: PriorKind,
    pub dynamics: PriorKind,
    /// Standard deviation of i.i.d. noise added to the initial trajectory, m.
    pub init_noise: f64,
    pub control_source: LatentSource,
    /// Parallelism across seeds and grid cells.
    pub execution: Execution,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            init: InitConfig::default(),
            gaussian: PriorKind::gaussian(),
            spline: PriorKind::spline(),
            kalman: PriorKind::kalman(),
            dynamics: PriorKind::dynamics(),
            init_noise: 0.0,
            control_source: LatentSource::default(),
            execution: Execution::default(),
        }
    }
}

/// Triangulated initial trajectory, with the configured extra noise.
pub fn initial_estimate(scene: &SimulatedScene, suite: &SuiteConfig) -> Result<Initialization, EvalError> {
    let cfg = InitConfig { seed: scene.config.seed, ..suite.init };
    let mut init = initialize_trajectory(&scene.observations, &scene.initial_cameras, 1.0 / scene.config.fps, &cfg)?;
    if suite.init_noise > 0.0 {
        let mut rng = rng_for(scene.config.seed, stream::INIT_NOISE, 0);
        let n = Normal::new(0.0, suite.init_noise).expect("init_noise is positive");
        for p in &mut init.trajectory.positions {
            *p += Vec3::from_fn(|_, _| n.sample(&mut rng));
        }
    }
    Ok(init)
}

#[derive(Clone, Debug)]
pub struct MethodRun {
    pub method: Method,
    pub metrics: TrajectoryMetrics,
    pub runtime_s: f64,
    pub result: Option<OptimizeResult>,
}

/// Runs one method from a shared initialization.
pub fn run_method(scene: &SimulatedScene, init: &Initialization, method: Method, suite: &SuiteConfig) -> Result<MethodRun, EvalError> {
    let start = Instant::now();
    let gt = &scene.ground_truth.trajectory;
    let Some(prior) = method.prior(suite) else {
        let metrics = trajectory_metrics(&init.trajectory, gt)?;
        return Ok(MethodRun { method, metrics, runtime_s: start.elapsed().as_secs_f64(), result: None });
    };
    let single;
    let obs = if method == Method::BaPdmSingle {
        single = scene.observations.restricted_to(&init.assignment);
        &single
    } else {
        &scene.observations
    };
    let cfg = suite.solver.with_prior(prior);
    let res = optimize(obs, &scene.initial_cameras, &init.trajectory, &scene.config.quad_params(), &cfg)?;
    let metrics = trajectory_metrics(&res.trajectory, gt)?;
    Ok(MethodRun { method, metrics, runtime_s: start.elapsed().as_secs_f64(), result: Some(res) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: Method,
    pub sigma_px: f64,
    pub sigma_p: f64,
    pub sigma_o: f64,
    pub seed: u64,
    pub rmse: f64,
    pub runtime_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: Method,
    pub sigma_px: f64,
    pub sigma_p: f64,
    pub sigma_o: f64,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub aggregates: Vec<Aggregate>,
}

impl SweepResult {
    pub fn from_rows(rows: Vec<SweepRow>) -> Self {
        let mut aggregates: Vec<Aggregate> = Vec::new();
        let mut samples: Vec<Vec<f64>> = Vec::new();
        for r in &rows {
            let key = |a: &Aggregate| a.method == r.method && a.sigma_px == r.sigma_px && a.sigma_p == r.sigma_p && a.sigma_o == r.sigma_o;
            match aggregates.iter().position(key) {
                Some(i) => samples[i].push(r.rmse),
                None => {
                    aggregates.push(Aggregate {
                        method: r.method,
                        sigma_px: r.sigma_px,
                        sigma_p: r.sigma_p,
                        sigma_o: r.sigma_o,
                        n: 0,
                        mean: 0.0,
                        std: 0.0,
                    });
                    samples.push(vec![r.rmse]);
                }
            }
        }
        for (a, s) in aggregates.iter_mut().zip(&samples) {
            let n = s.len() as f64;
            a.n = s.len();
            a.mean = s.iter().sum::<f64>() / n;
            a.std = (s.iter().map(|v| (v - a.mean).powi(2)).sum::<f64>() / n).sqrt();
        }
        Self { rows, aggregates }
    }

    /// Mean RMSE of `method` over all rows (all cells).
    pub fn mean(&self, method: Method) -> Option<f64> {
        let v: Vec<f64> = self.rows.iter().filter(|r| r.method == method).map(|r| r.rmse).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn cell_mean(&self, method: Method, sigma_p: f64, sigma_o: f64) -> Option<f64> {
        self.aggregates.iter().find(|a| a.method == method && a.sigma_p == sigma_p && a.sigma_o == sigma_o).map(|a| a.mean)
    }
}

fn run_scene(sim: &SimConfig, methods: &[Method], suite: &SuiteConfig) -> Result<Vec<SweepRow>, EvalError> {
    let scene = simulate(sim)?;
    let init = initial_estimate(&scene, suite)?;
    methods
        .iter()
        .map(|&m| {
            let run = run_method(&scene, &init, m, suite)?;
            Ok(SweepRow {
                method: m,
                sigma_px: sim.noise.sigma_px,
                sigma_p: sim.perturb.sigma_p,
                sigma_o: sim.perturb.sigma_o,
                seed: sim.seed,
                rmse: run.metrics.rmse,
                runtime_s: run.runtime_s,
            })
        })
        .collect()
}

/// Every method on every seed of one scene configuration.
pub fn run_method_suite(sim: &SimConfig, methods: &[Method], seeds: &[u64], suite: &SuiteConfig) -> Result<SweepResult, EvalError> {
    noise_sweep(sim, &[(sim.perturb.sigma_p, sim.perturb.sigma_o)], seeds, methods, suite)
}

/// Methods over a grid of camera perturbations `(sigma_p m, sigma_o deg)`.
pub fn noise_sweep(
    base: &SimConfig,
    grid: &[(f64, f64)],
    seeds: &[u64],
    methods: &[Method],
    suite: &SuiteConfig,
) -> Result<SweepResult, EvalError> {
    if grid.is_empty() || seeds.is_empty() || methods.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    let jobs: Vec<SimConfig> = grid
        .iter()
        .flat_map(|&(sp, so)| {
            seeds.iter().map(move |&seed| {
                let mut c = *base;
                c.perturb.sigma_p = sp;
                c.perturb.sigma_o = so;
                c.seed = seed;
                c
            })
        })
        .collect();
    let out = suite.execution.map_slice(&jobs, |c| run_scene(c, methods, suite));
    let mut rows = Vec::new();
    for r in out {
        rows.extend(r?);
    }
    Ok(SweepResult::from_rows(rows))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub lambda: f64,
    pub sigma: f64,
    pub seed: u64,
    pub metrics: ControlMetrics,
}

/// Flight-model prior over a `(lambda, sigma_latent)` grid; control metrics
/// against ground truth per cell and seed.
pub fn prior_sensitivity_sweep(
    sim: &SimConfig,
    cells: &[(f64, f64)],
    seeds: &[u64],
    suite: &SuiteConfig,
) -> Result<Vec<SensitivityRow>, EvalError> {
    if cells.is_empty() || seeds.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    let per_seed = suite.execution.map_slice(seeds, |&seed| -> Result<Vec<SensitivityRow>, EvalError> {
        let scene = simulate(&SimConfig { seed, ..*sim })?;
        let init = initial_estimate(&scene, suite)?;
        let q = scene.config.quad_params();
        let gt = (&scene.ground_truth.latent, &scene.ground_truth.controls);
        cells
            .iter()
            .map(|&(lambda, sigma)| {
                let prior = match suite.dynamics {
                    PriorKind::Dynamics { lambda1, lambda2, lambda3, .. } => {
                        PriorKind::Dynamics { lambda1, lambda2, lambda3, sigma_latent: sigma }
                    }
                    _ => return Err(EvalError::NotDynamicsPrior),
                };
                let cfg = SolverConfig { lambda, prior, ..suite.solver };
                let res = optimize(&scene.observations, &scene.initial_cameras, &init.trajectory, &q, &cfg)?;
                let latent = match (suite.control_source, &res.latent_raw) {
                    (LatentSource::Optimized, Some(raw)) => raw.clone(),
                    _ => res.latent.clone(),
                };
                let controls = control_inputs(&latent, &q);
                Ok(SensitivityRow { lambda, sigma, seed, metrics: control_metrics((&latent, &controls), gt)? })
            })
            .collect()
    });
    let mut rows = Vec::new();
    for r in per_seed {
        rows.extend(r?);
    }
    Ok(rows)
}

/// Mean of each control metric per `(lambda, sigma)` cell, in first-seen order.
pub fn mean_by_cell(rows: &[SensitivityRow]) -> Vec<(f64, f64, ControlMetrics)> {
    let mut cells: Vec<(f64, f64, Vec<ControlMetrics>)> = Vec::new();
    for r in rows {
        match cells.iter_mut().find(|c| c.0 == r.lambda && c.1 == r.sigma) {
            Some(c) => c.2.push(r.metrics),
            None => cells.push((r.lambda, r.sigma, vec![r.metrics])),
        }
    }
    cells
        .into_iter()
        .map(|(l, s, ms)| {
            let n = ms.len() as f64;
            let avg = |f: fn(&ControlMetrics) -> f64| ms.iter().map(f).sum::<f64>() / n;
            (
                l,
                s,
                ControlMetrics {
                    rmse_u: avg(|m| m.rmse_u),
                    rmse_phi: avg(|m| m.rmse_phi),
                    rmse_theta: avg(|m| m.rmse_theta),
                    rmse_u_phi: avg(|m| m.rmse_u_phi),
                    rmse_u_theta: avg(|m| m.rmse_u_theta),
                    correlation_u: avg(|m| m.correlation_u),
                    hf_energy_u: avg(|m| m.hf_energy_u),
                },
            )
        })
        .collect()
}

/// What a sweep runs over.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepPlan {
    /// Methods on the configured scene.
    Methods { methods: Vec<Method> },
    /// Methods over `(sigma_p m, sigma_o deg)` camera perturbations.
    Noise { methods: Vec<Method>, grid: Vec<(f64, f64)> },
    /// Flight-model prior over `(lambda, sigma_latent)` cells.
    Sensitivity { cells: Vec<(f64, f64)> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub scene: SimConfig,
    pub suite: SuiteConfig,
    pub seeds: Vec<u64>,
    pub plan: SweepPlan,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            scene: SimConfig::default(),
            suite: SuiteConfig::default(),
            seeds: (0..10).collect(),
            plan: SweepPlan::Methods { methods: Method::ALL.to_vec() },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SweepOutput {
    Rmse(SweepResult),
    Controls(Vec<SensitivityRow>),
}

impl SweepConfig {
    pub fn run(&self) -> Result<SweepOutput, EvalError> {
        match &self.plan {
            SweepPlan::Methods { methods } => run_method_suite(&self.scene, methods, &self.seeds, &self.suite).map(SweepOutput::Rmse),
            SweepPlan::Noise { methods, grid } => noise_sweep(&self.scene, grid, &self.seeds, methods, &self.suite).map(SweepOutput::Rmse),
            SweepPlan::Sensitivity { cells } => {
                prior_sensitivity_sweep(&self.scene, cells, &self.seeds, &self.suite).map(SweepOutput::Controls)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_config_parses_from_toml() {
        let text = r#"
seeds = [1, 2]
[scene]
frames = 60
[plan]
kind = "noise"
methods = ["BA", "BA-pDM"]
grid = [[0.1, 1.0], [0.5, 5.0]]
"#;
        let c: SweepConfig = toml::from_str(text).unwrap();
        assert_eq!(c.seeds, vec![1, 2]);
        assert_eq!(c.scene.frames, 60);
        assert_eq!(c.plan, SweepPlan::Noise { methods: vec![Method::Ba, Method::BaPdm], grid: vec![(0.1, 1.0), (0.5, 5.0)] });
        assert!(toml::from_str::<SweepConfig>("bogus = 1").is_err());
        let back: SweepConfig = toml::from_str(&toml::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn small_sweep_is_reproducible_and_orders_baselines() {
        let mut scene = SimConfig { frames: 90, n_cameras: 4, ..SimConfig::default() };
        scene.noise.sigma_px = 1.0;
        scene.perturb = crate::simulator::PerturbConfig { sigma_p: 0.1, sigma_o: 1.0 };
        let cfg = SweepConfig {
            scene,
            seeds: vec![3],
            plan: SweepPlan::Methods { methods: vec![Method::NoOpt, Method::Ba] },
            ..SweepConfig::default()
        };
        let SweepOutput::Rmse(a) = cfg.run().unwrap() else { panic!() };
        let SweepOutput::Rmse(b) = cfg.run().unwrap() else { panic!() };
        let strip = |r: &SweepResult| r.rows.iter().map(|r| (r.method, r.rmse.to_bits())).collect::<Vec<_>>();
        assert_eq!(strip(&a), strip(&b));
        assert!(a.mean(Method::Ba).unwrap() < a.mean(Method::NoOpt).unwrap());
    }
}
