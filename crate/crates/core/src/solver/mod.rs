//! Levenberg-Marquardt bundle adjustment over cameras, trajectory points and
//! (for the flight-model prior) latent attitude and thrust.
//!
//! [`optimize`] runs the outer loop: targets are recomputed from the previous
//! trajectory, candidate choices are frozen, and one damped Gauss-Newton step
//! is taken on the resulting smooth problem. Camera 0 is held fixed.

mod linear;
mod residuals;

pub use linear::{NormalEquations, Step};
pub use residuals::{default_prior_scale, EnergyBreakdown, Evaluator, Family, ParamBlock, ResidualBlock};

use log::debug;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::{Assignment, ObservationTable};
use crate::dynamics::{
    control_inputs, trajectory_to_latent_with, ControlSequence, DynamicsError, LatentSequence, PitchInversion, QuadParams, Trajectory,
};
use crate::exec::Execution;
use crate::loss::RobustLoss;
use crate::priors::{compute_targets, dynamics_targets_with, PriorError, PriorKind, PriorTargets};
use crate::scene::Camera;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("damped normal equations are numerically singular")]
    LinearSolveFailure,
    #[error("invalid solver input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Prior(#[from] PriorError),
}

/// How the flight-model residual predicts a point from the previous iterate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyPredictor {
    /// `x̂_t = (x_{t-1} + x_{t+1}) / 2 - a(γ_{t-1}) dt² / 2`.
    #[default]
    Centered,
    /// `x̂_t = x_{t-1} + (v_{t-2} + a(γ_{t-2}) dt) dt`.
    Backward,
}

/// Starting value of the latent variables at each outer iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentStart {
    /// The smoothed anchor targets `H(G(X))`.
    #[default]
    Smoothed,
    /// The raw latents `G(X)` of the previous iterate.
    Raw,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    /// Damping increases tried before an outer iteration gives up.
    pub max_retries: usize,
    /// Accepted steps per outer iteration.
    pub inner_iterations: usize,
    pub relative_tolerance: f64,
    pub min_diagonal: f64,
    pub max_diagonal: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            initial_damping: 1e-4,
            damping_up: 10.0,
            damping_down: 1.0 / 3.0,
            max_retries: 10,
            inner_iterations: 1,
            relative_tolerance: 1e-9,
            min_diagonal: 1e-6,
            max_diagonal: 1e32,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Losses {
    /// Pixels.
    pub reprojection: RobustLoss,
    /// Radians.
    pub angle: RobustLoss,
    /// Newtons.
    pub thrust: RobustLoss,
}

impl Default for Losses {
    fn default() -> Self {
        Self { reprojection: RobustLoss::huber(2.0), angle: RobustLoss::huber(0.05), thrust: RobustLoss::huber(0.5) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Overall prior weight.
    pub lambda: f64,
    pub prior: PriorKind,
    /// Outer iterations.
    pub iterations: usize,
    pub lm: LmConfig,
    pub losses: Losses,
    /// Pixels per meter (and per radian, per newton) for prior residuals.
    /// Defaults to the mean focal length over the square root of the camera
    /// count.
    pub prior_scale: Option<f64>,
    pub predictor: ConsistencyPredictor,
    pub latent_start: LatentStart,
    pub pitch_inversion: PitchInversion,
    pub optimize_cameras: bool,
    pub execution: Execution,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 0.02,
            prior: PriorKind::dynamics(),
            iterations: 25,
            lm: LmConfig::default(),
            losses: Losses::default(),
            prior_scale: None,
            predictor: ConsistencyPredictor::default(),
            latent_start: LatentStart::default(),
            pitch_inversion: PitchInversion::Exact,
            optimize_cameras: true,
            execution: Execution::default(),
        }
    }
}

impl SolverConfig {
    pub fn with_prior(mut self, prior: PriorKind) -> Self {
        self.prior = prior;
        self
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::InvalidInput(m.into()));
        if self.iterations < 1 {
            return bad("at least one outer iteration is required");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be non-negative");
        }
        if self.prior_scale.is_some_and(|s| !(s > 0.0)) {
            return bad("prior_scale must be positive");
        }
        let lm = &self.lm;
        if !(lm.initial_damping > 0.0 && lm.damping_up > 1.0 && lm.damping_down > 0.0 && lm.damping_down < 1.0) {
            return bad("invalid damping schedule");
        }
        self.prior.validate()?;
        Ok(())
    }

    fn prior_active(&self) -> bool {
        self.lambda > 0.0 && self.prior != PriorKind::None
    }
}

/// Optimization variables.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemState {
    pub cameras: Vec<Camera>,
    pub trajectory: Trajectory,
    pub latent: LatentSequence,
}

impl ProblemState {
    /// State with hover latents; the solver overwrites them when needed.
    pub fn new(cameras: Vec<Camera>, trajectory: Trajectory, quad: &QuadParams) -> Self {
        let latent = LatentSequence::constant(crate::dynamics::Latent::hover(quad), trajectory.len());
        Self { cameras, trajectory, latent }
    }

    /// Moves one coordinate of one parameter block by `eps` along the same
    /// local parameterization the solver uses.
    pub fn perturbed(&self, block: ParamBlock, coord: usize, eps: f64) -> ProblemState {
        let mut out = self.clone();
        match block {
            ParamBlock::Camera(j) => {
                let mut d = nalgebra::Vector6::zeros();
                d[coord] = eps;
                out.cameras[j] = self.cameras[j].retract(&d.fixed_rows::<3>(0).into_owned(), &d.fixed_rows::<3>(3).into_owned());
            }
            ParamBlock::Point(t) => out.trajectory.positions[t][coord] += eps,
            ParamBlock::Latent(t) => match coord {
                0 => out.latent.phi[t] += eps,
                1 => out.latent.theta[t] += eps,
                _ => out.latent.u[t] += eps,
            },
        }
        out
    }
}

/// Objective of `state` under fixed targets.
pub fn total_energy(
    state: &ProblemState,
    obs: &ObservationTable,
    targets: Option<&PriorTargets>,
    quad: &QuadParams,
    cfg: &SolverConfig,
) -> EnergyBreakdown {
    Evaluator::new(state, obs, targets, quad, cfg).energy(state)
}

/// Residual evaluator with targets and candidate choices frozen at `state`.
pub fn build_residuals<'a>(
    state: &ProblemState,
    obs: &'a ObservationTable,
    targets: Option<&'a PriorTargets>,
    quad: &QuadParams,
    cfg: &'a SolverConfig,
) -> Evaluator<'a> {
    Evaluator::new(state, obs, targets, quad, cfg)
}

#[derive(Clone, Debug)]
pub struct LmOutcome {
    pub state: ProblemState,
    pub before: EnergyBreakdown,
    pub after: EnergyBreakdown,
    pub accepted: bool,
    pub damping: f64,
    pub step_norm: f64,
}

/// One damped step. On rejection the input state is returned and the
/// damping grows.
pub fn lm_step(state: &ProblemState, ev: &Evaluator<'_>, damping: f64, cfg: &SolverConfig) -> Result<LmOutcome, SolverError> {
    let eqs = NormalEquations::build(ev, state, cfg.execution);
    lm_step_linearized(state, ev, &eqs, ev.energy(state), damping, cfg)
}

pub fn lm_step_linearized(
    state: &ProblemState,
    ev: &Evaluator<'_>,
    eqs: &NormalEquations,
    before: EnergyBreakdown,
    damping: f64,
    cfg: &SolverConfig,
) -> Result<LmOutcome, SolverError> {
    let step = eqs.solve(damping, &cfg.lm, cfg.execution)?;
    let candidate = step.apply(state);
    let after = ev.energy(&candidate);
    let accepted = after.total.is_finite() && after.total <= before.total;
    Ok(if accepted {
        LmOutcome { state: candidate, before, after, accepted, damping: damping * cfg.lm.damping_down, step_norm: step.norm() }
    } else {
        LmOutcome { state: state.clone(), before, after: before, accepted, damping: damping * cfg.lm.damping_up, step_norm: step.norm() }
    })
}

/// One outer iteration's record. `before` and `after` are evaluated under the
/// same targets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub before: EnergyBreakdown,
    pub after: EnergyBreakdown,
    pub accepted: bool,
    pub attempts: usize,
    pub damping: f64,
    pub step_norm: f64,
}

#[derive(Clone, Debug)]
pub struct OptimizeResult {
    pub trajectory: Trajectory,
    pub cameras: Vec<Camera>,
    /// Latents of the returned trajectory.
    pub latent: LatentSequence,
    /// Latent variables as optimized (flight-model prior only).
    pub latent_raw: Option<LatentSequence>,
    pub controls: ControlSequence,
    pub assignment: Assignment,
    pub trace: Vec<TraceEntry>,
}

impl OptimizeResult {
    pub fn final_energy(&self) -> Option<EnergyBreakdown> {
        self.trace.last().map(|t| t.after)
    }
}

fn targets_for(prev: &Trajectory, quad: &QuadParams, cfg: &SolverConfig) -> Result<Option<PriorTargets>, SolverError> {
    if !cfg.prior_active() {
        return Ok(None);
    }
    Ok(match cfg.prior {
        PriorKind::Dynamics { sigma_latent, .. } => Some(dynamics_targets_with(prev, quad, sigma_latent, cfg.pitch_inversion)?),
        ref other => compute_targets(other, prev, quad)?,
    }
    .map(|t| t.with_weight(cfg.lambda)))
}

/// Outer loop: targets from the previous iterate, then one LM step.
pub fn optimize(
    obs: &ObservationTable,
    cameras0: &[Camera],
    x0: &Trajectory,
    quad: &QuadParams,
    cfg: &SolverConfig,
) -> Result<OptimizeResult, SolverError> {
    cfg.validate()?;
    if obs.n_frames() != x0.len() || obs.n_cameras() != cameras0.len() {
        return Err(SolverError::InvalidInput(format!(
            "observations cover {} frames x {} cameras, got {} points and {} cameras",
            obs.n_frames(),
            obs.n_cameras(),
            x0.len(),
            cameras0.len()
        )));
    }
    let quad = QuadParams { dt: x0.dt, ..*quad };
    let mut state = ProblemState::new(cameras0.to_vec(), x0.clone(), &quad);
    let mut damping = cfg.lm.initial_damping;
    let mut trace = Vec::with_capacity(cfg.iterations);
    let dynamics = cfg.prior_active() && cfg.prior.is_dynamics();

    for s in 1..=cfg.iterations {
        let targets = targets_for(&state.trajectory, &quad, cfg)?;
        if dynamics {
            state.latent = match (cfg.latent_start, targets.as_ref().and_then(|t| t.latent.as_ref())) {
                (LatentStart::Smoothed, Some(hat)) => hat.clone(),
                _ => trajectory_to_latent_with(&state.trajectory, &quad, cfg.pitch_inversion)?.0,
            };
        }
        for _ in 0..cfg.lm.inner_iterations {
            let ev = Evaluator::new(&state, obs, targets.as_ref(), &quad, cfg);
            let before = ev.energy(&state);
            let eqs = NormalEquations::build(&ev, &state, cfg.execution);
            let mut entry = TraceEntry { iteration: s, before, after: before, accepted: false, attempts: 0, damping, step_norm: 0.0 };
            for _ in 0..=cfg.lm.max_retries {
                entry.attempts += 1;
                match lm_step_linearized(&state, &ev, &eqs, before, damping, cfg) {
                    Ok(out) => {
                        damping = out.damping.max(1e-12);
                        entry.step_norm = out.step_norm;
                        if out.accepted {
                            entry.accepted = true;
                            entry.after = out.after;
                            state = out.state;
                            break;
                        }
                    }
                    Err(SolverError::LinearSolveFailure) => damping *= cfg.lm.damping_up,
                    Err(e) => return Err(e),
                }
            }
            entry.damping = damping;
            let converged = entry.accepted && entry.before.total - entry.after.total <= cfg.lm.relative_tolerance * entry.before.total;
            debug!("iteration {s}: energy {:.6e} -> {:.6e} (attempts {})", entry.before.total, entry.after.total, entry.attempts);
            trace.push(entry);
            if converged {
                break;
            }
        }
    }

    let final_ev = Evaluator::new(&state, obs, None, &quad, cfg);
    let assignment = final_ev.assignment().clone();
    let (latent, _) = trajectory_to_latent_with(&state.trajectory, &quad, cfg.pitch_inversion)?;
    let controls = control_inputs(&latent, &quad);
    Ok(OptimizeResult {
        trajectory: state.trajectory,
        cameras: state.cameras,
        latent,
        latent_raw: dynamics.then_some(state.latent),
        controls,
        assignment,
        trace,
    })
}
