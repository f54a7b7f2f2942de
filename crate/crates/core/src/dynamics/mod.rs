//! Quadrotor flight model with yaw held at zero and propeller inertia ignored.
//!
//! The latent state per timestep is roll `phi`, pitch `theta` and collective
//! thrust `u`. [`trajectory_to_latent`] and [`latent_to_trajectory`] convert
//! between positions and latents using forward differences and explicit Euler
//! integration with the same step, so one is the exact left inverse of the
//! other.

mod controls;
mod smoothing;

pub use controls::{body_rates, control_inputs, control_inputs_from_rates, ControlSequence, SIN_ROLL_FLOOR};
pub use smoothing::{convolve_reflect, gaussian_kernel, smooth_latent};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use thiserror::Error;

use crate::Vec3;

/// Thrust magnitudes below this cannot be inverted to an attitude.
pub const FREE_FALL_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("non-positive thrust {u} at index {index}")]
    NonPositiveThrust { index: usize, u: f64 },
    #[error("free fall at index {index}: thrust direction undefined")]
    FreeFall { index: usize },
    #[error("sequence too short: {len} samples, need at least {min}")]
    TooShort { len: usize, min: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
}

/// Physical constants of the vehicle and the sampling step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadParams {
    /// kg
    pub mass: f64,
    /// Moments of inertia, kg m^2.
    pub ix: f64,
    pub iy: f64,
    pub iz: f64,
    /// Propeller inertia. Always zero in this model.
    pub jtp: f64,
    /// m/s^2
    pub gravity: f64,
    /// Timestep in seconds.
    pub dt: f64,
}

impl Default for QuadParams {
    fn default() -> Self {
        Self { mass: 1.0, ix: 8.1e-3, iy: 8.1e-3, iz: 1.42e-2, jtp: 0.0, gravity: 9.81, dt: 1.0 / 30.0 }
    }
}

impl QuadParams {
    pub fn with_fps(fps: f64) -> Self {
        Self { dt: 1.0 / fps, ..Self::default() }
    }

    pub fn validated(self) -> Result<Self, DynamicsError> {
        let ok = self.mass > 0.0 && self.ix > 0.0 && self.iy > 0.0 && self.iz > 0.0 && self.dt > 0.0;
        let finite = [self.mass, self.ix, self.iy, self.iz, self.gravity, self.dt].iter().all(|v| v.is_finite());
        if !ok || !finite {
            return Err(DynamicsError::InvalidParams(format!("{self:?}")));
        }
        if self.jtp != 0.0 {
            return Err(DynamicsError::InvalidParams("propeller inertia must be zero".into()));
        }
        Ok(self)
    }

    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }
}

/// Uniformly sampled 3D positions.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub positions: Vec<Vec3>,
}

impl Trajectory {
    pub const MIN_LEN: usize = 3;

    pub fn new(dt: f64, positions: Vec<Vec3>) -> Result<Self, DynamicsError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(DynamicsError::InvalidParams(format!("timestep {dt}")));
        }
        if positions.len() < Self::MIN_LEN {
            return Err(DynamicsError::TooShort { len: positions.len(), min: Self::MIN_LEN });
        }
        if let Some(index) = positions.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(DynamicsError::NonFinite { index });
        }
        Ok(Self { dt, positions })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Same sampling, new positions.
    pub fn with_positions(&self, positions: Vec<Vec3>) -> Result<Self, DynamicsError> {
        Self::new(self.dt, positions)
    }
}

/// Attitude and thrust at one timestep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Latent {
    pub phi: f64,
    pub theta: f64,
    pub u: f64,
}

impl Latent {
    pub fn new(phi: f64, theta: f64, u: f64) -> Self {
        Self { phi, theta, u }
    }

    pub fn hover(params: &QuadParams) -> Self {
        Self::new(0.0, 0.0, params.hover_thrust())
    }
}

/// Roll, pitch and thrust channels over a sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentSequence {
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    pub u: Vec<f64>,
}

impl LatentSequence {
    pub fn new(phi: Vec<f64>, theta: Vec<f64>, u: Vec<f64>) -> Result<Self, DynamicsError> {
        if phi.len() != theta.len() || phi.len() != u.len() {
            return Err(DynamicsError::LengthMismatch { left: phi.len(), right: theta.len().min(u.len()) });
        }
        Ok(Self { phi, theta, u })
    }

    pub fn from_latents(latents: &[Latent]) -> Self {
        Self {
            phi: latents.iter().map(|l| l.phi).collect(),
            theta: latents.iter().map(|l| l.theta).collect(),
            u: latents.iter().map(|l| l.u).collect(),
        }
    }

    pub fn constant(latent: Latent, len: usize) -> Self {
        Self::from_latents(&vec![latent; len])
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn get(&self, t: usize) -> Latent {
        Latent::new(self.phi[t], self.theta[t], self.u[t])
    }

    pub fn set(&mut self, t: usize, l: Latent) {
        self.phi[t] = l.phi;
        self.theta[t] = l.theta;
        self.u[t] = l.u;
    }

    pub fn channels(&self) -> [&Vec<f64>; 3] {
        [&self.phi, &self.theta, &self.u]
    }

    /// True when every angle lies in `[-pi/2, pi/2)` and every thrust is positive.
    pub fn in_range(&self) -> bool {
        let angle_ok = |a: &f64| (-FRAC_PI_2..FRAC_PI_2).contains(a);
        self.phi.iter().all(angle_ok) && self.theta.iter().all(angle_ok) && self.u.iter().all(|u| *u > 0.0)
    }
}

/// Position and velocity at the first sample; the integration constant of
/// [`latent_to_trajectory`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub x0: Vec3,
    pub v0: Vec3,
}

/// Which pitch inversion formula to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PitchInversion {
    /// `theta = asin(a_x m / (u cos phi))`, the exact inverse of the
    /// acceleration model.
    #[default]
    Exact,
    /// `theta = asin(a_x m cos(phi) / u)`. Kept for comparison only; it does
    /// not invert [`accel_from_latent`] when `phi != 0`.
    CosineProduct,
}

/// Acceleration produced by attitude and thrust.
pub fn accel_from_latent(l: &Latent, params: &QuadParams) -> Result<Vec3, DynamicsError> {
    if !(l.u > 0.0) {
        return Err(DynamicsError::NonPositiveThrust { index: 0, u: l.u });
    }
    Ok(accel_unchecked(l, params))
}

/// [`accel_from_latent`] without the thrust sign check; the solver evaluates
/// the model at arbitrary iterates.
pub fn accel_unchecked(l: &Latent, params: &QuadParams) -> Vec3 {
    let (sp, cp) = l.phi.sin_cos();
    let (st, ct) = l.theta.sin_cos();
    Vec3::new(st * cp, -sp, ct * cp) * (l.u / params.mass) - Vec3::new(0.0, 0.0, params.gravity)
}

/// Columns are the derivatives of the acceleration w.r.t. `phi`, `theta`, `u`.
pub fn accel_jacobian(l: &Latent, params: &QuadParams) -> Matrix3<f64> {
    let (sp, cp) = l.phi.sin_cos();
    let (st, ct) = l.theta.sin_cos();
    let k = l.u / params.mass;
    Matrix3::from_columns(&[
        Vec3::new(-st * sp, -cp, -ct * sp) * k,
        Vec3::new(ct * cp, 0.0, -st * cp) * k,
        Vec3::new(st * cp, -sp, ct * cp) / params.mass,
    ])
}

pub fn latent_from_accel(a: &Vec3, params: &QuadParams) -> Result<Latent, DynamicsError> {
    latent_from_accel_with(a, params, PitchInversion::Exact)
}

pub fn latent_from_accel_with(a: &Vec3, params: &QuadParams, form: PitchInversion) -> Result<Latent, DynamicsError> {
    let thrust_dir = Vec3::new(a.x, a.y, a.z + params.gravity);
    let norm = thrust_dir.norm();
    if !(norm >= FREE_FALL_THRESHOLD) {
        return Err(DynamicsError::FreeFall { index: 0 });
    }
    let u = params.mass * norm;
    let phi = (-a.y * params.mass / u).clamp(-1.0, 1.0).asin();
    let s = match form {
        PitchInversion::Exact => {
            let cp = phi.cos();
            if cp > 0.0 {
                a.x * params.mass / (u * cp)
            } else {
                a.x.signum()
            }
        }
        PitchInversion::CosineProduct => a.x * params.mass / u * phi.cos(),
    };
    Ok(Latent::new(phi, s.clamp(-1.0, 1.0).asin(), u))
}

fn with_index(e: DynamicsError, index: usize) -> DynamicsError {
    match e {
        DynamicsError::FreeFall { .. } => DynamicsError::FreeFall { index },
        DynamicsError::NonPositiveThrust { u, .. } => DynamicsError::NonPositiveThrust { index, u },
        other => other,
    }
}

/// Forward-difference accelerations `a_t`, `t = 0..T-2`.
pub fn finite_difference_accels(x: &Trajectory) -> Vec<Vec3> {
    let dt = x.dt;
    let v: Vec<Vec3> = x.positions.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
    v.windows(2).map(|w| (w[1] - w[0]) / dt).collect()
}

/// Trajectory to latent sequence. The last two entries repeat the last
/// computable latent so the output has one entry per position.
pub fn trajectory_to_latent(x: &Trajectory, params: &QuadParams) -> Result<(LatentSequence, InitialState), DynamicsError> {
    trajectory_to_latent_with(x, params, PitchInversion::Exact)
}

pub fn trajectory_to_latent_with(
    x: &Trajectory,
    params: &QuadParams,
    form: PitchInversion,
) -> Result<(LatentSequence, InitialState), DynamicsError> {
    if x.len() < Trajectory::MIN_LEN {
        return Err(DynamicsError::TooShort { len: x.len(), min: Trajectory::MIN_LEN });
    }
    let p = QuadParams { dt: x.dt, ..*params };
    let mut latents = finite_difference_accels(x)
        .iter()
        .enumerate()
        .map(|(t, a)| latent_from_accel_with(a, &p, form).map_err(|e| with_index(e, t)))
        .collect::<Result<Vec<_>, _>>()?;
    let last = *latents.last().expect("T >= 3 gives at least one acceleration");
    latents.extend([last, last]);
    let s0 = InitialState { x0: x.positions[0], v0: (x.positions[1] - x.positions[0]) / x.dt };
    Ok((LatentSequence::from_latents(&latents), s0))
}

/// Explicit Euler integration of the latent sequence from `s0`.
pub fn latent_to_trajectory(gamma: &LatentSequence, s0: &InitialState, params: &QuadParams) -> Result<Trajectory, DynamicsError> {
    let n = gamma.len();
    let mut positions = Vec::with_capacity(n);
    let (mut x, mut v) = (s0.x0, s0.v0);
    for t in 0..n {
        positions.push(x);
        let a = accel_from_latent(&gamma.get(t), params).map_err(|e| with_index(e, t))?;
        x += v * params.dt;
        v += a * params.dt;
    }
    Trajectory::new(params.dt, positions)
}
