//! Synthetic scenes: waypoint flights integrated with the flight model,
//! camera rings around the flight volume, and cluttered candidate detections.

use nalgebra::{Unit, UnitQuaternion};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::{Assignment, ObservationTable, DEFAULT_CANDIDATE_CAP};
use crate::dynamics::{
    control_inputs, latent_from_accel, latent_to_trajectory, ControlSequence, DynamicsError, InitialState, Latent, LatentSequence,
    QuadParams, Trajectory,
};
use crate::exec::Execution;
use crate::rng::{rng_for, stream};
use crate::scene::{Camera, Intrinsics, SceneError};
use crate::{Vec2, Vec3};

/// Position gain of the waypoint controller, 1/s².
pub const POSITION_GAIN: f64 = 1.2;
/// Velocity gain, 1/s.
pub const VELOCITY_GAIN: f64 = 1.8;
pub const TILT_LIMIT: f64 = 0.35;
/// Thrust limits as multiples of hover thrust.
pub const THRUST_LIMITS: (f64, f64) = (0.3, 2.0);
pub const ARRIVAL_RADIUS: f64 = 0.5;
/// Camera distance from the volume center, in volume half-diagonals.
pub const CAMERA_RADIUS_FACTOR: f64 = 1.5;
/// Elevation band of camera centers, degrees.
pub const CAMERA_ELEVATION_DEG: (f64, f64) = (-10.0, 35.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Volume {
    pub min: Vec3,
    pub max: Vec3,
}

impl Default for Volume {
    fn default() -> Self {
        Self { min: Vec3::new(-5.0, -5.0, 0.5), max: Vec3::new(5.0, 5.0, 5.5) }
    }
}

impl Volume {
    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn half_diagonal(&self) -> f64 {
        (self.max - self.min).norm() * 0.5
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec3 {
        Vec3::from_fn(|i, _| rng.random_range(self.min[i]..=self.max[i]))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OutlierModel {
    #[default]
    UniformInImage,
    /// Clutter scattered around the true projection.
    NearTarget { sigma_clutter: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub sigma_px: f64,
    pub miss_rate: f64,
    pub outlier_max: usize,
    pub outlier_model: OutlierModel,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { sigma_px: 0.0, miss_rate: 0.0, outlier_max: 0, outlier_model: OutlierModel::UniformInImage }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbConfig {
    /// Camera center noise, meters.
    pub sigma_p: f64,
    /// Camera orientation noise, degrees.
    pub sigma_o: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub frames: usize,
    pub fps: f64,
    pub n_cameras: usize,
    pub volume: Volume,
    pub waypoints: usize,
    pub noise: NoiseConfig,
    pub perturb: PerturbConfig,
    pub seed: u64,
    pub quad: QuadParams,
    pub intrinsics: Intrinsics,
    pub candidate_cap: usize,
}

pub fn default_intrinsics() -> Intrinsics {
    Intrinsics { fx: 1600.0, fy: 1600.0, cx: 1352.0, cy: 768.0, k1: 0.0, k2: 0.0, width: 2704.0, height: 1536.0 }
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            frames: 510,
            fps: 30.0,
            n_cameras: 10,
            volume: Volume::default(),
            waypoints: 8,
            noise: NoiseConfig::default(),
            perturb: PerturbConfig::default(),
            seed: 0,
            quad: QuadParams::with_fps(30.0),
            intrinsics: default_intrinsics(),
            candidate_cap: DEFAULT_CANDIDATE_CAP,
        }
    }
}

impl SimConfig {
    /// Quad parameters with the timestep taken from `fps`.
    pub fn quad_params(&self) -> QuadParams {
        QuadParams { dt: 1.0 / self.fps, ..self.quad }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.frames < Trajectory::MIN_LEN {
            return bad(format!("frames = {} < {}", self.frames, Trajectory::MIN_LEN));
        }
        if self.n_cameras < 2 {
            return bad("at least two cameras are required".into());
        }
        if !(self.fps > 0.0) {
            return bad("fps must be positive".into());
        }
        if self.waypoints < 1 {
            return bad("at least one waypoint is required".into());
        }
        if !(0.0..=1.0).contains(&self.noise.miss_rate) {
            return bad("miss_rate must lie in [0, 1]".into());
        }
        if self.noise.outlier_max + 1 > self.candidate_cap {
            return bad(format!("outlier_max {} exceeds the candidate cap {}", self.noise.outlier_max, self.candidate_cap));
        }
        if !(self.noise.sigma_px >= 0.0 && self.perturb.sigma_p >= 0.0 && self.perturb.sigma_o >= 0.0) {
            return bad("noise levels must be non-negative".into());
        }
        if (0..3).any(|i| !(self.volume.max[i] > self.volume.min[i])) {
            return bad("volume must have positive extent".into());
        }
        self.quad_params().validated()?;
        self.intrinsics.validated()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Flight {
    pub trajectory: Trajectory,
    pub latent: LatentSequence,
    pub initial_state: InitialState,
    pub waypoints: Vec<Vec3>,
}

/// PD command toward `target`, clipped to the tilt and thrust limits.
fn controller(x: &Vec3, v: &Vec3, target: &Vec3, q: &QuadParams) -> Latent {
    let mut a = (target - x) * POSITION_GAIN - v * VELOCITY_GAIN;
    a.z = a.z.max((THRUST_LIMITS.0 - 1.0) * q.gravity);
    let l = latent_from_accel(&a, q).unwrap_or_else(|_| Latent::hover(q));
    let hover = q.hover_thrust();
    Latent::new(
        l.phi.clamp(-TILT_LIMIT, TILT_LIMIT),
        l.theta.clamp(-TILT_LIMIT, TILT_LIMIT),
        l.u.clamp(THRUST_LIMITS.0 * hover, THRUST_LIMITS.1 * hover),
    )
}

/// Waypoint flight starting at rest on the first waypoint.
pub fn generate_flight(cfg: &SimConfig) -> Result<Flight, SimError> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, stream::FLIGHT, 0);
    let waypoints: Vec<Vec3> = (0..cfg.waypoints).map(|_| cfg.volume.sample(&mut rng)).collect();
    fly_waypoints(&waypoints, cfg.frames, &cfg.quad_params())
}

/// Runs the waypoint controller for `frames` steps and integrates the
/// commanded latents.
pub fn fly_waypoints(waypoints: &[Vec3], frames: usize, q: &QuadParams) -> Result<Flight, SimError> {
    let s0 = InitialState { x0: waypoints[0], v0: Vec3::zeros() };
    let (mut x, mut v) = (s0.x0, s0.v0);
    let mut next = 1.min(waypoints.len() - 1);
    let mut latents = Vec::with_capacity(frames);
    for _ in 0..frames {
        if (waypoints[next] - x).norm() < ARRIVAL_RADIUS && next + 1 < waypoints.len() {
            next += 1;
        }
        let l = controller(&x, &v, &waypoints[next], q);
        let a = crate::dynamics::accel_from_latent(&l, q)?;
        latents.push(l);
        x += v * q.dt;
        v += a * q.dt;
    }
    let latent = LatentSequence::from_latents(&latents);
    let trajectory = latent_to_trajectory(&latent, &s0, q)?;
    Ok(Flight { trajectory, latent, initial_state: s0, waypoints: waypoints.to_vec() })
}

/// Cameras on a spherical band around the volume, all looking at its center.
pub fn place_cameras(cfg: &SimConfig) -> Result<Vec<Camera>, SimError> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, stream::CAMERAS, 0);
    let center = cfg.volume.center();
    let radius = CAMERA_RADIUS_FACTOR * cfg.volume.half_diagonal();
    let (lo, hi) = (CAMERA_ELEVATION_DEG.0.to_radians(), CAMERA_ELEVATION_DEG.1.to_radians());
    let mut centers: Vec<Vec3> = Vec::with_capacity(cfg.n_cameras);
    let mut tries = 0usize;
    while centers.len() < cfg.n_cameras {
        tries += 1;
        if tries > 100_000 {
            return Err(SimError::InvalidConfig("cannot place cameras with the required spacing".into()));
        }
        let az = rng.random_range(0.0..std::f64::consts::TAU);
        let el = rng.random_range(lo..=hi);
        let c = center + Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()) * radius;
        if centers.iter().all(|o| (o - c).norm() > 0.1 * radius) {
            centers.push(c);
        }
    }
    centers.into_iter().enumerate().map(|(j, c)| Camera::look_at(j as u32, cfg.intrinsics, c, center).map_err(SimError::from)).collect()
}

/// Candidate detections per camera and frame, with the index of the true
/// candidate. Camera `j` draws from its own stream.
pub fn render_detections(
    x: &Trajectory,
    cameras: &[Camera],
    noise: &NoiseConfig,
    cap: usize,
    seed: u64,
    exec: Execution,
) -> (ObservationTable, Assignment) {
    let n = x.len();
    let per_camera = exec.map(cameras.len(), |j| {
        let cam = &cameras[j];
        let k = &cam.intrinsics;
        let mut rng = rng_for(seed, stream::DETECTIONS, j as u64);
        let pixel_noise = Normal::new(0.0, noise.sigma_px).expect("sigma_px is non-negative");
        let mut sets = Vec::with_capacity(n);
        let mut truth = Vec::with_capacity(n);
        for p in &x.positions {
            let proj = cam.project(p).ok();
            let missed = rng.random_bool(noise.miss_rate);
            let observed = proj
                .map(|q| q + Vec2::new(pixel_noise.sample(&mut rng), pixel_noise.sample(&mut rng)))
                .filter(|q| k.contains(q) && !missed);
            let budget = cap.saturating_sub(observed.is_some() as usize).min(noise.outlier_max);
            let n_out = rng.random_range(0..=budget);
            let mut set: Vec<Vec2> = (0..n_out).map(|_| outlier(&mut rng, k, proj, &noise.outlier_model)).collect();
            set.shuffle(&mut rng);
            let idx = observed.map(|q| {
                let i = rng.random_range(0..=set.len());
                set.insert(i, q);
                i
            });
            sets.push(set);
            truth.push(idx);
        }
        (sets, truth)
    });
    let mut table = ObservationTable::new(n, cameras.len());
    let mut assignment = Assignment::empty(n, cameras.len());
    for (j, (sets, truth)) in per_camera.into_iter().enumerate() {
        for (t, (set, idx)) in sets.into_iter().zip(truth).enumerate() {
            *table.candidates_mut(t, j) = set;
            assignment.set(t, j, idx);
        }
    }
    (table, assignment)
}

fn uniform_pixel<R: Rng>(rng: &mut R, k: &Intrinsics) -> Vec2 {
    Vec2::new(rng.random_range(0.0..k.width), rng.random_range(0.0..k.height))
}

fn outlier<R: Rng>(rng: &mut R, k: &Intrinsics, proj: Option<Vec2>, model: &OutlierModel) -> Vec2 {
    match (model, proj) {
        (OutlierModel::NearTarget { sigma_clutter }, Some(p)) => {
            for _ in 0..16 {
                let z: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
                let q = p + Vec2::new(z[0], z[1]) * *sigma_clutter;
                if k.contains(&q) {
                    return q;
                }
            }
            uniform_pixel(rng, k)
        }
        _ => uniform_pixel(rng, k),
    }
}

/// Gaussian center noise and a random-axis rotation with half-normal angle.
/// With `keep_first`, camera 0 is returned unchanged.
pub fn perturb_cameras(cameras: &[Camera], sigma_p: f64, sigma_o_deg: f64, seed: u64, keep_first: bool) -> Vec<Camera> {
    cameras
        .iter()
        .enumerate()
        .map(|(j, c)| {
            if (keep_first && j == 0) || (sigma_p == 0.0 && sigma_o_deg == 0.0) {
                return c.clone();
            }
            let mut rng = rng_for(seed, stream::PERTURB, j as u64);
            let dc = Vec3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal)) * sigma_p;
            let axis = loop {
                let a = Vec3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                if let Some(u) = Unit::try_new(a, 1e-9) {
                    break u;
                }
            };
            let angle = (rng.sample::<f64, _>(StandardNormal) * sigma_o_deg.to_radians()).abs();
            let rotation = UnitQuaternion::from_axis_angle(&axis, angle) * c.rotation;
            let center = c.center() + dc;
            Camera::new(c.id, c.intrinsics, rotation, -(rotation * center))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub trajectory: Trajectory,
    pub latent: LatentSequence,
    pub controls: ControlSequence,
    pub cameras: Vec<Camera>,
    pub assignment: Assignment,
}

/// Everything a run needs: ground truth, detections and perturbed cameras.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedScene {
    pub config: SimConfig,
    pub ground_truth: GroundTruth,
    pub observations: ObservationTable,
    pub initial_cameras: Vec<Camera>,
}

pub fn simulate(cfg: &SimConfig) -> Result<SimulatedScene, SimError> {
    let flight = generate_flight(cfg)?;
    let cameras = place_cameras(cfg)?;
    let (observations, assignment) =
        render_detections(&flight.trajectory, &cameras, &cfg.noise, cfg.candidate_cap, cfg.seed, Execution::default());
    let initial_cameras = perturb_cameras(&cameras, cfg.perturb.sigma_p, cfg.perturb.sigma_o, cfg.seed, true);
    let controls = control_inputs(&flight.latent, &cfg.quad_params());
    Ok(SimulatedScene {
        config: *cfg,
        ground_truth: GroundTruth { trajectory: flight.trajectory, latent: flight.latent, controls, cameras, assignment },
        observations,
        initial_cameras,
    })
}
