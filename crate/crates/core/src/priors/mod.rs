//! Motion priors. Each prior turns the previous trajectory estimate into
//! constant targets for the next solver iteration: predicted positions for
//! the smoothing and filtering priors, smoothed latents for the flight-model
//! prior.

mod kalman;
mod spline;

pub use kalman::kalman_targets;
pub use spline::{spline_targets, SplineBasis};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    convolve_reflect, gaussian_kernel, latent_to_trajectory, smooth_latent, trajectory_to_latent_with, DynamicsError, LatentSequence,
    PitchInversion, QuadParams, Trajectory,
};
use crate::Vec3;

pub const DEFAULT_SIGMA: f64 = 1.1;
pub const DEFAULT_KNOT_SPACING: usize = 10;
pub const DEFAULT_KALMAN_Q: f64 = 1.0;
pub const DEFAULT_KALMAN_R: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PriorError {
    #[error("need at least {min} samples, got {len}")]
    InsufficientSamples { len: usize, min: usize },
    #[error("invalid prior parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorKind {
    None,
    GaussianSmooth { sigma: f64 },
    SplineSmooth { knot_spacing: usize },
    KalmanCa { q: f64, r: f64 },
    Dynamics { lambda1: f64, lambda2: f64, lambda3: f64, sigma_latent: f64 },
}

impl Default for PriorKind {
    fn default() -> Self {
        Self::dynamics()
    }
}

impl PriorKind {
    pub fn gaussian() -> Self {
        PriorKind::GaussianSmooth { sigma: DEFAULT_SIGMA }
    }

    pub fn spline() -> Self {
        PriorKind::SplineSmooth { knot_spacing: DEFAULT_KNOT_SPACING }
    }

    pub fn kalman() -> Self {
        PriorKind::KalmanCa { q: DEFAULT_KALMAN_Q, r: DEFAULT_KALMAN_R }
    }

    pub fn dynamics() -> Self {
        PriorKind::Dynamics { lambda1: 1.0, lambda2: 1.0, lambda3: 0.1, sigma_latent: DEFAULT_SIGMA }
    }

    /// Parses the short names used on the command line.
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "none" => PriorKind::None,
            "gs" => Self::gaussian(),
            "ss" => Self::spline(),
            "kf" => Self::kalman(),
            "dm" => Self::dynamics(),
            _ => return None,
        })
    }

    pub fn short_name(&self) -> &'static str {
        match self {
            PriorKind::None => "none",
            PriorKind::GaussianSmooth { .. } => "gs",
            PriorKind::SplineSmooth { .. } => "ss",
            PriorKind::KalmanCa { .. } => "kf",
            PriorKind::Dynamics { .. } => "dm",
        }
    }

    pub fn is_dynamics(&self) -> bool {
        matches!(self, PriorKind::Dynamics { .. })
    }

    pub fn validate(&self) -> Result<(), PriorError> {
        let bad = |m: String| Err(PriorError::InvalidParameter(m));
        match *self {
            PriorKind::None => Ok(()),
            PriorKind::GaussianSmooth { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => bad(format!("sigma = {sigma}")),
            PriorKind::SplineSmooth { knot_spacing } if knot_spacing < 1 => bad("knot_spacing must be at least 1".into()),
            PriorKind::KalmanCa { q, r } if !(q > 0.0 && r > 0.0) => bad(format!("q = {q}, r = {r}")),
            PriorKind::Dynamics { lambda1, lambda2, lambda3, sigma_latent }
                if [lambda1, lambda2, lambda3, sigma_latent].iter().any(|v| !(*v >= 0.0 && v.is_finite())) =>
            {
                bad("dynamics weights and sigma must be non-negative".into())
            }
            _ => Ok(()),
        }
    }
}

/// Constant targets for one outer solver iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorTargets {
    /// Predicted positions `x̂_t`.
    pub positions: Option<Vec<Vec3>>,
    /// Smoothed latent targets `Γ̂`.
    pub latent: Option<LatentSequence>,
    /// The trajectory the targets were computed from.
    pub previous: Vec<Vec3>,
    pub weight: f64,
}

impl PriorTargets {
    fn positions_only(previous: &Trajectory, positions: Vec<Vec3>) -> Self {
        Self { positions: Some(positions), latent: None, previous: previous.positions.clone(), weight: 1.0 }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }
}

/// Channel-wise Gaussian smoothing of the positions, with the same kernel and
/// boundary rule as the latent smoother.
pub fn gaussian_targets(prev: &Trajectory, sigma: f64) -> Result<PriorTargets, PriorError> {
    PriorKind::GaussianSmooth { sigma }.validate()?;
    Ok(PriorTargets::positions_only(prev, smooth_positions(&prev.positions, sigma)))
}

pub(crate) fn smooth_positions(positions: &[Vec3], sigma: f64) -> Vec<Vec3> {
    if sigma == 0.0 {
        return positions.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let axes: Vec<Vec<f64>> = (0..3).map(|i| convolve_reflect(&positions.iter().map(|p| p[i]).collect::<Vec<_>>(), &k)).collect();
    (0..positions.len()).map(|t| Vec3::new(axes[0][t], axes[1][t], axes[2][t])).collect()
}

/// Smoothed latents of the previous trajectory, and the trajectory they
/// integrate to.
pub fn dynamics_targets(prev: &Trajectory, params: &QuadParams, sigma_latent: f64) -> Result<PriorTargets, PriorError> {
    dynamics_targets_with(prev, params, sigma_latent, PitchInversion::Exact)
}

pub fn dynamics_targets_with(
    prev: &Trajectory,
    params: &QuadParams,
    sigma_latent: f64,
    form: PitchInversion,
) -> Result<PriorTargets, PriorError> {
    if !(sigma_latent >= 0.0 && sigma_latent.is_finite()) {
        return Err(PriorError::InvalidParameter(format!("sigma_latent = {sigma_latent}")));
    }
    let p = QuadParams { dt: prev.dt, ..*params };
    let (gamma, s0) = trajectory_to_latent_with(prev, &p, form)?;
    let smoothed = smooth_latent(&gamma, sigma_latent);
    let integrated = latent_to_trajectory(&smoothed, &s0, &p)?;
    Ok(PriorTargets { positions: Some(integrated.positions), latent: Some(smoothed), previous: prev.positions.clone(), weight: 1.0 })
}

/// Targets for any prior kind; `None` for [`PriorKind::None`].
pub fn compute_targets(kind: &PriorKind, prev: &Trajectory, params: &QuadParams) -> Result<Option<PriorTargets>, PriorError> {
    kind.validate()?;
    Ok(match *kind {
        PriorKind::None => None,
        PriorKind::GaussianSmooth { sigma } => Some(gaussian_targets(prev, sigma)?),
        PriorKind::SplineSmooth { knot_spacing } => Some(spline_targets(prev, knot_spacing)?),
        PriorKind::KalmanCa { q, r } => Some(kalman_targets(prev, q, r)?),
        PriorKind::Dynamics { sigma_latent, .. } => Some(dynamics_targets(prev, params, sigma_latent)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn line_with_spike() -> Trajectory {
        let mut p: Vec<Vec3> = (0..21).map(|t| Vec3::new(t as f64 * 0.1, 0.0, 1.0)).collect();
        p[10].y = 1.0;
        Trajectory::new(0.1, p).unwrap()
    }

    #[test]
    fn gaussian_identity_and_constant() {
        let x = line_with_spike();
        assert_eq!(gaussian_targets(&x, 0.0).unwrap().positions.unwrap(), x.positions);
        let c = Trajectory::new(0.1, vec![Vec3::new(1.0, 2.0, 3.0); 12]).unwrap();
        for p in gaussian_targets(&c, 1.5).unwrap().positions.unwrap() {
            assert_relative_eq!(p, Vec3::new(1.0, 2.0, 3.0), epsilon = 1e-12);
        }
    }

    #[test]
    fn gaussian_spike_attenuated_by_center_weight() {
        let x = line_with_spike();
        let out = gaussian_targets(&x, 2.0).unwrap().positions.unwrap();
        let k = gaussian_kernel(2.0);
        // direct convolution away from the boundary
        let direct: f64 = (0..k.len()).map(|j| k[j] * x.positions[10 + j - k.len() / 2].y).sum();
        assert_relative_eq!(out[10].y, direct, epsilon = 1e-15);
        assert_relative_eq!(out[10].y, k[k.len() / 2], epsilon = 1e-15);
        assert_relative_eq!(out[10].x, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn dynamics_targets_of_hover_are_constant() {
        let q = QuadParams::default();
        let x = Trajectory::new(q.dt, vec![Vec3::new(0.0, 0.0, 1.0); 30]).unwrap();
        let t = dynamics_targets(&x, &q, 1.1).unwrap();
        let l = t.latent.unwrap();
        for i in 0..30 {
            assert_relative_eq!(l.phi[i], 0.0, epsilon = 1e-12);
            assert_relative_eq!(l.theta[i], 0.0, epsilon = 1e-12);
            assert_relative_eq!(l.u[i], q.hover_thrust(), epsilon = 1e-9);
        }
    }

    #[test]
    fn names_round_trip() {
        for n in ["none", "gs", "ss", "kf", "dm"] {
            assert_eq!(PriorKind::from_name(n).unwrap().short_name(), n);
        }
        assert!(PriorKind::from_name("xx").is_none());
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(PriorKind::KalmanCa { q: 0.0, r: 1.0 }.validate().is_err());
        assert!(PriorKind::GaussianSmooth { sigma: -1.0 }.validate().is_err());
        assert!(PriorKind::SplineSmooth { knot_spacing: 0 }.validate().is_err());
    }
}
