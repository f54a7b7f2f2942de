use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::dynamics::{ControlSequence, LatentSequence, Trajectory};
use crate::scene::align_similarity;

/// Threshold grid of the error curve: 0 to 5 m in 5 cm steps.
pub const THRESHOLD_STEP: f64 = 0.05;
pub const THRESHOLD_MAX: f64 = 5.0;
/// Spectral energy above this fraction of the sampling rate counts as high
/// frequency (a quarter of Nyquist).
pub const HIGH_FREQUENCY_FRACTION: f64 = 0.125;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetrics {
    pub rmse: f64,
    pub per_point_errors: Vec<f64>,
    /// `(threshold, fraction of points with error <= threshold)`.
    pub threshold_curve: Vec<(f64, f64)>,
}

/// Errors after robust similarity alignment of `est` onto `gt`.
pub fn trajectory_metrics(est: &Trajectory, gt: &Trajectory) -> Result<TrajectoryMetrics, EvalError> {
    if est.len() != gt.len() {
        return Err(EvalError::LengthMismatch { left: est.len(), right: gt.len() });
    }
    let s = align_similarity(&est.positions, &gt.positions)?;
    let per_point_errors: Vec<f64> = est.positions.iter().zip(&gt.positions).map(|(e, g)| (s.apply(e) - g).norm()).collect();
    let rmse = (per_point_errors.iter().map(|e| e * e).sum::<f64>() / per_point_errors.len() as f64).sqrt();
    let steps = (THRESHOLD_MAX / THRESHOLD_STEP).round() as usize;
    let n = per_point_errors.len() as f64;
    let threshold_curve = (0..=steps)
        .map(|i| {
            let th = i as f64 * THRESHOLD_STEP;
            (th, per_point_errors.iter().filter(|e| **e <= th).count() as f64 / n)
        })
        .collect();
    Ok(TrajectoryMetrics { rmse, per_point_errors, threshold_curve })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlMetrics {
    pub rmse_u: f64,
    pub rmse_phi: f64,
    pub rmse_theta: f64,
    pub rmse_u_phi: f64,
    pub rmse_u_theta: f64,
    pub correlation_u: f64,
    pub hf_energy_u: f64,
}

pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

/// Pearson correlation; 0 when either signal is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Energy of the mean-removed signal above `HIGH_FREQUENCY_FRACTION` of the
/// sampling rate, normalized by length (Parseval).
pub fn high_frequency_energy(signal: &[f64]) -> f64 {
    let n = signal.len();
    if n < 2 {
        return 0.0;
    }
    let mean = signal.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf.iter()
        .enumerate()
        .filter(|(k, _)| {
            let f = (*k).min(n - k) as f64 / n as f64;
            f > HIGH_FREQUENCY_FRACTION
        })
        .map(|(_, c)| c.norm_sqr())
        .sum::<f64>()
        / (n * n) as f64
}

pub fn control_metrics(
    est: (&LatentSequence, &ControlSequence),
    gt: (&LatentSequence, &ControlSequence),
) -> Result<ControlMetrics, EvalError> {
    let n = gt.0.len();
    if est.0.len() != n || est.1.len() != gt.1.len() {
        return Err(EvalError::LengthMismatch { left: est.0.len(), right: n });
    }
    Ok(ControlMetrics {
        rmse_u: rmse(&est.0.u, &gt.0.u),
        rmse_phi: rmse(&est.0.phi, &gt.0.phi),
        rmse_theta: rmse(&est.0.theta, &gt.0.theta),
        rmse_u_phi: rmse(&est.1.u_phi, &gt.1.u_phi),
        rmse_u_theta: rmse(&est.1.u_theta, &gt.1.u_theta),
        correlation_u: pearson(&est.0.u, &gt.0.u),
        hf_energy_u: high_frequency_energy(&est.0.u),
    })
}
