use serde::{Deserialize, Serialize};

use super::{LatentSequence, QuadParams};
use crate::Vec3;

/// Floor on `|sin(phi)|` in the body-rate formula, which divides by it.
pub const SIN_ROLL_FLOOR: f64 = 1e-3;

/// Roll and pitch torque commands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSequence {
    pub u_phi: Vec<f64>,
    pub u_theta: Vec<f64>,
}

impl ControlSequence {
    pub fn len(&self) -> usize {
        self.u_phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u_phi.is_empty()
    }
}

fn clamped_sin(phi: f64) -> f64 {
    let s = phi.sin();
    if s.abs() >= SIN_ROLL_FLOOR {
        s
    } else if s < 0.0 {
        -SIN_ROLL_FLOOR
    } else {
        SIN_ROLL_FLOOR
    }
}

/// Body rates `(p, q, r)` from consecutive attitudes. Entry 0 repeats entry 1.
pub fn body_rates(gamma: &LatentSequence, params: &QuadParams) -> Vec<Vec3> {
    let n = gamma.len();
    assert!(n >= 2, "body rates need at least two samples");
    let dt = params.dt;
    let mut rates: Vec<Vec3> = (1..n)
        .map(|t| {
            let (phi, phi_prev) = (gamma.phi[t], gamma.phi[t - 1]);
            let (theta, theta_prev) = (gamma.theta[t], gamma.theta[t - 1]);
            let s = clamped_sin(phi);
            Vec3::new((phi - phi_prev) / dt, (theta - theta_prev) / dt * (phi.cos() / (s * s)), -theta / s)
        })
        .collect();
    rates.insert(0, rates[0]);
    rates
}

/// Torque commands from body rates. Entries 0 and 1 repeat entry 2, the
/// first one built from two genuine rate samples.
pub fn control_inputs_from_rates(rates: &[Vec3], params: &QuadParams) -> ControlSequence {
    let n = rates.len();
    assert!(n >= 3, "control inputs need at least three samples");
    let dt = params.dt;
    let (ix, iy, iz) = (params.ix, params.iy, params.iz);
    let mut u_phi = vec![0.0; n];
    let mut u_theta = vec![0.0; n];
    for t in 2..n {
        let (b, bp) = (rates[t], rates[t - 1]);
        u_phi[t] = ix * (b.x - bp.x) / dt - (iy - iz) * b.y * b.z;
        u_theta[t] = iy * (b.y - bp.y) / dt - (iz - ix) * b.x * b.z;
    }
    for t in 0..2 {
        u_phi[t] = u_phi[2];
        u_theta[t] = u_theta[2];
    }
    ControlSequence { u_phi, u_theta }
}

pub fn control_inputs(gamma: &LatentSequence, params: &QuadParams) -> ControlSequence {
    control_inputs_from_rates(&body_rates(gamma, params), params)
}
