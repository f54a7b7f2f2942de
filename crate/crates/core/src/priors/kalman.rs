use nalgebra::{Matrix3, RowVector3, Vector3};

use super::{PriorError, PriorTargets};
use crate::dynamics::Trajectory;
use crate::Vec3;

/// Initial velocity and acceleration variance; large enough that the first
/// few measurements dominate.
const INITIAL_RATE_VARIANCE: f64 = 1e4;

/// Constant-acceleration model for one axis, state `[p, v, a]`, driven by
/// white jerk of spectral density `q`.
struct AxisFilter {
    f: Matrix3<f64>,
    q: Matrix3<f64>,
    r: f64,
    x: Vector3<f64>,
    p: Matrix3<f64>,
}

impl AxisFilter {
    fn new(dt: f64, q: f64, r: f64, p0: f64) -> Self {
        let (d2, d3, d4, d5) = (dt * dt, dt.powi(3), dt.powi(4), dt.powi(5));
        Self {
            f: Matrix3::new(1.0, dt, 0.5 * d2, 0.0, 1.0, dt, 0.0, 0.0, 1.0),
            q: Matrix3::new(d5 / 20.0, d4 / 8.0, d3 / 6.0, d4 / 8.0, d3 / 3.0, d2 / 2.0, d3 / 6.0, d2 / 2.0, dt) * q,
            r,
            x: Vector3::new(p0, 0.0, 0.0),
            p: Matrix3::from_diagonal(&Vector3::new(r, INITIAL_RATE_VARIANCE, INITIAL_RATE_VARIANCE)),
        }
    }

    fn predict(&mut self) -> f64 {
        self.x = self.f * self.x;
        self.p = self.f * self.p * self.f.transpose() + self.q;
        self.x[0]
    }

    fn update(&mut self, z: f64) {
        let h = RowVector3::new(1.0, 0.0, 0.0);
        let s = self.p[(0, 0)] + self.r;
        let k = self.p.column(0) / s;
        self.x += k * (z - self.x[0]);
        self.p = (Matrix3::identity() - k * h) * self.p;
        self.p = (self.p + self.p.transpose()) * 0.5;
    }
}

/// One-step predictions of a forward constant-acceleration Kalman filter run
/// over the trajectory: `x̂_t` is the prediction before the update at `t`,
/// and `x̂_0` is the first sample.
pub fn kalman_targets(prev: &Trajectory, q: f64, r: f64) -> Result<PriorTargets, PriorError> {
    if !(q > 0.0 && r > 0.0) {
        return Err(PriorError::InvalidParameter(format!("q = {q}, r = {r}")));
    }
    let n = prev.len();
    let x0 = prev.positions[0];
    let mut axes: Vec<AxisFilter> = (0..3).map(|i| AxisFilter::new(prev.dt, q, r, x0[i])).collect();
    let mut out = Vec::with_capacity(n);
    out.push(x0);
    for z in &prev.positions[1..] {
        let pred = Vec3::new(axes[0].predict(), axes[1].predict(), axes[2].predict());
        out.push(pred);
        for (i, f) in axes.iter_mut().enumerate() {
            f.update(z[i]);
        }
    }
    Ok(PriorTargets::positions_only(prev, out))
}
