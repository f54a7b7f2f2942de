use nalgebra::{DMatrix, SVD};

use super::{PriorError, PriorTargets};
use crate::dynamics::Trajectory;
use crate::Vec3;

/// Uniform cubic B-spline basis sampled at integer times `0..n`, with a knot
/// every `spacing` samples.
#[derive(Clone, Debug)]
pub struct SplineBasis {
    design: DMatrix<f64>,
}

impl SplineBasis {
    pub fn new(n: usize, spacing: usize) -> Self {
        assert!(spacing >= 1 && n >= 1);
        let h = spacing as f64;
        let segments = ((n - 1) as f64 / h).ceil().max(1.0) as usize;
        let mut design = DMatrix::zeros(n, segments + 3);
        for t in 0..n {
            let s = t as f64 / h;
            let seg = (s.floor() as usize).min(segments - 1);
            let u = s - seg as f64;
            let w = cubic_weights(u);
            for (k, wk) in w.iter().enumerate() {
                design[(t, seg + k)] = *wk;
            }
        }
        Self { design }
    }

    pub fn n_controls(&self) -> usize {
        self.design.ncols()
    }

    /// Least-squares fit evaluated back at the samples. Underdetermined
    /// systems use the minimum-norm solution, which interpolates.
    pub fn smooth(&self, samples: &DMatrix<f64>) -> DMatrix<f64> {
        let svd = SVD::new(self.design.clone(), true, true);
        let controls = svd.solve(samples, 1e-12).expect("SVD was computed with both factors");
        &self.design * controls
    }
}

fn cubic_weights(u: f64) -> [f64; 4] {
    let u2 = u * u;
    let u3 = u2 * u;
    [(1.0 - u).powi(3) / 6.0, (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0, (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0, u3 / 6.0]
}

/// Per-coordinate least-squares cubic B-spline fit of the trajectory.
pub fn spline_targets(prev: &Trajectory, knot_spacing: usize) -> Result<PriorTargets, PriorError> {
    let n = prev.len();
    if n < 4 {
        return Err(PriorError::InsufficientSamples { len: n, min: 4 });
    }
    if knot_spacing < 1 {
        return Err(PriorError::InvalidParameter("knot_spacing must be at least 1".into()));
    }
    let samples = DMatrix::from_fn(n, 3, |t, i| prev.positions[t][i]);
    let fit = SplineBasis::new(n, knot_spacing).smooth(&samples);
    let positions = (0..n).map(|t| Vec3::new(fit[(t, 0)], fit[(t, 1)], fit[(t, 2)])).collect();
    Ok(PriorTargets::positions_only(prev, positions))
}
