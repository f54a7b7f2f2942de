//! Robust penalties on residual vectors.
//!
//! Losses act on the squared residual norm `s = |r|^2` and follow the
//! convention `rho(s) = s` near zero, so an unweighted 1 px residual costs 1.

use serde::{Deserialize, Serialize};

/// Residual magnitude at which a loss is considered saturated. Used for
/// terms that cannot be evaluated (a point behind a camera).
pub const SATURATION_RESIDUAL: f64 = 1e4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RobustLoss {
    Squared,
    /// Quadratic up to `delta`, linear beyond.
    Huber {
        delta: f64,
    },
}

impl RobustLoss {
    pub fn huber(delta: f64) -> Self {
        assert!(delta > 0.0, "Huber scale must be positive");
        RobustLoss::Huber { delta }
    }

    /// `rho(s)` for a squared norm `s`.
    pub fn rho(&self, s: f64) -> f64 {
        match *self {
            RobustLoss::Squared => s,
            RobustLoss::Huber { delta } => {
                if s <= delta * delta {
                    s
                } else {
                    2.0 * delta * s.sqrt() - delta * delta
                }
            }
        }
    }

    /// `d rho / d s`.
    pub fn weight(&self, s: f64) -> f64 {
        match *self {
            RobustLoss::Squared => 1.0,
            RobustLoss::Huber { delta } => {
                if s <= delta * delta {
                    1.0
                } else {
                    delta / s.sqrt()
                }
            }
        }
    }

    pub fn saturation(&self) -> f64 {
        self.rho(SATURATION_RESIDUAL * SATURATION_RESIDUAL)
    }

    /// The same loss with its scale multiplied by `k`; used when residuals are
    /// rescaled before the loss is applied.
    pub fn rescaled(&self, k: f64) -> Self {
        match *self {
            RobustLoss::Squared => RobustLoss::Squared,
            RobustLoss::Huber { delta } => RobustLoss::Huber { delta: delta * k },
        }
    }
}
