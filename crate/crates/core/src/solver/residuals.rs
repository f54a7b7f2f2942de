//! Residual families and their Jacobians.
//!
//! Residuals are grouped by structure block: group `b` holds the reprojections
//! of point `b`, the prior residual of point `b`, and the anchors of latent
//! `b - lag`, where `lag` is the predictor offset. Every residual in a group
//! touches at most one point, at most one latent and at most one camera, so
//! groups can be linearized independently.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x6};
use serde::{Deserialize, Serialize};

use super::{ConsistencyPredictor, ProblemState, SolverConfig};
use crate::association::{min_candidate_residual, Assignment, ObservationTable};
use crate::dynamics::{accel_jacobian, accel_unchecked, QuadParams};
use crate::loss::RobustLoss;
use crate::priors::{PriorKind, PriorTargets};
use crate::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    Reprojection,
    Consistency,
    PositionTarget,
    AnchorPhi,
    AnchorTheta,
    AnchorThrust,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamBlock {
    Camera(usize),
    Point(usize),
    Latent(usize),
}

impl ParamBlock {
    pub fn dim(&self) -> usize {
        match self {
            ParamBlock::Camera(_) => 6,
            _ => 3,
        }
    }
}

/// One residual with its Jacobians. Its cost is `multiplier * loss(|r|^2)`.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub family: Family,
    pub residual: DVector<f64>,
    pub jacobians: Vec<(ParamBlock, DMatrix<f64>)>,
    pub multiplier: f64,
    pub loss: RobustLoss,
}

impl ResidualBlock {
    pub fn cost(&self) -> f64 {
        self.multiplier * self.loss.rho(self.residual.norm_squared())
    }
}

/// Objective split by family. Prior terms are unweighted by `lambda`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub data: f64,
    pub consistency: f64,
    pub anchors: [f64; 3],
    pub total: f64,
}

impl EnergyBreakdown {
    fn finish(mut self, lambda: f64, w: [f64; 3]) -> Self {
        let prior = self.consistency + w[0] * self.anchors[0] + w[1] * self.anchors[1] + w[2] * self.anchors[2];
        self.total = self.data + if lambda == 0.0 { 0.0 } else { lambda * prior };
        self
    }
}

/// Constant part `c_t` and acceleration coefficient `k` of the predictor
/// `x̂_t = c_t + k a(γ_{t - lag})`, built from the previous trajectory.
#[derive(Clone, Debug)]
struct Predictor {
    lag: usize,
    offsets: Vec<Option<Vec3>>,
    coefficient: f64,
}

impl Predictor {
    fn new(kind: ConsistencyPredictor, prev: &[Vec3], dt: f64) -> Self {
        let n = prev.len();
        match kind {
            ConsistencyPredictor::Centered => Predictor {
                lag: 1,
                offsets: (0..n).map(|t| (t >= 1 && t + 1 < n).then(|| (prev[t - 1] + prev[t + 1]) * 0.5)).collect(),
                coefficient: -0.5 * dt * dt,
            },
            ConsistencyPredictor::Backward => Predictor {
                lag: 2,
                offsets: (0..n).map(|t| (t >= 2).then(|| prev[t - 1] * 2.0 - prev[t - 2])).collect(),
                coefficient: dt * dt,
            },
        }
    }
}

/// Residual evaluator for one outer iteration: targets and candidate choices
/// are frozen at construction.
#[derive(Clone, Debug)]
pub struct Evaluator<'a> {
    obs: &'a ObservationTable,
    targets: Option<&'a PriorTargets>,
    cfg: &'a SolverConfig,
    quad: QuadParams,
    scale: f64,
    lambda: f64,
    weights: [f64; 3],
    predictor: Option<Predictor>,
    assignment: Assignment,
}

/// Default conversion from meters, radians and newtons to pixel-equivalent
/// prior residuals: the mean focal length divided by `sqrt(M)`, so that one
/// prior residual weighs like a single view rather than like all `M` views.
pub fn default_prior_scale(state: &ProblemState) -> f64 {
    let n = state.cameras.len().max(1) as f64;
    let f = state.cameras.iter().map(|c| 0.5 * (c.intrinsics.fx + c.intrinsics.fy)).sum::<f64>() / n;
    f / n.sqrt()
}

impl<'a> Evaluator<'a> {
    pub fn new(
        state: &ProblemState,
        obs: &'a ObservationTable,
        targets: Option<&'a PriorTargets>,
        quad: &QuadParams,
        cfg: &'a SolverConfig,
    ) -> Self {
        let quad = QuadParams { dt: state.trajectory.dt, ..*quad };
        let active = targets.is_some() && cfg.lambda > 0.0 && cfg.prior != PriorKind::None;
        let targets = if active { targets } else { None };
        let weights = match cfg.prior {
            PriorKind::Dynamics { lambda1, lambda2, lambda3, .. } => [lambda1, lambda2, lambda3],
            _ => [0.0; 3],
        };
        let predictor = match (targets, cfg.prior.is_dynamics()) {
            (Some(t), true) => Some(Predictor::new(cfg.predictor, &t.previous, quad.dt)),
            _ => None,
        };
        let mut ev = Evaluator {
            obs,
            targets,
            cfg,
            quad,
            scale: cfg.prior_scale.unwrap_or_else(|| default_prior_scale(state)),
            lambda: if active { cfg.lambda } else { 0.0 },
            weights,
            predictor,
            assignment: Assignment::empty(0, 0),
        };
        ev.assignment = ev.select_candidates(state);
        ev
    }

    pub fn assignment(&self) -> &Assignment {
        &self.assignment
    }

    pub fn has_latents(&self) -> bool {
        self.predictor.is_some()
    }

    /// Offset between a point and the latent it is paired with.
    pub fn lag(&self) -> usize {
        self.predictor.as_ref().map_or(0, |p| p.lag)
    }

    pub fn n_groups(&self) -> usize {
        self.obs.n_frames() + self.lag()
    }

    pub fn camera_is_free(&self, j: usize) -> bool {
        self.cfg.optimize_cameras && j != 0
    }

    /// Nearest candidate per camera and frame at `state`.
    pub fn select_candidates(&self, state: &ProblemState) -> Assignment {
        let n = self.obs.n_frames();
        let m = self.obs.n_cameras();
        let loss = &self.cfg.losses.reprojection;
        let rows = self.cfg.execution.map(n, |t| {
            let x = state.trajectory.positions[t];
            (0..m).map(|j| min_candidate_residual(&state.cameras[j], &x, self.obs.candidates(t, j), loss).1).collect::<Vec<_>>()
        });
        let mut a = Assignment::empty(n, m);
        for (t, row) in rows.into_iter().enumerate() {
            a.set_frame(t, row);
        }
        a
    }

    /// Objective at `state`, with the data term minimized over candidates.
    pub fn energy(&self, state: &ProblemState) -> EnergyBreakdown {
        let parts = self.cfg.execution.map(self.n_groups(), |b| self.group_energy(state, b));
        let mut e = EnergyBreakdown::default();
        for p in parts {
            e.data += p.data;
            e.consistency += p.consistency;
            for i in 0..3 {
                e.anchors[i] += p.anchors[i];
            }
        }
        e.finish(self.lambda, self.weights)
    }

    fn group_energy(&self, state: &ProblemState, b: usize) -> EnergyBreakdown {
        let mut e = EnergyBreakdown::default();
        if b < self.obs.n_frames() {
            let x = state.trajectory.positions[b];
            for (j, cam) in state.cameras.iter().enumerate() {
                e.data += min_candidate_residual(cam, &x, self.obs.candidates(b, j), &self.cfg.losses.reprojection).0;
            }
        }
        for r in self.prior_blocks(state, b) {
            let v = r.loss.rho(r.residual.norm_squared());
            match r.family {
                Family::Consistency | Family::PositionTarget => e.consistency += v,
                Family::AnchorPhi => e.anchors[0] += v,
                Family::AnchorTheta => e.anchors[1] += v,
                Family::AnchorThrust => e.anchors[2] += v,
                Family::Reprojection => unreachable!(),
            }
        }
        e
    }

    /// All residual blocks of group `b` under the frozen candidate choice.
    pub fn group_blocks(&self, state: &ProblemState, b: usize) -> Vec<ResidualBlock> {
        let mut out = self.reprojection_blocks(state, b);
        out.extend(self.prior_blocks(state, b));
        out
    }

    /// Every residual block, in group order.
    pub fn residual_blocks(&self, state: &ProblemState) -> Vec<ResidualBlock> {
        (0..self.n_groups()).flat_map(|b| self.group_blocks(state, b)).collect()
    }

    fn reprojection_blocks(&self, state: &ProblemState, t: usize) -> Vec<ResidualBlock> {
        if t >= self.obs.n_frames() {
            return Vec::new();
        }
        let x = state.trajectory.positions[t];
        let mut out = Vec::new();
        for (j, cam) in state.cameras.iter().enumerate() {
            let Some(k) = self.assignment.get(t, j) else { continue };
            let Ok(pj) = cam.project_with_jacobian(&x) else { continue };
            let r = pj.pixel - self.obs.candidates(t, j)[k];
            let rot = cam.rotation_matrix();
            let mut jacobians = vec![(ParamBlock::Point(t), to_dmatrix(&(pj.d_pixel_d_cam * rot)))];
            if self.camera_is_free(j) {
                let mut d = Matrix3x6::zeros();
                d.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-(rot * x).cross_matrix()));
                d.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
                jacobians.push((ParamBlock::Camera(j), to_dmatrix(&(pj.d_pixel_d_cam * d))));
            }
            out.push(ResidualBlock {
                family: Family::Reprojection,
                residual: DVector::from_column_slice(r.as_slice()),
                jacobians,
                multiplier: 1.0,
                loss: self.cfg.losses.reprojection,
            });
        }
        out
    }

    /// Prior residuals of group `b`. Costs are reported without `lambda`; the
    /// multiplier carries it.
    fn prior_blocks(&self, state: &ProblemState, b: usize) -> Vec<ResidualBlock> {
        let Some(targets) = self.targets else { return Vec::new() };
        let n = self.obs.n_frames();
        let f = self.scale;
        let mut out = Vec::new();
        match &self.predictor {
            None => {
                if let (true, Some(xh)) = (b < n, targets.positions.as_ref()) {
                    out.push(ResidualBlock {
                        family: Family::PositionTarget,
                        residual: dvec3((state.trajectory.positions[b] - xh[b]) * f),
                        jacobians: vec![(ParamBlock::Point(b), DMatrix::identity(3, 3) * f)],
                        multiplier: self.lambda,
                        loss: RobustLoss::Squared,
                    });
                }
            }
            Some(pred) => {
                if let Some(Some(c)) = pred.offsets.get(b) {
                    let tau = b - pred.lag;
                    let l = state.latent.get(tau);
                    let a = accel_unchecked(&l, &self.quad);
                    let r = (state.trajectory.positions[b] - c - a * pred.coefficient) * f;
                    out.push(ResidualBlock {
                        family: Family::Consistency,
                        residual: dvec3(r),
                        jacobians: vec![
                            (ParamBlock::Point(b), DMatrix::identity(3, 3) * f),
                            (ParamBlock::Latent(tau), to_dmatrix(&(accel_jacobian(&l, &self.quad) * (-pred.coefficient * f)))),
                        ],
                        multiplier: self.lambda,
                        loss: RobustLoss::Squared,
                    });
                }
                if b >= pred.lag && b - pred.lag < n {
                    let tau = b - pred.lag;
                    let hat = targets.latent.as_ref().expect("flight-model targets carry latents").get(tau);
                    let l = state.latent.get(tau);
                    let losses = &self.cfg.losses;
                    let anchors = [
                        (Family::AnchorPhi, l.phi - hat.phi, 0, self.weights[0], losses.angle),
                        (Family::AnchorTheta, l.theta - hat.theta, 1, self.weights[1], losses.angle),
                        (Family::AnchorThrust, l.u - hat.u, 2, self.weights[2], losses.thrust),
                    ];
                    for (family, d, i, w, loss) in anchors {
                        let mut jac = DMatrix::zeros(1, 3);
                        jac[(0, i)] = f;
                        out.push(ResidualBlock {
                            family,
                            residual: DVector::from_element(1, d * f),
                            jacobians: vec![(ParamBlock::Latent(tau), jac)],
                            multiplier: self.lambda * w,
                            loss: loss.rescaled(f),
                        });
                    }
                }
            }
        }
        out
    }
}

fn dvec3(v: Vec3) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

fn to_dmatrix<R: nalgebra::Dim, C: nalgebra::Dim, S: nalgebra::RawStorage<f64, R, C>>(m: &nalgebra::Matrix<f64, R, C, S>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}
