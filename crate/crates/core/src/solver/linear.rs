//! Damped normal equations with the structure blocks (point plus paired
//! latent) eliminated onto the camera system.

use nalgebra::{DMatrix, DVector, SMatrix, SVector};

use super::residuals::{Evaluator, ParamBlock};
use super::{LmConfig, ProblemState, SolverError};
use crate::Vec3;

type Matrix6 = SMatrix<f64, 6, 6>;
type Matrix6x3 = SMatrix<f64, 6, 3>;
type Vector6 = SVector<f64, 6>;
/// Inverse of a damped structure block, its Schur contributions and its
/// right-hand-side contributions.
type Eliminated = (Matrix6, Vec<(usize, usize, Matrix6)>, Vec<(usize, Vector6)>);

/// Gauss-Newton system of one structure block. Slot 0 is the point, slot 1
/// the latent; absent slots are inactive.
#[derive(Clone, Debug)]
struct BlockSystem {
    h: Matrix6,
    g: Vector6,
    active: [bool; 2],
    /// Camera-point coupling `J_c^T J_x` per camera.
    coupling: Vec<(usize, Matrix6x3)>,
    camera_terms: Vec<(usize, Matrix6, Vector6)>,
}

/// Linearization of the frozen problem at one state. `g = J^T W r`.
#[derive(Clone, Debug)]
pub struct NormalEquations {
    blocks: Vec<BlockSystem>,
    cam_h: Vec<Matrix6>,
    cam_g: Vec<Vector6>,
    lag: usize,
    n_frames: usize,
    free_cameras: Vec<usize>,
}

/// Parameter update. Camera entries are `(omega, dt)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub cameras: Vec<(usize, Vector6)>,
    pub points: Vec<Vec3>,
    pub latents: Vec<Vec3>,
}

impl Step {
    pub fn norm(&self) -> f64 {
        let c: f64 = self.cameras.iter().map(|(_, d)| d.norm_squared()).sum();
        let p: f64 = self.points.iter().map(|d| d.norm_squared()).sum();
        let l: f64 = self.latents.iter().map(|d| d.norm_squared()).sum();
        (c + p + l).sqrt()
    }

    pub fn apply(&self, state: &ProblemState) -> ProblemState {
        let mut out = state.clone();
        for (j, d) in &self.cameras {
            out.cameras[*j] = state.cameras[*j].retract(&d.fixed_rows::<3>(0).into_owned(), &d.fixed_rows::<3>(3).into_owned());
        }
        for (x, d) in out.trajectory.positions.iter_mut().zip(&self.points) {
            *x += d;
        }
        for (t, d) in self.latents.iter().enumerate() {
            out.latent.phi[t] += d.x;
            out.latent.theta[t] += d.y;
            out.latent.u[t] += d.z;
        }
        out
    }
}

impl NormalEquations {
    pub fn build(ev: &Evaluator<'_>, state: &ProblemState, exec: crate::Execution) -> Self {
        let n_frames = state.trajectory.len();
        let lag = ev.lag();
        let has_latents = ev.has_latents();
        let free_cameras: Vec<usize> = (0..state.cameras.len()).filter(|&j| ev.camera_is_free(j)).collect();
        let mut cam_index = vec![usize::MAX; state.cameras.len()];
        for (i, &j) in free_cameras.iter().enumerate() {
            cam_index[j] = i;
        }
        let slot = |p: ParamBlock| -> Option<usize> {
            match p {
                ParamBlock::Point(_) => Some(0),
                ParamBlock::Latent(_) => Some(3),
                ParamBlock::Camera(_) => None,
            }
        };
        let blocks = exec.map(ev.n_groups(), |b| {
            let mut sys = BlockSystem {
                h: Matrix6::zeros(),
                g: Vector6::zeros(),
                active: [b < n_frames, has_latents && b >= lag && b - lag < n_frames],
                coupling: Vec::new(),
                camera_terms: Vec::new(),
            };
            for r in ev.group_blocks(state, b) {
                let s = r.multiplier * r.loss.weight(r.residual.norm_squared());
                if s == 0.0 {
                    continue;
                }
                let mut cam: Option<(usize, DMatrix<f64>)> = None;
                let mut structure: Vec<(usize, &DMatrix<f64>)> = Vec::new();
                for (p, j) in &r.jacobians {
                    match (p, slot(*p)) {
                        (ParamBlock::Camera(c), _) => cam = Some((cam_index[*c], j.clone())),
                        (_, Some(o)) => structure.push((o, j)),
                        _ => unreachable!(),
                    }
                }
                for &(oa, ja) in &structure {
                    let jtr = ja.transpose() * &r.residual * s;
                    for i in 0..3 {
                        sys.g[oa + i] += jtr[i];
                    }
                    for &(ob, jb) in &structure {
                        let jtj = ja.transpose() * jb * s;
                        for i in 0..3 {
                            for k in 0..3 {
                                sys.h[(oa + i, ob + k)] += jtj[(i, k)];
                            }
                        }
                    }
                }
                if let Some((c, jc)) = cam {
                    let hcc = jc.transpose() * &jc * s;
                    let gc = jc.transpose() * &r.residual * s;
                    sys.camera_terms.push((c, Matrix6::from_fn(|i, k| hcc[(i, k)]), Vector6::from_fn(|i, _| gc[i])));
                    let (_, jx) = structure.iter().find(|(o, _)| *o == 0).expect("reprojection touches a point");
                    let w = jc.transpose() * *jx * s;
                    sys.coupling.push((c, Matrix6x3::from_fn(|i, k| w[(i, k)])));
                }
            }
            sys
        });
        let mut cam_h = vec![Matrix6::zeros(); free_cameras.len()];
        let mut cam_g = vec![Vector6::zeros(); free_cameras.len()];
        for sys in &blocks {
            for (c, h, g) in &sys.camera_terms {
                cam_h[*c] += h;
                cam_g[*c] += g;
            }
        }
        Self { blocks, cam_h, cam_g, lag, n_frames, free_cameras }
    }

    /// Gradient norm `|J^T W r|`.
    pub fn gradient_norm(&self) -> f64 {
        let s: f64 = self.blocks.iter().map(|b| b.g.norm_squared()).sum::<f64>() + self.cam_g.iter().map(|g| g.norm_squared()).sum::<f64>();
        s.sqrt()
    }

    /// Solves `(H + mu D) delta = -g` with `D` the clamped diagonal of `H`.
    pub fn solve(&self, damping: f64, lm: &LmConfig, exec: crate::Execution) -> Result<Step, SolverError> {
        let damp = |d: f64| d + damping * d.clamp(lm.min_diagonal, lm.max_diagonal);
        let m = self.free_cameras.len();

        let eliminated = exec.map(self.blocks.len(), |b| -> Result<Eliminated, SolverError> {
            let sys = &self.blocks[b];
            let mut h = sys.h;
            for (s, &on) in sys.active.iter().enumerate() {
                for i in 3 * s..3 * s + 3 {
                    if on {
                        h[(i, i)] = damp(h[(i, i)]);
                    } else {
                        h.row_mut(i).fill(0.0);
                        h.column_mut(i).fill(0.0);
                        h[(i, i)] = 1.0;
                    }
                }
            }
            let hinv = h.cholesky().ok_or(SolverError::LinearSolveFailure)?.inverse();
            let hinv_g = hinv * sys.g;
            let mut schur = Vec::new();
            let mut rhs = Vec::new();
            for (c, w) in &sys.coupling {
                let e = w * hinv.fixed_view::<3, 3>(0, 0);
                rhs.push((*c, w * hinv_g.fixed_rows::<3>(0)));
                for (d, v) in &sys.coupling {
                    schur.push((*c, *d, e * v.transpose()));
                }
            }
            Ok((hinv, schur, rhs))
        });
        let eliminated = eliminated.into_iter().collect::<Result<Vec<_>, _>>()?;

        let mut dc = DVector::zeros(6 * m);
        if m > 0 {
            let mut s = DMatrix::zeros(6 * m, 6 * m);
            let mut rhs = DVector::zeros(6 * m);
            for c in 0..m {
                let mut h = self.cam_h[c];
                for i in 0..6 {
                    h[(i, i)] = damp(h[(i, i)]);
                }
                s.view_mut((6 * c, 6 * c), (6, 6)).copy_from(&h);
                rhs.rows_mut(6 * c, 6).copy_from(&(-self.cam_g[c]));
            }
            for (_, schur, r) in &eliminated {
                for (c, d, e) in schur {
                    let mut v = s.view_mut((6 * c, 6 * d), (6, 6));
                    v -= e;
                }
                for (c, v) in r {
                    let mut out = rhs.rows_mut(6 * c, 6);
                    out += v;
                }
            }
            dc = s.cholesky().ok_or(SolverError::LinearSolveFailure)?.solve(&rhs);
        }

        let dstruct = exec.map(self.blocks.len(), |b| {
            let sys = &self.blocks[b];
            let mut rhs = -sys.g;
            for (c, w) in &sys.coupling {
                let bc = w.transpose() * dc.fixed_rows::<6>(6 * c);
                let mut top = rhs.fixed_rows_mut::<3>(0);
                top -= bc;
            }
            eliminated[b].0 * rhs
        });

        let mut points = vec![Vec3::zeros(); self.n_frames];
        let mut latents = if self.blocks.iter().any(|b| b.active[1]) { vec![Vec3::zeros(); self.n_frames] } else { Vec::new() };
        for (b, d) in dstruct.iter().enumerate() {
            let sys = &self.blocks[b];
            if sys.active[0] {
                points[b] = d.fixed_rows::<3>(0).into_owned();
            }
            if sys.active[1] {
                latents[b - self.lag] = d.fixed_rows::<3>(3).into_owned();
            }
        }
        let cameras = self.free_cameras.iter().enumerate().map(|(i, &j)| (j, dc.fixed_rows::<6>(6 * i).into_owned())).collect();
        let step = Step { cameras, points, latents };
        if !step.norm().is_finite() {
            return Err(SolverError::LinearSolveFailure);
        }
        Ok(step)
    }
}
