//! Ambiguous detections: every camera reports zero or more candidate pixels
//! per frame, at most one of which is the target.
//!
//! A point is scored against a camera by the best candidate under a robust
//! loss; [`ransac_triangulate`] searches two-view hypotheses for the point
//! with the lowest total score, and [`initialize_trajectory`] runs it on every
//! frame.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{DynamicsError, Trajectory};
use crate::exec::Execution;
use crate::loss::RobustLoss;
use crate::scene::{triangulate_two_view, Camera};
use crate::{Vec2, Vec3};

pub const DEFAULT_CANDIDATE_CAP: usize = 16;
pub const DEFAULT_RANSAC_ITERATIONS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssociationError {
    #[error("frame {frame}: fewer than two cameras have candidates")]
    InsufficientViews { frame: usize },
    #[error("no frame could be triangulated")]
    NoResolvableFrames,
    #[error("invalid observation table: {0}")]
    InvalidTable(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Candidates reported by one camera in one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    pub camera_id: u32,
    pub frame: usize,
    pub candidates: Vec<Vec2>,
}

/// All candidate sets, indexed by `[frame][camera]`. Frames are 0-based in
/// memory; files number them from 1.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationTable {
    n_cameras: usize,
    sets: Vec<Vec<Vec<Vec2>>>,
}

impl ObservationTable {
    pub fn new(n_frames: usize, n_cameras: usize) -> Self {
        Self { n_cameras, sets: vec![vec![Vec::new(); n_cameras]; n_frames] }
    }

    pub fn n_frames(&self) -> usize {
        self.sets.len()
    }

    pub fn n_cameras(&self) -> usize {
        self.n_cameras
    }

    pub fn candidates(&self, frame: usize, camera: usize) -> &[Vec2] {
        &self.sets[frame][camera]
    }

    pub fn candidates_mut(&mut self, frame: usize, camera: usize) -> &mut Vec<Vec2> {
        &mut self.sets[frame][camera]
    }

    pub fn frame(&self, frame: usize) -> &[Vec<Vec2>] {
        &self.sets[frame]
    }

    pub fn candidate_set(&self, frame: usize, camera: usize, camera_id: u32) -> CandidateSet {
        CandidateSet { camera_id, frame, candidates: self.sets[frame][camera].clone() }
    }

    /// Cameras with at least one candidate at `frame`.
    pub fn views(&self, frame: usize) -> Vec<usize> {
        (0..self.n_cameras).filter(|&j| !self.sets[frame][j].is_empty()).collect()
    }

    pub fn total_candidates(&self) -> usize {
        self.sets.iter().flatten().map(Vec::len).sum()
    }

    /// Checks pixel bounds, finiteness and the per-set cap.
    pub fn validate(&self, cameras: &[Camera], cap: usize) -> Result<(), AssociationError> {
        if cameras.len() != self.n_cameras {
            return Err(AssociationError::InvalidTable(format!("{} cameras in table, {} given", self.n_cameras, cameras.len())));
        }
        for (t, row) in self.sets.iter().enumerate() {
            for (j, set) in row.iter().enumerate() {
                if set.len() > cap {
                    return Err(AssociationError::InvalidTable(format!("frame {t} camera {j}: {} candidates exceed cap {cap}", set.len())));
                }
                if let Some(p) = set.iter().find(|p| !(p.x.is_finite() && p.y.is_finite() && cameras[j].intrinsics.contains(p))) {
                    return Err(AssociationError::InvalidTable(format!("frame {t} camera {j}: pixel {p:?} outside image")));
                }
            }
        }
        if !(0..self.n_frames()).any(|t| self.views(t).len() >= 2) {
            return Err(AssociationError::InvalidTable("no frame is seen by two cameras".into()));
        }
        Ok(())
    }

    /// Keeps at most the candidate picked by `assignment` in every set.
    pub fn restricted_to(&self, assignment: &Assignment) -> ObservationTable {
        let mut out = ObservationTable::new(self.n_frames(), self.n_cameras);
        for t in 0..self.n_frames() {
            for j in 0..self.n_cameras {
                if let Some(k) = assignment.get(t, j) {
                    if let Some(p) = self.sets[t][j].get(k) {
                        out.sets[t][j].push(*p);
                    }
                }
            }
        }
        out
    }
}

/// Chosen candidate per `[frame][camera]`, `None` when no candidate is used.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    choice: Vec<Vec<Option<usize>>>,
}

impl Assignment {
    pub fn empty(n_frames: usize, n_cameras: usize) -> Self {
        Self { choice: vec![vec![None; n_cameras]; n_frames] }
    }

    pub fn n_frames(&self) -> usize {
        self.choice.len()
    }

    pub fn n_cameras(&self) -> usize {
        self.choice.first().map_or(0, Vec::len)
    }

    pub fn get(&self, frame: usize, camera: usize) -> Option<usize> {
        self.choice[frame][camera]
    }

    pub fn set(&mut self, frame: usize, camera: usize, k: Option<usize>) {
        self.choice[frame][camera] = k;
    }

    pub fn frame(&self, frame: usize) -> &[Option<usize>] {
        &self.choice[frame]
    }

    pub fn set_frame(&mut self, frame: usize, row: Vec<Option<usize>>) {
        self.choice[frame] = row;
    }
}

/// Best candidate for a point in one camera: `(loss, index)`. An empty set
/// contributes nothing; a point behind the camera costs the saturated loss.
pub fn min_candidate_residual(camera: &Camera, x: &Vec3, candidates: &[Vec2], loss: &RobustLoss) -> (f64, Option<usize>) {
    if candidates.is_empty() {
        return (0.0, None);
    }
    let Ok(p) = camera.project(x) else {
        return (loss.saturation(), None);
    };
    candidates.iter().enumerate().map(|(k, c)| (loss.rho((p - c).norm_squared()), Some(k))).fold((f64::INFINITY, None), |best, cur| {
        if cur.0 < best.0 {
            cur
        } else {
            best
        }
    })
}

/// Sum over cameras of [`min_candidate_residual`], with the per-camera argmins.
pub fn score_point(cameras: &[Camera], sets: &[Vec<Vec2>], x: &Vec3, loss: &RobustLoss) -> (f64, Vec<Option<usize>>) {
    let mut total = 0.0;
    let picks = cameras
        .iter()
        .zip(sets)
        .map(|(c, s)| {
            let (v, k) = min_candidate_residual(c, x, s, loss);
            total += v;
            k
        })
        .collect();
    (total, picks)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub point: Vec3,
    pub score: f64,
    pub picks: Vec<Option<usize>>,
}

/// Two-view RANSAC over candidate pairs. Returns the lowest-score hypothesis,
/// or `None` when every sampled pair was degenerate.
pub fn ransac_triangulate(
    cameras: &[Camera],
    sets: &[Vec<Vec2>],
    iterations: usize,
    loss: &RobustLoss,
    seed: u64,
) -> Result<Option<Hypothesis>, AssociationError> {
    let views: Vec<usize> = (0..cameras.len()).filter(|&j| !sets[j].is_empty()).collect();
    if views.len() < 2 {
        return Err(AssociationError::InsufficientViews { frame: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec3)> = None;
    for _ in 0..iterations {
        let a = rng.random_range(0..views.len());
        let mut b = rng.random_range(0..views.len() - 1);
        if b >= a {
            b += 1;
        }
        let (m, n) = (views[a], views[b]);
        let pm = sets[m][rng.random_range(0..sets[m].len())];
        let pn = sets[n][rng.random_range(0..sets[n].len())];
        let Ok(x) = triangulate_two_view(&pm, &cameras[m], &pn, &cameras[n]) else {
            continue;
        };
        let (score, _) = score_point(cameras, sets, &x, loss);
        if best.is_none_or(|(s, _)| score < s) {
            best = Some((score, x));
        }
    }
    Ok(best.map(|(score, point)| {
        let (_, picks) = score_point(cameras, sets, &point, loss);
        Hypothesis { point, score, picks }
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    pub iterations: usize,
    pub loss: RobustLoss,
    pub seed: u64,
    #[serde(default)]
    pub execution: Execution,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self { iterations: DEFAULT_RANSAC_ITERATIONS, loss: RobustLoss::huber(2.0), seed: 0, execution: Execution::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Initialization {
    pub trajectory: Trajectory,
    pub assignment: Assignment,
    /// Frames triangulated directly (the rest are interpolated).
    pub resolved: Vec<bool>,
}

/// Per-frame RANSAC triangulation; frames without a hypothesis are filled by
/// linear interpolation between the nearest resolved frames, or by the
/// nearest resolved value at the ends. Frame `t` uses seed `seed + t`.
pub fn initialize_trajectory(
    obs: &ObservationTable,
    cameras: &[Camera],
    dt: f64,
    cfg: &InitConfig,
) -> Result<Initialization, AssociationError> {
    if cameras.len() != obs.n_cameras() {
        return Err(AssociationError::InvalidTable(format!("{} cameras in table, {} given", obs.n_cameras(), cameras.len())));
    }
    let n = obs.n_frames();
    let per_frame = cfg.execution.map(n, |t| {
        ransac_triangulate(cameras, obs.frame(t), cfg.iterations, &cfg.loss, cfg.seed.wrapping_add(t as u64)).unwrap_or_default()
    });
    let resolved: Vec<bool> = per_frame.iter().map(Option::is_some).collect();
    let known: Vec<usize> = (0..n).filter(|&t| resolved[t]).collect();
    if known.is_empty() {
        return Err(AssociationError::NoResolvableFrames);
    }
    let mut positions = vec![Vec3::zeros(); n];
    let mut assignment = Assignment::empty(n, obs.n_cameras());
    for (t, h) in per_frame.into_iter().enumerate() {
        if let Some(h) = h {
            positions[t] = h.point;
            assignment.set_frame(t, h.picks);
        }
    }
    fill_gaps(&mut positions, &resolved);
    Ok(Initialization { trajectory: Trajectory::new(dt, positions)?, assignment, resolved })
}

/// Linear interpolation across unresolved samples, constant extension at the ends.
pub fn fill_gaps(positions: &mut [Vec3], resolved: &[bool]) {
    let known: Vec<usize> = (0..positions.len()).filter(|&t| resolved[t]).collect();
    let Some((&first, &last)) = known.first().zip(known.last()) else {
        return;
    };
    for t in 0..first {
        positions[t] = positions[first];
    }
    for t in last + 1..positions.len() {
        positions[t] = positions[last];
    }
    for w in known.windows(2) {
        let (a, b) = (w[0], w[1]);
        for t in a + 1..b {
            let s = (t - a) as f64 / (b - a) as f64;
            positions[t] = positions[a] * (1.0 - s) + positions[b] * s;
        }
    }
}
