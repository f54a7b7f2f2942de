use nalgebra::{Matrix3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use super::SceneError;
use crate::Vec3;

/// `p -> scale * R * p + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vec3,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self { scale: 1.0, rotation: UnitQuaternion::identity(), translation: Vec3::zeros() }
    }

    pub fn new(scale: f64, rotation: UnitQuaternion<f64>, translation: Vec3) -> Result<Self, SceneError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(SceneError::DegenerateConfiguration("similarity scale must be positive"));
        }
        Ok(Self { scale, rotation, translation })
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p * self.scale + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rinv = self.rotation.inverse();
        Self { scale: 1.0 / self.scale, rotation: rinv, translation: -(rinv * self.translation) / self.scale }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self { scale: self.scale * other.scale, rotation: self.rotation * other.rotation, translation: self.apply(&other.translation) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    /// Fraction of the largest residuals excluded from each refit.
    pub trim_fraction: f64,
    pub max_iterations: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self { trim_fraction: 0.1, max_iterations: 50 }
    }
}

/// Relative threshold on the second singular value of the point scatter.
const COLLINEAR_TOL: f64 = 1e-10;

fn check_spread(points: &[Vec3]) -> Result<(), SceneError> {
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vec3>() / n;
    let scatter: Matrix3<f64> = points.iter().map(|p| (p - mean) * (p - mean).transpose()).sum();
    let mut sv = scatter.symmetric_eigenvalues().iter().map(|v| v.abs()).collect::<Vec<_>>();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv[0] == 0.0 || sv[1] <= COLLINEAR_TOL * sv[0] {
        return Err(SceneError::DegenerateConfiguration("points are collinear"));
    }
    Ok(())
}

/// Closed-form weighted similarity from `src` onto `dst` (Umeyama).
fn weighted_similarity(src: &[Vec3], dst: &[Vec3], keep: &[bool]) -> Option<SimilarityTransform> {
    let w: f64 = keep.iter().filter(|k| **k).count() as f64;
    let pick = |v: &[Vec3]| v.iter().zip(keep).filter(|(_, k)| **k).map(|(p, _)| *p).collect::<Vec<_>>();
    let (s, d) = (pick(src), pick(dst));
    let ms = s.iter().sum::<Vec3>() / w;
    let md = d.iter().sum::<Vec3>() / w;
    let var_s = s.iter().map(|p| (p - ms).norm_squared()).sum::<f64>() / w;
    if var_s <= 0.0 {
        return None;
    }
    let cov: Matrix3<f64> = s.iter().zip(&d).map(|(a, b)| (b - md) * (a - ms).transpose()).sum::<Matrix3<f64>>() / w;
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut signs = Vec3::new(1.0, 1.0, 1.0);
    if u.determinant() * vt.determinant() < 0.0 {
        signs[2] = -1.0;
    }
    let r = u * Matrix3::from_diagonal(&signs) * vt;
    let scale = svd.singular_values.component_mul(&signs).sum() / var_s;
    if !(scale > 0.0) {
        return None;
    }
    let rotation = UnitQuaternion::from_matrix(&r);
    Some(SimilarityTransform { scale, rotation, translation: md - rotation * ms * scale })
}

/// Robust similarity alignment of `estimate` onto `reference`.
///
/// Alternates a closed-form fit with trimming of the worst residuals until the
/// inlier set stops changing.
pub fn align_similarity_with(estimate: &[Vec3], reference: &[Vec3], cfg: &AlignConfig) -> Result<SimilarityTransform, SceneError> {
    if estimate.len() != reference.len() {
        return Err(SceneError::LengthMismatch { left: estimate.len(), right: reference.len() });
    }
    if estimate.len() < 3 {
        return Err(SceneError::DegenerateConfiguration("alignment needs at least 3 points"));
    }
    check_spread(reference)?;
    check_spread(estimate)?;
    let n = estimate.len();
    let n_keep = ((1.0 - cfg.trim_fraction.clamp(0.0, 0.9)) * n as f64).ceil().max(3.0) as usize;
    let mut keep = vec![true; n];
    let mut best =
        weighted_similarity(estimate, reference, &keep).ok_or(SceneError::DegenerateConfiguration("closed-form alignment failed"))?;
    for _ in 0..cfg.max_iterations {
        let mut order: Vec<(f64, usize)> =
            estimate.iter().zip(reference).enumerate().map(|(i, (e, r))| ((best.apply(e) - r).norm_squared(), i)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut next = vec![false; n];
        for &(_, i) in order.iter().take(n_keep) {
            next[i] = true;
        }
        if next == keep {
            break;
        }
        match weighted_similarity(estimate, reference, &next) {
            Some(t) => {
                best = t;
                keep = next;
            }
            None => break,
        }
    }
    Ok(best)
}

pub fn align_similarity(estimate: &[Vec3], reference: &[Vec3]) -> Result<SimilarityTransform, SceneError> {
    align_similarity_with(estimate, reference, &AlignConfig::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n).map(|_| Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(0.0..4.0))).collect()
    }

    fn random_similarity(rng: &mut ChaCha8Rng) -> SimilarityTransform {
        let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        SimilarityTransform::new(
            rng.random_range(0.3..3.0),
            UnitQuaternion::from_scaled_axis(axis * 2.0),
            Vec3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)),
        )
        .unwrap()
    }

    #[test]
    fn self_alignment_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = cloud(&mut rng, 40);
        let s = align_similarity(&pts, &pts).unwrap();
        assert_relative_eq!(s.scale, 1.0, epsilon = 1e-12);
        assert!(s.rotation.angle() < 1e-9);
        assert!(s.translation.norm() < 1e-9);
    }

    #[test]
    fn recovers_known_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let pts = cloud(&mut rng, 30);
            let truth = random_similarity(&mut rng);
            let reference: Vec<_> = pts.iter().map(|p| truth.apply(p)).collect();
            let got = align_similarity(&pts, &reference).unwrap();
            assert_relative_eq!(got.scale, truth.scale, epsilon = 1e-6);
            assert!(got.rotation.angle_to(&truth.rotation) < 1e-6);
            assert_relative_eq!(got.translation, truth.translation, epsilon = 1e-6);
        }
    }

    #[test]
    fn trimming_ignores_gross_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = cloud(&mut rng, 50);
        let truth = random_similarity(&mut rng);
        let mut reference: Vec<_> = pts.iter().map(|p| truth.apply(p)).collect();
        for r in reference.iter_mut().take(3) {
            *r += Vec3::new(40.0, -25.0, 30.0);
        }
        let got = align_similarity(&pts, &reference).unwrap();
        assert_relative_eq!(got.scale, truth.scale, epsilon = 1e-9);
        assert_relative_eq!(got.translation, truth.translation, epsilon = 1e-8);
    }

    #[test]
    fn collinear_points_are_rejected() {
        let pts = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 1.0), Vec3::new(2.0, 2.0, 2.0)];
        assert!(matches!(align_similarity(&pts, &pts), Err(SceneError::DegenerateConfiguration(_))));
    }

    #[test]
    fn inverse_and_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_similarity(&mut rng);
        let id = s.compose(&s.inverse());
        assert_relative_eq!(id.scale, 1.0, epsilon = 1e-9);
        assert!(id.rotation.angle() < 1e-9);
        assert!(id.translation.norm() < 1e-9);
        let p = Vec3::new(0.1, 2.0, -3.0);
        assert_relative_eq!(s.inverse().apply(&s.apply(&p)), p, epsilon = 1e-9);
    }

    #[test]
    fn length_mismatch() {
        let a = vec![Vec3::zeros(); 4];
        let b = vec![Vec3::zeros(); 5];
        assert!(matches!(align_similarity(&a, &b), Err(SceneError::LengthMismatch { .. })));
    }
}
