use nalgebra::{Matrix2, Matrix2x3, Matrix3, Rotation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use super::SceneError;
use crate::{Vec2, Vec3};

/// Undistortion stops once the radius update falls below this.
const UNDISTORT_TOL: f64 = 1e-10;
const UNDISTORT_MAX_ITERS: usize = 10;

/// Pinhole intrinsics with two-coefficient radial distortion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k1: f64,
    pub k2: f64,
    pub width: f64,
    pub height: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: f64, height: f64) -> Result<Self, SceneError> {
        Self { fx, fy, cx, cy, k1: 0.0, k2: 0.0, width, height }.validated()
    }

    pub fn with_distortion(mut self, k1: f64, k2: f64) -> Self {
        self.k1 = k1;
        self.k2 = k2;
        self
    }

    pub fn validated(self) -> Result<Self, SceneError> {
        let finite = [self.fx, self.fy, self.cx, self.cy, self.k1, self.k2, self.width, self.height].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 || self.width <= 0.0 || self.height <= 0.0 {
            return Err(SceneError::InvalidCamera(format!("invalid intrinsics {self:?}")));
        }
        Ok(self)
    }

    pub fn contains(&self, p: &Vec2) -> bool {
        p.x >= 0.0 && p.x <= self.width && p.y >= 0.0 && p.y <= self.height
    }

    pub fn diagonal(&self) -> f64 {
        self.width.hypot(self.height)
    }

    /// Applies radial distortion to normalized image coordinates.
    pub fn distort(&self, n: &Vec2) -> Vec2 {
        let r2 = n.norm_squared();
        n * (1.0 + self.k1 * r2 + self.k2 * r2 * r2)
    }

    /// Inverts [`Intrinsics::distort`] by Newton iteration on the radius.
    pub fn undistort(&self, nd: &Vec2) -> Vec2 {
        let rd = nd.norm();
        if rd == 0.0 || (self.k1 == 0.0 && self.k2 == 0.0) {
            return *nd;
        }
        let mut r = rd;
        for _ in 0..UNDISTORT_MAX_ITERS {
            let r2 = r * r;
            let f = r * (1.0 + self.k1 * r2 + self.k2 * r2 * r2) - rd;
            let df = 1.0 + 3.0 * self.k1 * r2 + 5.0 * self.k2 * r2 * r2;
            let step = f / df;
            r -= step;
            if step.abs() < UNDISTORT_TOL * rd.max(1.0) {
                break;
            }
        }
        nd * (r / rd)
    }

    pub fn pixel_to_normalized(&self, p: &Vec2) -> Vec2 {
        let nd = Vec2::new((p.x - self.cx) / self.fx, (p.y - self.cy) / self.fy);
        self.undistort(&nd)
    }

    pub fn normalized_to_pixel(&self, n: &Vec2) -> Vec2 {
        let d = self.distort(n);
        Vec2::new(self.fx * d.x + self.cx, self.fy * d.y + self.cy)
    }

    /// Derivative of the pixel position w.r.t. the normalized coordinates.
    fn normalized_jacobian(&self, n: &Vec2) -> Matrix2<f64> {
        let r2 = n.norm_squared();
        let d = 1.0 + self.k1 * r2 + self.k2 * r2 * r2;
        let dd = 2.0 * (self.k1 + 2.0 * self.k2 * r2);
        let j = Matrix2::new(d + n.x * dd * n.x, n.x * dd * n.y, n.y * dd * n.x, d + n.y * dd * n.y);
        Matrix2::from_diagonal(&Vec2::new(self.fx, self.fy)) * j
    }
}

/// A fixed camera: intrinsics plus the world-to-camera rigid transform
/// `p_cam = R * p_world + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub id: u32,
    pub intrinsics: Intrinsics,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vec3,
}

/// Projection together with its derivative w.r.t. the camera-frame point.
#[derive(Clone, Copy, Debug)]
pub struct ProjectionJacobian {
    pub pixel: Vec2,
    pub point_cam: Vec3,
    pub d_pixel_d_cam: Matrix2x3<f64>,
}

impl Camera {
    pub fn new(id: u32, intrinsics: Intrinsics, rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self { id, intrinsics, rotation, translation }
    }

    /// Builds a camera from a rotation matrix, checking orthonormality.
    pub fn from_matrix(id: u32, intrinsics: Intrinsics, r: Matrix3<f64>, translation: Vec3) -> Result<Self, SceneError> {
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        if ortho > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(SceneError::InvalidCamera(format!("camera {id}: rotation is not orthonormal with determinant +1")));
        }
        let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
        Ok(Self::new(id, intrinsics, rotation, translation))
    }

    /// Camera looking from `center` at `target` with world +z as up.
    pub fn look_at(id: u32, intrinsics: Intrinsics, center: Vec3, target: Vec3) -> Result<Self, SceneError> {
        let forward = (target - center)
            .try_normalize(1e-12)
            .ok_or_else(|| SceneError::InvalidCamera(format!("camera {id}: center equals target")))?;
        let right = forward
            .cross(&Vec3::z())
            .try_normalize(1e-9)
            .ok_or_else(|| SceneError::InvalidCamera(format!("camera {id}: looking straight up or down")))?;
        let down = forward.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Self::from_matrix(id, intrinsics, r, -r * center)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Optical center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.inverse() * self.translation)
    }

    pub fn to_camera(&self, x: &Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }

    pub fn project(&self, x: &Vec3) -> Result<Vec2, SceneError> {
        let pc = self.to_camera(x);
        if pc.z <= 0.0 || !pc.z.is_finite() {
            return Err(SceneError::NonPositiveDepth { depth: pc.z });
        }
        Ok(self.intrinsics.normalized_to_pixel(&Vec2::new(pc.x / pc.z, pc.y / pc.z)))
    }

    pub fn project_with_jacobian(&self, x: &Vec3) -> Result<ProjectionJacobian, SceneError> {
        let pc = self.to_camera(x);
        if pc.z <= 0.0 || !pc.z.is_finite() {
            return Err(SceneError::NonPositiveDepth { depth: pc.z });
        }
        let iz = 1.0 / pc.z;
        let n = Vec2::new(pc.x / pc.z, pc.y / pc.z);
        let dn = Matrix2x3::new(iz, 0.0, -pc.x * iz * iz, 0.0, iz, -pc.y * iz * iz);
        Ok(ProjectionJacobian {
            pixel: self.intrinsics.normalized_to_pixel(&n),
            point_cam: pc,
            d_pixel_d_cam: self.intrinsics.normalized_jacobian(&n) * dn,
        })
    }

    /// Unit world-frame direction of the ray through pixel `p`.
    pub fn ray_direction(&self, p: &Vec2) -> Vec3 {
        let n = self.intrinsics.pixel_to_normalized(p);
        (self.rotation.inverse() * Vec3::new(n.x, n.y, 1.0)).normalize()
    }

    /// Applies a local pose update: rotation `exp(omega) * R`, translation `t + dt`.
    pub fn retract(&self, omega: &Vec3, dt: &Vec3) -> Camera {
        let mut out = self.clone();
        out.rotation = UnitQuaternion::from_scaled_axis(*omega) * self.rotation;
        out.translation = self.translation + dt;
        out
    }
}
