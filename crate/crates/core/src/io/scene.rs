use nalgebra::{Quaternion, UnitQuaternion};
use serde::{Deserialize, Serialize};

use super::IoError;
use crate::dynamics::QuadParams;
use crate::scene::{Camera, Intrinsics};
use crate::simulator::Volume;
use crate::Vec3;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraEntry {
    pub id: u32,
    /// World-to-camera rotation as `[w, x, y, z]`.
    pub rotation: [f64; 4],
    /// World-to-camera translation, meters.
    pub translation: [f64; 3],
    pub intrinsics: Intrinsics,
}

impl CameraEntry {
    pub fn from_camera(c: &Camera) -> Self {
        let q = c.rotation.quaternion();
        Self {
            id: c.id,
            rotation: [q.w, q.i, q.j, q.k],
            translation: [c.translation.x, c.translation.y, c.translation.z],
            intrinsics: c.intrinsics,
        }
    }

    pub fn to_camera(&self) -> Result<Camera, IoError> {
        let [w, x, y, z] = self.rotation;
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
            return Err(IoError::Format(format!("camera {}: rotation is not a unit quaternion (norm {n})", self.id)));
        }
        let rotation = if (n - 1.0).abs() < 1e-12 { UnitQuaternion::new_unchecked(q) } else { UnitQuaternion::new_normalize(q) };
        let intrinsics = self.intrinsics.validated().map_err(|e| IoError::Format(format!("camera {}: {e}", self.id)))?;
        Ok(Camera::new(self.id, intrinsics, rotation, Vec3::from(self.translation)))
    }
}

/// Scene description: frame rate, vehicle, flight volume and cameras.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub schema_version: u32,
    pub fps: f64,
    pub quad: QuadParams,
    pub volume: Volume,
    #[serde(rename = "camera")]
    pub cameras: Vec<CameraEntry>,
}

impl SceneFile {
    pub fn new(fps: f64, quad: QuadParams, volume: Volume, cameras: &[Camera]) -> Self {
        Self { schema_version: SCHEMA_VERSION, fps, quad, volume, cameras: cameras.iter().map(CameraEntry::from_camera).collect() }
    }

    pub fn cameras(&self) -> Result<Vec<Camera>, IoError> {
        self.cameras.iter().map(CameraEntry::to_camera).collect()
    }

    pub fn camera_ids(&self) -> Vec<u32> {
        self.cameras.iter().map(|c| c.id).collect()
    }

    pub fn with_cameras(&self, cameras: &[Camera]) -> Self {
        Self { cameras: cameras.iter().map(CameraEntry::from_camera).collect(), ..self.clone() }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene files always serialize")
    }

    pub fn from_toml(text: &str) -> Result<Self, IoError> {
        let s: SceneFile = toml::from_str(text).map_err(|e| IoError::Format(format!("scene: {}", e.message())))?;
        if s.schema_version != SCHEMA_VERSION {
            return Err(IoError::Schema { found: s.schema_version, expected: SCHEMA_VERSION });
        }
        if !(s.fps > 0.0) {
            return Err(IoError::Format(format!("scene: fps must be positive, got {}", s.fps)));
        }
        let mut ids = s.camera_ids();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(IoError::Format("scene: duplicate camera id".into()));
        }
        Ok(s)
    }
}
