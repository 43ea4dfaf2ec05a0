use nalgebra::{Matrix3x4, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::transform::RigidTransform;
use super::GeometryError;

/// Points closer to the image plane than this are treated as behind the camera.
pub const MIN_DEPTH: f64 = 1e-6;

/// Zero-skew, distortion-free pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidCamera(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        let inside = self.cx >= 0.0 && self.cy >= 0.0 && self.cx <= self.width as f64 && self.cy <= self.height as f64;
        if !inside {
            return Err(GeometryError::InvalidCamera(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Maps a point in camera coordinates to pixels.
    pub fn project_camera(&self, p: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
        if p.z <= MIN_DEPTH {
            return Err(GeometryError::NonPositiveDepth { depth: p.z });
        }
        Ok(Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x <= self.width as f64 && px.y <= self.height as f64
    }
}

/// A calibrated camera: intrinsics plus the world-to-camera transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    pub id: String,
    pub intrinsics: Intrinsics,
    pub world_to_camera: RigidTransform,
}

impl CameraView {
    pub fn new(
        id: impl Into<String>,
        intrinsics: Intrinsics,
        world_to_camera: RigidTransform,
    ) -> Result<Self, GeometryError> {
        intrinsics.validate()?;
        Ok(Self { id: id.into(), intrinsics, world_to_camera })
    }

    /// A camera at `eye` looking at `target` with image "down" roughly along `-up`.
    pub fn look_at(
        id: impl Into<String>,
        intrinsics: Intrinsics,
        eye: &Vector3<f64>,
        target: &Vector3<f64>,
        up: &Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let z = (target - eye).normalize();
        let x = z.cross(up).normalize();
        let y = z.cross(&x);
        // rows of the world->camera rotation are the camera axes in world coordinates
        let r = nalgebra::Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let rot = super::Rotation3::from_matrix(&r);
        let t = -rot.rotate(eye);
        Self::new(id, intrinsics, RigidTransform::new(rot, t))
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        self.world_to_camera.inverse().translation
    }

    /// Pixel coordinates and depth of a world point.
    pub fn project(&self, point_world: &Vector3<f64>) -> Result<(Vector2<f64>, f64), GeometryError> {
        let pc = self.world_to_camera.transform_point(point_world);
        let px = self.intrinsics.project_camera(&pc)?;
        Ok((px, pc.z))
    }

    /// World point at `depth` along the ray through `pixel`.
    pub fn unproject(&self, pixel: &Vector2<f64>, depth: f64) -> Vector3<f64> {
        let k = &self.intrinsics;
        let pc = Vector3::new((pixel.x - k.cx) / k.fx * depth, (pixel.y - k.cy) / k.fy * depth, depth);
        self.world_to_camera.inverse().transform_point(&pc)
    }

    /// `K [R | t]`.
    pub fn projection_matrix(&self) -> Matrix3x4<f64> {
        let k = &self.intrinsics;
        let kmat = nalgebra::Matrix3::new(k.fx, 0.0, k.cx, 0.0, k.fy, k.cy, 0.0, 0.0, 1.0);
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.world_to_camera.rotation.matrix());
        rt.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.world_to_camera.translation);
        kmat * rt
    }
}
