//! Rotations, rigid transforms and pinhole cameras.

mod camera;
mod procrustes;
mod rotation;
mod transform;

pub use camera::{CameraView, Intrinsics, MIN_DEPTH};
pub use procrustes::{umeyama, Similarity};
pub use rotation::{geodesic_angle, nearest_axis_angle, right_jacobian, skew, ReprKind, Rotation3, RotationRepr};
pub use transform::RigidTransform;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("point has non-positive depth {depth} in the camera frame")]
    NonPositiveDepth { depth: f64 },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
}
