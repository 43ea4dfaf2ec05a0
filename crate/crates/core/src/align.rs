//! Spatial alignment: transform chains between the optical world frame, the
//! headset, its egocentric cameras and the external cameras, plus the constant
//! IMU-to-joint rotation offsets.
//!
//! Notation: `T_a^b` maps coordinates in frame `a` to frame `b`; the world
//! frame is the optical tracker's frame `o`.

use std::collections::BTreeMap;

use nalgebra::{Matrix4, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::geometry::{RigidTransform, Rotation3};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AlignError {
    #[error("no rotation pairs to average")]
    EmptyInput,
}

/// Rig calibration constants.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MountCalibration {
    /// `T_h^rb`: headset IMU frame to its tracked rigid body.
    pub headset_in_rigidbody: RigidTransform,
    /// `T_c^h` per egocentric camera.
    pub egocam_in_headset: BTreeMap<String, RigidTransform>,
    /// Constant `R_sensor^joint` per body joint name, so that
    /// `R_joint = offset * R_sensor`.
    pub imu_joint_offsets: BTreeMap<String, Rotation3>,
}

impl MountCalibration {
    /// `T_h^c` for the named egocentric camera.
    pub fn headset_to_egocam(&self, camera: &str) -> Option<RigidTransform> {
        self.egocam_in_headset.get(camera).map(RigidTransform::inverse)
    }
}

/// `T_h^o = T_rb^o * T_h^rb`.
pub fn chain_headset_in_world(
    rigidbody_in_world: &RigidTransform,
    headset_in_rigidbody: &RigidTransform,
) -> RigidTransform {
    rigidbody_in_world * headset_in_rigidbody
}

/// `T_k^c = T_h^c * (T_h^o)^-1 * T_k^o`.
pub fn chain_kinect_to_egocam(
    headset_in_world: &RigidTransform,
    kinect_in_world: &RigidTransform,
    headset_to_egocam: &RigidTransform,
) -> RigidTransform {
    let kinect_in_headset = headset_in_world.inverse() * *kinect_in_world;
    headset_to_egocam * &kinect_in_headset
}

/// `R_joint = offset * R_sensor`.
pub fn transfer_imu_to_joint(sensor: &Rotation3, offset: &Rotation3) -> Rotation3 {
    *offset * *sensor
}

/// Chordal mean of unit quaternions: the dominant eigenvector of `sum q q^T`
/// after aligning every quaternion's sign with the first.
pub fn average_rotations(rotations: &[Rotation3]) -> Result<Rotation3, AlignError> {
    let first = rotations.first().ok_or(AlignError::EmptyInput)?;
    if rotations.len() == 1 {
        return Ok(*first);
    }
    let reference = first.unit_quaternion().coords;
    let mut m = Matrix4::<f64>::zeros();
    for r in rotations {
        let mut q = r.unit_quaternion().coords;
        if q.dot(&reference) < 0.0 {
            q = -q;
        }
        m += q * q.transpose();
    }
    let eig = SymmetricEigen::new(m);
    let (best, _) = eig.eigenvalues.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("4 eigenvalues");
    let v = eig.eigenvectors.column(best);
    // nalgebra stores quaternion coords as (x, y, z, w)
    Ok(Rotation3::from_quaternion(v[3], v[0], v[1], v[2]))
}

/// Estimates the constant offset `R` with `R_joint ~= R * R_sensor` from
/// time-synchronized `(R_sensor, R_joint)` pairs.
pub fn estimate_constant_offset(pairs: &[(Rotation3, Rotation3)]) -> Result<Rotation3, AlignError> {
    let relative: Vec<Rotation3> = pairs.iter().map(|(s, j)| *j * s.inverse()).collect();
    average_rotations(&relative)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::geodesic_angle;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    fn t(axis: [f64; 3], angle: f64, tr: [f64; 3]) -> RigidTransform {
        RigidTransform::new(Rotation3::about_axis(&Vector3::from(axis), angle), Vector3::from(tr))
    }

    #[test]
    fn identity_mount_gives_rigidbody_pose() {
        let rb = t([0.2, 1.0, -0.3], 0.8, [1.0, 2.0, 0.5]);
        assert_eq!(chain_headset_in_world(&rb, &RigidTransform::identity()), rb);
    }

    #[test]
    fn chain_invert_chain_round_trip() {
        let rb = t([0.2, 1.0, -0.3], 0.8, [1.0, 2.0, 0.5]);
        let mount = t([1.0, 0.0, 0.1], -0.4, [0.05, 0.0, -0.02]);
        let h = chain_headset_in_world(&rb, &mount);
        let back = chain_headset_in_world(&h, &mount.inverse());
        assert!(geodesic_angle(&back.rotation, &rb.rotation) < 1e-9);
        assert_relative_eq!(back.translation, rb.translation, epsilon = 1e-9);
    }

    #[test]
    fn kinect_at_headset_maps_to_identity() {
        let h = t([0.3, 0.1, 1.0], 1.1, [0.3, -0.2, 1.6]);
        let k = chain_kinect_to_egocam(&h, &h, &RigidTransform::identity());
        assert!(k.rotation.angle() < 1e-9);
        assert!(k.translation.norm() < 1e-9);
    }

    #[test]
    fn imu_transfer_cases() {
        let s = Rotation3::about_axis(&Vector3::new(1.0, 2.0, 0.5), 0.9);
        let o = Rotation3::about_axis(&Vector3::new(-0.3, 0.2, 1.0), 2.1);
        assert_eq!(transfer_imu_to_joint(&s, &Rotation3::identity()), s);
        assert_eq!(transfer_imu_to_joint(&Rotation3::identity(), &o), o);
        assert_relative_eq!(transfer_imu_to_joint(&s, &o).matrix(), o.matrix() * s.matrix(), epsilon = 1e-12);
    }

    #[test]
    fn single_pair_offset_is_exact() {
        let s = Rotation3::about_axis(&Vector3::new(1.0, 2.0, 0.5), 0.9);
        let j = Rotation3::about_axis(&Vector3::new(-0.3, 0.2, 1.0), 2.1);
        let est = estimate_constant_offset(&[(s, j)]).unwrap();
        assert!(geodesic_angle(&est, &(j * s.inverse())) < 1e-12);
    }

    #[test]
    fn identical_pairs_give_common_offset() {
        let s = Rotation3::about_axis(&Vector3::new(0.0, 1.0, 0.0), 3.0);
        let j = Rotation3::about_axis(&Vector3::new(1.0, 0.0, 1.0), -2.5);
        let est = estimate_constant_offset(&vec![(s, j); 7]).unwrap();
        assert!(geodesic_angle(&est, &(j * s.inverse())) < 1e-9);
    }

    #[test]
    fn empty_pairs_rejected() {
        assert_eq!(estimate_constant_offset(&[]).unwrap_err(), AlignError::EmptyInput);
    }

    #[test]
    fn egocam_inverse_lookup() {
        let mut m = MountCalibration::default();
        let c = t([0.0, 0.0, 1.0], 0.3, [0.0, 0.05, 0.02]);
        m.egocam_in_headset.insert("left".into(), c);
        let hc = m.headset_to_egocam("left").unwrap();
        let id = hc * c;
        assert!(id.rotation.angle() < 1e-12 && id.translation.norm() < 1e-12);
        assert!(m.headset_to_egocam("right").is_none());
    }
}
