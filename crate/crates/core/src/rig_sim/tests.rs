use super::*;
use crate::align::{chain_headset_in_world, chain_kinect_to_egocam, transfer_imu_to_joint};
use crate::body_model::synthetic_humanoid;
use crate::geometry::geodesic_angle;
use crate::triangulate::{triangulate_frame, TriangulationOptions};

fn short(seed: u64) -> RigConfig {
    RigConfig { duration_s: 2.0, seed, ..RigConfig::default() }
}

#[test]
fn motion_is_deterministic_and_sized() {
    let spec = synthetic_humanoid();
    let (a, ba) = generate_motion(3, 10.0, 30.0, &spec);
    let (b, bb) = generate_motion(3, 10.0, 30.0, &spec);
    assert_eq!(a.len(), 300);
    assert_eq!(a, b);
    assert_eq!(ba, bb);
    assert!(ba.0.iter().all(|v| (-2.0..=2.0).contains(v)));
    let (c, _) = generate_motion(4, 10.0, 30.0, &spec);
    assert_ne!(a, c);
}

#[test]
fn consecutive_joint_angle_change_is_bounded() {
    let spec = synthetic_humanoid();
    for seed in 0..20 {
        let (poses, _) = generate_motion(seed, 10.0, 30.0, &spec);
        for w in poses.windows(2) {
            for (a, b) in w[0].joint_rotations.iter().zip(&w[1].joint_rotations) {
                let d = geodesic_angle(&Rotation3::from_axis_angle(a), &Rotation3::from_axis_angle(b));
                assert!(d < 0.2, "seed {seed}: step {d}");
            }
        }
    }
}

#[test]
fn whole_bundle_is_bit_identical_for_a_seed() {
    let spec = synthetic_humanoid();
    let a = simulate(&spec, &short(5)).unwrap();
    let b = simulate(&spec, &short(5)).unwrap();
    assert_eq!(a.observations, b.observations);
    assert_eq!(a.imu, b.imu);
    assert_eq!(a.rigidbody, b.rigidbody);
    assert_eq!(a.calib_pairs, b.calib_pairs);
}

#[test]
fn config_validation() {
    assert!(RigConfig::default().validate().is_ok());
    assert!(RigConfig { dropout: 1.5, ..RigConfig::default() }.validate().is_err());
    assert!(RigConfig { frame_rate_hz: 0.0, ..RigConfig::default() }.validate().is_err());
    assert!(RigConfig { pixel_noise_px: -1.0, ..RigConfig::default() }.validate().is_err());
}

#[test]
fn noiseless_imu_transfers_to_exact_joint_rotation() {
    let spec = synthetic_humanoid();
    let gt = simulate(&spec, &short(1).noiseless()).unwrap();
    let rest = spec.rest_joints(&gt.beta);
    for (sensor, joint) in IMU_SENSORS {
        let series = &gt.imu[sensor];
        let j = spec.named_joints[joint];
        for (t, r) in series.iter().step_by(7) {
            let g = Rotation3::from_matrix(&spec.forward_matrices(&rest, &gt.motion.pose_at(t)).global[j]);
            let est = transfer_imu_to_joint(r, &gt.mount.imu_joint_offsets[joint]);
            assert!(geodesic_angle(&est, &g) < 1e-9);
        }
    }
}

#[test]
fn drift_accumulates_linearly() {
    let spec = synthetic_humanoid();
    let cfg = RigConfig { imu_drift_deg_per_s: 1.0, ..short(2).noiseless() };
    let gt = simulate(&spec, &RigConfig { duration_s: 10.0, ..cfg }).unwrap();
    let series = &gt.imu["headset"];
    let joint = "head";
    let j = spec.named_joints[joint];
    let rest = spec.rest_joints(&gt.beta);
    let k = series.timestamps().iter().position(|t| (t - 10.0).abs() < 1e-9).unwrap();
    let ideal = Rotation3::from_matrix(&spec.forward_matrices(&rest, &gt.motion.pose_at(10.0)).global[j]);
    let est = transfer_imu_to_joint(&series.samples()[k], &gt.mount.imu_joint_offsets[joint]);
    let err = geodesic_angle(&est, &ideal).to_degrees();
    assert!((err - 10.0).abs() < 1.0, "{err}");
}

#[test]
fn imu_stamps_carry_the_clock_offset() {
    let spec = synthetic_humanoid();
    let gt = simulate(&spec, &RigConfig { imu_clock_offset_s: 0.25, ..short(3) }).unwrap();
    let s = &gt.imu["left_tracker"];
    assert!((s.start() - (-IMU_MARGIN_S + 0.25)).abs() < 1e-12);
}

#[test]
fn full_dropout_invalidates_everything() {
    let spec = synthetic_humanoid();
    let gt = simulate(&spec, &RigConfig { dropout: 1.0, ..short(4) }).unwrap();
    assert!(gt.observations.iter().flat_map(|f| f.views.values().flatten()).all(|o| o.confidence == 0.0));
}

#[test]
fn pixel_noise_has_configured_spread() {
    let spec = synthetic_humanoid();
    let cfg = RigConfig { dropout: 0.0, ..short(6) };
    let noisy = simulate(&spec, &cfg).unwrap();
    let clean = simulate(&spec, &RigConfig { pixel_noise_px: 0.0, ..cfg }).unwrap();
    let mut residuals = Vec::new();
    for (a, b) in noisy.observations.iter().zip(&clean.observations) {
        for (id, obs) in &a.views {
            for (x, y) in obs.iter().zip(&b.views[id]) {
                if x.confidence > 0.0 && y.confidence > 0.0 {
                    residuals.push(x.pixel.x - y.pixel.x);
                    residuals.push(x.pixel.y - y.pixel.y);
                }
            }
        }
    }
    assert!(residuals.len() >= 10_000, "{}", residuals.len());
    let n = residuals.len() as f64;
    let mean = residuals.iter().sum::<f64>() / n;
    let std = (residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!((std - 1.0).abs() < 0.1, "{std}");
}

#[test]
fn noiseless_observations_triangulate_to_truth() {
    let spec = synthetic_humanoid();
    let gt = simulate(&spec, &short(8).noiseless()).unwrap();
    for (obs, pose) in gt.observations.iter().zip(&gt.poses).step_by(5) {
        let tri = triangulate_frame(obs, &gt.cameras, &TriangulationOptions::default());
        let kp = spec.keypoints(&gt.beta, pose).unwrap();
        for (k, p) in kp.iter().enumerate() {
            assert!(tri.valid[k]);
            assert!((tri.positions[k] - p).norm() < 1e-6);
        }
    }
}

#[test]
fn kinect_point_maps_onto_rendered_egocam_pixel() {
    let spec = synthetic_humanoid();
    let gt = simulate(&spec, &short(9).noiseless()).unwrap();
    let mut checked = 0;
    for k in (0..gt.poses.len()).step_by(6) {
        let rb = gt.rigidbody.samples()[k];
        let h_world = chain_headset_in_world(&rb, &gt.mount.headset_in_rigidbody);
        for name in EGOCAM_NAMES {
            let ego = gt.egocam_view(&spec, k, name).unwrap();
            let h_to_c = gt.mount.headset_to_egocam(name).unwrap();
            for cam in &gt.cameras {
                let kinect_in_world = cam.world_to_camera.inverse();
                let k_to_c = chain_kinect_to_egocam(&h_world, &kinect_in_world, &h_to_c);
                // a point 0.5 m in front of the egocam, expressed in the Kinect frame
                let world = ego.unproject(&Vector2::new(300.0, 200.0), 0.5);
                let in_kinect = cam.world_to_camera.transform_point(&world);
                let chained = ego.intrinsics.project_camera(&k_to_c.transform_point(&in_kinect)).unwrap();
                let (rendered, _) = ego.project(&world).unwrap();
                assert!((chained - rendered).norm() < 0.5);
                checked += 1;
            }
        }
    }
    assert!(checked > 0);
}

#[test]
fn calibration_pairs_share_the_true_offset() {
    let spec = synthetic_humanoid();
    let gt = simulate(&spec, &short(10).noiseless()).unwrap();
    for (joint, pairs) in &gt.calib_pairs {
        assert_eq!(pairs.len(), 100);
        for (s, j) in pairs.iter().take(5) {
            assert!(geodesic_angle(&(*j * s.inverse()), &gt.mount.imu_joint_offsets[joint]) < 1e-9);
        }
    }
}
