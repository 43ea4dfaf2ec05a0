//! IMU-to-joint offset calibration and the Kinect-to-egocentric-camera chain.

use mocap_fuse::align::transfer_imu_to_joint;
use mocap_fuse::body_model::synthetic_humanoid;
use mocap_fuse::geometry::geodesic_angle;
use mocap_fuse::pipeline::stages::{estimate_offsets, kinect_to_egocam_series};
use mocap_fuse::rig_sim::{simulate, RigConfig};

fn main() -> anyhow::Result<()> {
    let spec = synthetic_humanoid();
    let gt = simulate(&spec, &RigConfig::default())?;

    let cal = estimate_offsets(&gt.calib_pairs)?;
    for (joint, est) in &cal.imu_joint_offsets {
        let truth = gt.mount.imu_joint_offsets[joint];
        println!("{joint:>12}: offset error {:.3} deg", geodesic_angle(est, &truth).to_degrees());
    }
    let (sensor, joint) = gt.calib_pairs["head"][0];
    let moved = transfer_imu_to_joint(&sensor, &cal.imu_joint_offsets["head"]);
    println!("head pair 0 transferred: {:.3} deg from the joint", geodesic_angle(&moved, &joint).to_degrees());

    // map a point seen by kinect_0 into the left egocentric camera at frame 100
    let chains = kinect_to_egocam_series(&gt.rigidbody, &gt.mount, &gt.cameras);
    let k = 100;
    let t_kc = chains[k][&("kinect_0".to_string(), "egocam_left".to_string())];
    let head = gt.observations.len().min(k);
    let world = spec.keypoints(&gt.beta, &gt.poses[head])?[spec.keypoint("RWrist").expect("body25")];
    let in_kinect = gt.cameras[0].world_to_camera.transform_point(&world);
    let ego = gt.egocam_view(&spec, k, "egocam_left").expect("egocam exists");
    let via_chain = t_kc.transform_point(&in_kinect);
    let direct = ego.world_to_camera.transform_point(&world);
    println!("right wrist in egocam_left: chain {:.4?} direct {:.4?}", via_chain, direct);
    Ok(())
}
