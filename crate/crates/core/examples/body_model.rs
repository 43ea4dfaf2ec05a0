//! Forward kinematics of the bundled humanoid and its body25 keypoints.

use mocap_fuse::body_model::{synthetic_humanoid, BodyModelSpec, PoseParams, ShapeParams};
use nalgebra::Vector3;

fn main() -> anyhow::Result<()> {
    let spec = synthetic_humanoid();
    println!("{} joints, {} keypoints, pose dim {}", spec.joint_count(), spec.keypoint_count(), spec.pose_dim());

    let mut beta = ShapeParams::zeros();
    beta.0[0] = 1.5;
    let mut theta = PoseParams::zeros(spec.joint_count());
    theta.root_translation = Vector3::new(0.0, 0.0, 0.05);
    theta.joint_rotations[spec.joint("left_shoulder")?] = Vector3::new(0.0, 0.0, 1.2);
    theta.joint_rotations[spec.joint("right_knee")?] = Vector3::new(0.8, 0.0, 0.0);

    let posed = spec.forward_kinematics(&beta, &theta)?;
    for name in ["pelvis", "head", "left_wrist", "right_ankle"] {
        let j = spec.joint(name)?;
        println!("{name:>12}: {:.3?}", posed.global_positions[j]);
    }
    let kp = spec.keypoints(&beta, &theta)?;
    println!("LWrist keypoint {:.3?}", kp[spec.keypoint("LWrist").expect("body25 name")]);

    let path = std::env::temp_dir().join("mocap_fuse_body_model.json");
    spec.save(&path)?;
    let back = BodyModelSpec::load(&path)?;
    println!("saved and reloaded {}: equal = {}", path.display(), back == spec);
    Ok(())
}
