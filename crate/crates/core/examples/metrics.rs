//! Score a perturbed pose sequence against ground truth.

use mocap_fuse::body_model::synthetic_humanoid;
use mocap_fuse::metrics::{evaluate, MetricSubsets};
use mocap_fuse::rig_sim::generate_motion;
use nalgebra::Vector3;

fn main() -> anyhow::Result<()> {
    let spec = synthetic_humanoid();
    let (poses, beta) = generate_motion(3, 5.0, 30.0, &spec);
    let subsets = MetricSubsets::from_model(&spec);

    let same = evaluate(&spec, (&beta, &poses), (&beta, &poses), 30.0, &subsets)?;
    println!("prediction = ground truth\n{same}");

    let mut shifted = poses.clone();
    for p in &mut shifted {
        p.root_translation += Vector3::new(0.02, 0.0, 0.0);
        p.joint_rotations[spec.joint("left_elbow")?] += Vector3::new(0.0, 0.1, 0.0);
    }
    let report = evaluate(&spec, (&beta, &shifted), (&beta, &poses), 30.0, &subsets)?;
    println!("2 cm root shift and a bent left elbow\n{report}");
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}
