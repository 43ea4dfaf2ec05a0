//! Multi-view triangulation of simulated body25 detections, then sequence refinement.

use mocap_fuse::body_model::synthetic_humanoid;
use mocap_fuse::pipeline::stages::triangulate_sequence;
use mocap_fuse::rig_sim::{simulate, RigConfig};
use mocap_fuse::triangulate::{RefineOptions, TriangulationOptions};

fn main() -> anyhow::Result<()> {
    let spec = synthetic_humanoid();
    let gt = simulate(&spec, &RigConfig::default())?;
    let out = triangulate_sequence(
        &gt.observations,
        &gt.cameras,
        &spec.keypoint_bones,
        &TriangulationOptions::default(),
        Some(&RefineOptions::default()),
    )?;

    let mut sq = [0.0; 2];
    let mut n = 0usize;
    for (f, pose) in gt.poses.iter().enumerate() {
        let truth = spec.keypoints(&gt.beta, pose)?;
        for (k, t) in truth.iter().enumerate() {
            if out.raw.valid[f][k] && out.refined.valid[f][k] {
                sq[0] += (out.raw.positions[f][k] - t).norm_squared();
                sq[1] += (out.refined.positions[f][k] - t).norm_squared();
                n += 1;
            }
        }
    }
    println!(
        "raw RMS {:.2} mm, refined RMS {:.2} mm over {n} keypoints",
        (sq[0] / n as f64).sqrt() * 1e3,
        (sq[1] / n as f64).sqrt() * 1e3
    );
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    println!(
        "mean bone-length std: raw {:.2} mm, refined {:.2} mm ({} refinement steps)",
        mean(out.raw.bone_length_std()) * 1e3,
        mean(out.refined.bone_length_std()) * 1e3,
        out.refine_history.len()
    );
    Ok(())
}
