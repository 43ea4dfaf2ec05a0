//! Fit the body model to triangulated keypoints and IMU rotation targets.

use std::collections::BTreeMap;

use mocap_fuse::body_model::synthetic_humanoid;
use mocap_fuse::fitting::{FitError, FitOptions, FitWeights};
use mocap_fuse::pipeline::stages::{
    estimate_offsets, fit, rotation_targets, sync_headset, triangulate_sequence, SyncStageOptions,
};
use mocap_fuse::rig_sim::{simulate, RigConfig, IMU_SENSORS};
use mocap_fuse::triangulate::{RefineOptions, TriangulationOptions};

fn main() -> anyhow::Result<()> {
    let spec = synthetic_humanoid();
    let gt = simulate(&spec, &RigConfig { duration_s: 8.0, ..RigConfig::default() })?;

    let sync = sync_headset(&gt.imu["headset"], &gt.rigidbody, &SyncStageOptions::default())?;
    let cal = estimate_offsets(&gt.calib_pairs)?;
    let joints: BTreeMap<String, String> = IMU_SENSORS.iter().map(|(s, j)| (s.to_string(), j.to_string())).collect();
    let targets = rotation_targets(&gt.imu, &joints, &cal.imu_joint_offsets, sync.offset_s, &gt.timestamps)
        .map_err(anyhow::Error::msg)?;
    let tri = triangulate_sequence(
        &gt.observations,
        &gt.cameras,
        &spec.keypoint_bones,
        &TriangulationOptions::default(),
        Some(&RefineOptions::default()),
    )?;

    let result = match fit(&spec, &tri.refined, &targets, &FitWeights::default(), &FitOptions::default()) {
        Ok(r) => r,
        Err(FitError::NotConverged(r)) => {
            println!("warning: not converged, showing the last iterate");
            *r
        }
        Err(e) => return Err(e.into()),
    };
    println!("{} iterations, converged {}", result.iterations, result.converged);
    for (i, e) in result.energy_log.iter().enumerate().filter(|(i, _)| i % 25 == 0) {
        println!(
            "iter {i:>4}: total {:>12.5}  rot {:.4}  joint {:.5}  smooth {:.4}",
            e.total, e.rot, e.joint, e.smooth
        );
    }
    println!("beta error {:.3}", (result.beta.0 - gt.beta.0).norm());
    Ok(())
}
