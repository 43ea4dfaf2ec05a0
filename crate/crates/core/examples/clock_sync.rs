//! Recover the clock offset between a headset IMU and its optically tracked rigid body.

use mocap_fuse::body_model::synthetic_humanoid;
use mocap_fuse::pipeline::stages::{sync_headset, SyncStageOptions};
use mocap_fuse::rig_sim::{simulate, RigConfig};

fn main() -> anyhow::Result<()> {
    let spec = synthetic_humanoid();
    let opts = SyncStageOptions::default();
    for offset in [-0.5, 0.033, 0.25] {
        let gt = simulate(&spec, &RigConfig { imu_clock_offset_s: offset, ..RigConfig::default() })?;
        let report = sync_headset(&gt.imu["headset"], &gt.rigidbody, &opts)?;
        println!(
            "true {offset:+.3} s  estimated {:+.4} s  error {:5.1} ms  peak r {:.3}",
            report.offset_s,
            (report.offset_s - offset).abs() * 1e3,
            report.peak_correlation
        );
    }
    Ok(())
}
