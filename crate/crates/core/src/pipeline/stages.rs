//! In-memory stage functions. The file-based runner in the parent module only
//! adds loading, saving and bookkeeping around these.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{
    average_rotations, chain_headset_in_world, chain_kinect_to_egocam, estimate_constant_offset, transfer_imu_to_joint,
    AlignError, MountCalibration,
};
use crate::body_model::BodyModelSpec;
use crate::fitting::{fit_sequence, FitError, FitOptions, FitResult, FitWeights, KeypointFrame, RotationTargets};
use crate::geometry::{CameraView, RigidTransform, Rotation3};
use crate::sync::{angular_speed, synchronize, SlidingWindow, SyncError, SyncOptions, SyncReport, TimedSeries};
use crate::triangulate::{
    refine_sequence_with_log, triangulate_frame, FrameObservations, RefineError, RefineOptions, SkeletonSequence3D,
    TriangulationOptions,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyncStageOptions {
    pub search_window_s: f64,
    pub sliding: Option<SlidingWindow>,
    /// Centered moving-average window applied to both orientation streams before
    /// differentiation; 0 disables it.
    pub smoothing_s: f64,
}

impl Default for SyncStageOptions {
    fn default() -> Self {
        let e = SyncOptions::default();
        Self { search_window_s: e.search_window_s, sliding: e.sliding, smoothing_s: 0.8 }
    }
}

impl SyncStageOptions {
    pub fn estimator(&self) -> SyncOptions {
        SyncOptions { search_window_s: self.search_window_s, sliding: self.sliding }
    }
}

/// Centered moving chordal mean over `window_s`. Samples whose window would run past
/// either end are dropped, so every output sample has the same symmetric support.
pub fn smooth_orientations(series: &TimedSeries<Rotation3>, window_s: f64) -> TimedSeries<Rotation3> {
    let half = (0.5 * window_s * series.nominal_rate()).round() as usize;
    let s = series.samples();
    if half == 0 || s.len() < 2 * half + 2 {
        return series.clone();
    }
    let out = (half..s.len() - half)
        .into_par_iter()
        .map(|i| average_rotations(&s[i - half..=i + half]).expect("non-empty window"))
        .collect();
    let stamps = series.timestamps()[half..s.len() - half].to_vec();
    TimedSeries::new(stamps, out, series.nominal_rate()).expect("subset of increasing timestamps")
}

/// Offset of the headset clock relative to the reference clock, from the angular speed
/// of the headset IMU (`a`) against the optically tracked rigid body (`b`).
pub fn sync_headset(
    imu_headset: &TimedSeries<Rotation3>,
    rigidbody: &TimedSeries<RigidTransform>,
    opts: &SyncStageOptions,
) -> Result<SyncReport, SyncError> {
    let a = angular_speed(&smooth_orientations(imu_headset, opts.smoothing_s))?;
    let b = angular_speed(&smooth_orientations(&rigidbody.map(|t| t.rotation), opts.smoothing_s))?;
    synchronize(&a, &b, &opts.estimator())
}

/// Calibration stage output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Estimated `R_sensor^joint` per joint name.
    pub imu_joint_offsets: BTreeMap<String, Rotation3>,
}

pub fn estimate_offsets(pairs: &BTreeMap<String, Vec<(Rotation3, Rotation3)>>) -> Result<Calibration, AlignError> {
    let imu_joint_offsets =
        pairs.iter().map(|(j, p)| estimate_constant_offset(p).map(|r| (j.clone(), r))).collect::<Result<_, _>>()?;
    Ok(Calibration { imu_joint_offsets })
}

/// `T_k^c` for every frame, Kinect and egocentric camera: `result[frame][(kinect, egocam)]`.
pub fn kinect_to_egocam_series(
    rigidbody: &TimedSeries<RigidTransform>,
    mount: &MountCalibration,
    cameras: &[CameraView],
) -> Vec<BTreeMap<(String, String), RigidTransform>> {
    rigidbody
        .samples()
        .iter()
        .map(|rb| {
            let h = chain_headset_in_world(rb, &mount.headset_in_rigidbody);
            let mut out = BTreeMap::new();
            for cam in cameras {
                let k_in_world = cam.world_to_camera.inverse();
                for ego in mount.egocam_in_headset.keys() {
                    let h_to_c = mount.headset_to_egocam(ego).expect("key exists");
                    out.insert((cam.id.clone(), ego.clone()), chain_kinect_to_egocam(&h, &k_in_world, &h_to_c));
                }
            }
            out
        })
        .collect()
}

/// Joint rotation targets at each frame time: every IMU stream is moved onto the
/// reference clock, slerp-resampled and transferred through its joint offset.
/// Frames outside a stream's span get no target from it.
pub fn rotation_targets(
    imu: &BTreeMap<String, TimedSeries<Rotation3>>,
    sensor_joints: &BTreeMap<String, String>,
    offsets: &BTreeMap<String, Rotation3>,
    clock_offset_s: f64,
    frame_times: &[f64],
) -> Result<Vec<RotationTargets>, String> {
    let mut targets = vec![RotationTargets::new(); frame_times.len()];
    for (sensor, series) in imu {
        let joint = sensor_joints.get(sensor).ok_or_else(|| format!("IMU stream {sensor:?} has no joint mapping"))?;
        let offset = offsets.get(joint).ok_or_else(|| format!("no calibrated offset for joint {joint:?}"))?;
        let shifted = series.shifted(clock_offset_s);
        for (t, target) in frame_times.iter().zip(targets.iter_mut()) {
            if let Some(r) = shifted.sample_at(*t) {
                target.insert(joint.clone(), transfer_imu_to_joint(&r, offset));
            }
        }
    }
    Ok(targets)
}

#[derive(Clone, Debug)]
pub struct TriangulationOutput {
    pub raw: SkeletonSequence3D,
    pub refined: SkeletonSequence3D,
    pub refine_history: Vec<f64>,
    pub refine_converged: bool,
}

pub fn triangulate_sequence(
    observations: &[FrameObservations],
    cameras: &[CameraView],
    bones: &[(usize, usize)],
    opts: &TriangulationOptions,
    refine: Option<&RefineOptions>,
) -> Result<TriangulationOutput, RefineError> {
    let frames: Vec<_> = observations.par_iter().map(|o| triangulate_frame(o, cameras, opts)).collect();
    let raw =
        SkeletonSequence3D::from_frames(observations.iter().map(|o| o.timestamp).collect(), frames, bones.to_vec());
    let Some(ropts) = refine else {
        return Ok(TriangulationOutput {
            refined: raw.clone(),
            raw,
            refine_history: Vec::new(),
            refine_converged: true,
        });
    };
    match refine_sequence_with_log(&raw, ropts) {
        Ok(out) => Ok(TriangulationOutput {
            raw,
            refined: out.sequence,
            refine_history: out.objective_history,
            refine_converged: true,
        }),
        Err(RefineError::NotConverged { last, .. }) => {
            log::warn!("trajectory refinement hit its iteration cap; using the last iterate");
            Ok(TriangulationOutput { raw, refined: *last, refine_history: Vec::new(), refine_converged: false })
        }
        Err(e) => Err(e),
    }
}

pub fn fit(
    spec: &BodyModelSpec,
    keypoints: &SkeletonSequence3D,
    targets: &[RotationTargets],
    weights: &FitWeights,
    opts: &FitOptions,
) -> Result<FitResult, FitError> {
    fit_sequence(spec, &KeypointFrame::from_sequence(keypoints), targets, weights, opts)
}
