//! Synthetic capture rig: ground-truth motion plus every stream the pipeline
//! ingests (multi-view 2D keypoints, IMU orientations on a shifted clock, the
//! optically tracked headset, calibration pairs), all deterministic in the seed.

mod motion;

use std::collections::BTreeMap;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

pub use motion::{generate_motion, MotionModel, FREQ_BAND_HZ};

use crate::align::MountCalibration;
use crate::body_model::{BodyModelSpec, PoseParams, ShapeParams};
use crate::geometry::{CameraView, Intrinsics, RigidTransform, Rotation3};
use crate::sync::TimedSeries;
use crate::triangulate::{FrameObservations, KeypointObservation};

/// IMU-equipped devices and the body joint each one is strapped to.
pub const IMU_SENSORS: [(&str, &str); 5] = [
    ("headset", "head"),
    ("left_controller", "left_wrist"),
    ("right_controller", "right_wrist"),
    ("left_tracker", "left_knee"),
    ("right_tracker", "right_knee"),
];

pub const EGOCAM_NAMES: [&str; 2] = ["egocam_left", "egocam_right"];

/// Extra IMU coverage on each side of the capture, in seconds of true time.
pub const IMU_MARGIN_S: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RigError {
    #[error("invalid rig config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RigConfig {
    pub camera_count: usize,
    pub ring_radius_m: f64,
    pub camera_height_m: f64,
    pub frame_rate_hz: f64,
    pub imu_rate_hz: f64,
    pub duration_s: f64,
    pub pixel_noise_px: f64,
    pub dropout: f64,
    pub imu_noise_deg: f64,
    pub imu_drift_deg_per_s: f64,
    /// Headset clock minus reference clock. Every IMU device shares the headset clock.
    pub imu_clock_offset_s: f64,
    pub calib_pairs: usize,
    pub calib_noise_deg: f64,
    pub seed: u64,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            camera_count: 8,
            ring_radius_m: 2.0,
            camera_height_m: 1.5,
            frame_rate_hz: 30.0,
            imu_rate_hz: 60.0,
            duration_s: 10.0,
            pixel_noise_px: 1.0,
            dropout: 0.1,
            imu_noise_deg: 2.0,
            imu_drift_deg_per_s: 0.0,
            imu_clock_offset_s: 0.1,
            calib_pairs: 100,
            calib_noise_deg: 2.0,
            seed: 7,
        }
    }
}

impl RigConfig {
    /// Every noise source, dropout and clock offset set to zero.
    pub fn noiseless(self) -> Self {
        Self {
            pixel_noise_px: 0.0,
            dropout: 0.0,
            imu_noise_deg: 0.0,
            imu_drift_deg_per_s: 0.0,
            imu_clock_offset_s: 0.0,
            calib_noise_deg: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), RigError> {
        let bad = |m: &str| Err(RigError::InvalidConfig(m.to_string()));
        if self.camera_count < 2 {
            return bad("camera_count must be at least 2");
        }
        if !(self.frame_rate_hz > 0.0 && self.imu_rate_hz > 0.0 && self.duration_s > 0.0) {
            return bad("rates and duration must be positive");
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1]");
        }
        let sigmas = [self.pixel_noise_px, self.imu_noise_deg, self.calib_noise_deg, self.ring_radius_m];
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) || !self.imu_drift_deg_per_s.is_finite() {
            return bad("noise levels must be finite and non-negative");
        }
        if !self.imu_clock_offset_s.is_finite() || self.imu_clock_offset_s.abs() >= IMU_MARGIN_S {
            return bad("imu_clock_offset_s must be finite and below the 1 s IMU margin");
        }
        if self.calib_pairs == 0 {
            return bad("calib_pairs must be positive");
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        (self.duration_s * self.frame_rate_hz).round() as usize
    }

    pub fn frame_timestamps(&self) -> Vec<f64> {
        (0..self.frame_count()).map(|k| k as f64 / self.frame_rate_hz).collect()
    }
}

/// Everything the simulator produced, plus the truth needed to score it.
#[derive(Clone, Debug)]
pub struct GroundTruthBundle {
    pub config: RigConfig,
    pub motion: MotionModel,
    pub timestamps: Vec<f64>,
    pub poses: Vec<PoseParams>,
    pub beta: ShapeParams,
    pub cameras: Vec<CameraView>,
    pub mount: MountCalibration,
    /// Headset body frame relative to the head joint.
    pub headset_in_head: RigidTransform,
    pub egocam_intrinsics: BTreeMap<String, Intrinsics>,
    pub imu_clock_offset_s: f64,
    pub observations: Vec<FrameObservations>,
    /// Orientation streams keyed by device name, stamped on the headset clock.
    pub imu: BTreeMap<String, TimedSeries<Rotation3>>,
    /// Optically tracked headset rigid body `T_rb^o`, on the reference clock at frame rate.
    pub rigidbody: TimedSeries<RigidTransform>,
    /// `(R_sensor, R_joint)` pairs per joint name for offset calibration.
    pub calib_pairs: BTreeMap<String, Vec<(Rotation3, Rotation3)>>,
}

/// Eight (or `count`) cameras evenly spaced on a ring, all aimed at the capture center.
pub fn camera_ring(count: usize, radius: f64, height: f64) -> Vec<CameraView> {
    let intr = Intrinsics { fx: 600.0, fy: 600.0, cx: 960.0, cy: 540.0, width: 1920, height: 1080 };
    (0..count)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / count as f64;
            let eye = Vector3::new(radius * a.cos(), radius * a.sin(), height);
            CameraView::look_at(format!("kinect_{i}"), intr, &eye, &Vector3::new(0.0, 0.0, 1.0), &Vector3::z())
                .expect("ring cameras are valid")
        })
        .collect()
}

pub fn egocam_intrinsics() -> Intrinsics {
    Intrinsics { fx: 250.0, fy: 250.0, cx: 320.0, cy: 240.0, width: 640, height: 480 }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation3 {
    let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    Rotation3::from_quaternion(q[0], q[1], q[2], q[3])
}

/// Rotation about a uniformly random axis by an angle drawn from `N(0, sigma^2)`.
fn noise_rotation(rng: &mut ChaCha8Rng, sigma_rad: f64) -> Rotation3 {
    if sigma_rad == 0.0 {
        return Rotation3::identity();
    }
    let axis: Vector3<f64> = Vector3::from_fn(|_, _| rng.sample(StandardNormal));
    let angle = Normal::new(0.0, sigma_rad).expect("finite sigma").sample(rng);
    Rotation3::about_axis(&axis.normalize(), angle)
}

fn random_mount(seed: u64) -> (MountCalibration, RigidTransform) {
    let mut rng = rng_for(seed, 2);
    let small = |rng: &mut ChaCha8Rng, s: f64| Vector3::from_fn(|_, _| rng.random_range(-s..s));
    let headset_in_rigidbody =
        RigidTransform::new(Rotation3::from_axis_angle(&small(&mut rng, 0.2)), small(&mut rng, 0.05));
    let mut egocam_in_headset = BTreeMap::new();
    for (i, name) in EGOCAM_NAMES.iter().enumerate() {
        let side = if i == 0 { 0.04 } else { -0.04 };
        let eye = Vector3::new(side, 0.05, 0.0);
        // looking forward and down, image "up" towards headset +z
        let view = CameraView::look_at(*name, egocam_intrinsics(), &eye, &Vector3::new(side, 1.0, -0.6), &Vector3::z())
            .expect("valid egocam");
        egocam_in_headset.insert(name.to_string(), view.world_to_camera.inverse());
    }
    let imu_joint_offsets =
        IMU_SENSORS.iter().map(|(_, joint)| (joint.to_string(), random_rotation(&mut rng))).collect();
    let headset_in_head =
        RigidTransform::new(Rotation3::from_axis_angle(&small(&mut rng, 0.1)), Vector3::new(0.0, 0.1, 0.08));
    (MountCalibration { headset_in_rigidbody, egocam_in_headset, imu_joint_offsets }, headset_in_head)
}

/// Project regressed keypoints into every camera with i.i.d. pixel noise and dropout.
/// Points behind a camera or outside its image are dropped (confidence 0).
pub fn render_observations(
    spec: &BodyModelSpec,
    beta: &ShapeParams,
    poses: &[PoseParams],
    timestamps: &[f64],
    cameras: &[CameraView],
    noise_px: f64,
    dropout: f64,
    seed: u64,
) -> Vec<FrameObservations> {
    let mut rng = rng_for(seed, 3);
    let normal = Normal::new(0.0, noise_px.max(0.0)).expect("finite sigma");
    poses
        .iter()
        .zip(timestamps)
        .map(|(pose, &t)| {
            let kp = spec.keypoints(beta, pose).expect("pose matches the model");
            let views = cameras
                .iter()
                .map(|cam| {
                    let obs = kp
                        .iter()
                        .map(|p| {
                            let noise = Vector2::new(normal.sample(&mut rng), normal.sample(&mut rng));
                            let keep = rng.random::<f64>() >= dropout;
                            match cam.project(p) {
                                Ok((px, _)) if keep && cam.intrinsics.contains(&px) => {
                                    KeypointObservation { pixel: px + noise, confidence: 1.0 }
                                }
                                _ => KeypointObservation::missing(),
                            }
                        })
                        .collect();
                    (cam.id.clone(), obs)
                })
                .collect();
            FrameObservations { timestamp: t, views }
        })
        .collect()
}

/// Sensor orientation stream for one device: `offset^-1 * G_joint(t)`, perturbed by a
/// per-sample noise rotation and a bias about a fixed random axis growing at `drift`,
/// stamped at `t + clock_offset`.
pub fn simulate_imu(
    spec: &BodyModelSpec,
    motion: &MotionModel,
    joint: usize,
    offset: &Rotation3,
    noise_deg: f64,
    drift_deg_per_s: f64,
    clock_offset_s: f64,
    times: &[f64],
    rng: &mut ChaCha8Rng,
) -> TimedSeries<Rotation3> {
    let drift_axis: Vector3<f64> = Vector3::from_fn(|_, _| rng.sample(StandardNormal));
    let drift_axis = drift_axis.normalize();
    let inv = offset.inverse();
    let rest = spec.rest_joints(&motion.beta);
    let samples = times
        .iter()
        .map(|&t| {
            let g = Rotation3::from_matrix(&spec.forward_matrices(&rest, &motion.pose_at(t)).global[joint]);
            let bias = Rotation3::about_axis(&drift_axis, (drift_deg_per_s * t).to_radians());
            bias * noise_rotation(rng, noise_deg.to_radians()) * inv * g
        })
        .collect();
    let stamps = times.iter().map(|t| t + clock_offset_s).collect();
    let rate = 1.0 / (times[1] - times[0]);
    TimedSeries::new(stamps, samples, rate).expect("increasing sample times")
}

/// Headset pose in the world: the head joint frame composed with the headset mount.
pub fn headset_in_world(
    spec: &BodyModelSpec,
    beta: &ShapeParams,
    pose: &PoseParams,
    headset_in_head: &RigidTransform,
) -> RigidTransform {
    let head = spec.named_joints["head"];
    let posed = spec.forward_matrices(&spec.rest_joints(beta), pose);
    RigidTransform::new(Rotation3::from_matrix(&posed.global[head]), posed.positions[head]) * *headset_in_head
}

impl GroundTruthBundle {
    /// World-to-camera view of an egocentric camera at frame `k`.
    pub fn egocam_view(&self, spec: &BodyModelSpec, k: usize, name: &str) -> Option<CameraView> {
        let cam_in_headset = self.mount.egocam_in_headset.get(name)?;
        let h = headset_in_world(spec, &self.beta, &self.poses[k], &self.headset_in_head);
        let intr = *self.egocam_intrinsics.get(name)?;
        CameraView::new(name, intr, (h * *cam_in_headset).inverse()).ok()
    }

    /// Device name of the IMU mounted on `joint`, if any.
    pub fn sensor_for_joint(joint: &str) -> Option<&'static str> {
        IMU_SENSORS.iter().find(|(_, j)| *j == joint).map(|(s, _)| *s)
    }
}

/// Run the whole rig.
pub fn simulate(spec: &BodyModelSpec, config: &RigConfig) -> Result<GroundTruthBundle, RigError> {
    config.validate()?;
    let seed = config.seed;
    let motion = MotionModel::random(seed, config.duration_s, spec);
    let timestamps = config.frame_timestamps();
    let poses = motion.sample(config.duration_s, config.frame_rate_hz);
    let beta = motion.beta;
    let cameras = camera_ring(config.camera_count, config.ring_radius_m, config.camera_height_m);
    let (mount, headset_in_head) = random_mount(seed);
    let observations =
        render_observations(spec, &beta, &poses, &timestamps, &cameras, config.pixel_noise_px, config.dropout, seed);

    let imu_n = ((config.duration_s + 2.0 * IMU_MARGIN_S) * config.imu_rate_hz).round() as usize;
    let imu_times: Vec<f64> = (0..imu_n).map(|k| -IMU_MARGIN_S + k as f64 / config.imu_rate_hz).collect();
    let mut imu = BTreeMap::new();
    for (i, (sensor, joint)) in IMU_SENSORS.iter().enumerate() {
        let mut rng = rng_for(seed, 10 + i as u64);
        let j = spec.named_joints[*joint];
        let series = simulate_imu(
            spec,
            &motion,
            j,
            &mount.imu_joint_offsets[*joint],
            config.imu_noise_deg,
            config.imu_drift_deg_per_s,
            config.imu_clock_offset_s,
            &imu_times,
            &mut rng,
        );
        imu.insert(sensor.to_string(), series);
    }

    let rb_to_head = mount.headset_in_rigidbody.inverse();
    let rigidbody = TimedSeries::new(
        timestamps.clone(),
        poses.iter().map(|p| headset_in_world(spec, &beta, p, &headset_in_head) * rb_to_head).collect(),
        config.frame_rate_hz,
    )
    .expect("frame times increase");

    let mut calib_pairs = BTreeMap::new();
    let mut rng = rng_for(seed, 4);
    for (_, joint) in IMU_SENSORS {
        let inv = mount.imu_joint_offsets[joint].inverse();
        let pairs = (0..config.calib_pairs)
            .map(|_| {
                let r_joint = random_rotation(&mut rng);
                let r_sensor = noise_rotation(&mut rng, config.calib_noise_deg.to_radians()) * inv * r_joint;
                (r_sensor, r_joint)
            })
            .collect();
        calib_pairs.insert(joint.to_string(), pairs);
    }

    Ok(GroundTruthBundle {
        config: config.clone(),
        motion,
        timestamps,
        poses,
        beta,
        cameras,
        mount,
        headset_in_head,
        egocam_intrinsics: EGOCAM_NAMES.iter().map(|n| (n.to_string(), egocam_intrinsics())).collect(),
        imu_clock_offset_s: config.imu_clock_offset_s,
        observations,
        imu,
        rigidbody,
        calib_pairs,
    })
}

#[cfg(test)]
mod tests;
