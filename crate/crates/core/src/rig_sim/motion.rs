//! Procedural ground-truth motion: band-limited joint sinusoids on top of a
//! smooth random walk of the root.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::body_model::{BodyModelSpec, PoseParams, ShapeParams};
use crate::geometry::{nearest_axis_angle, Rotation3};

/// Lowest and highest joint-angle frequency (Hz).
pub const FREQ_BAND_HZ: (f64, f64) = (0.1, 0.5);
const KNOT_SPACING_S: f64 = 1.0;
const KNOT_MARGIN_S: f64 = 4.0;

/// Per-joint (center, amplitude) of the local axis-angle components, radians.
/// Axes are the rest-pose world axes: x left, y forward, z up.
/// Joints with a zero row never move (hands, feet, the root is driven separately).
const JOINT_RANGES: [[(f64, f64); 3]; 24] = [
    [(0.0, 0.0), (0.0, 0.0), (0.0, 0.0)],    // pelvis
    [(0.1, 0.35), (0.05, 0.1), (0.0, 0.0)],  // left_hip
    [(0.1, 0.35), (-0.05, 0.1), (0.0, 0.0)], // right_hip
    [(0.0, 0.08), (0.0, 0.06), (0.0, 0.08)], // spine1
    [(-0.45, 0.35), (0.0, 0.0), (0.0, 0.0)], // left_knee
    [(-0.45, 0.35), (0.0, 0.0), (0.0, 0.0)], // right_knee
    [(0.0, 0.08), (0.0, 0.06), (0.0, 0.08)], // spine2
    [(0.1, 0.2), (0.0, 0.05), (0.0, 0.0)],   // left_ankle
    [(0.1, 0.2), (0.0, 0.05), (0.0, 0.0)],   // right_ankle
    [(0.0, 0.08), (0.0, 0.06), (0.0, 0.08)], // spine3
    [(0.0, 0.0), (0.0, 0.0), (0.0, 0.0)],    // left_foot
    [(0.0, 0.0), (0.0, 0.0), (0.0, 0.0)],    // right_foot
    [(0.0, 0.1), (0.0, 0.1), (0.0, 0.1)],    // neck
    [(0.0, 0.05), (0.0, 0.05), (0.0, 0.05)], // left_collar
    [(0.0, 0.05), (0.0, 0.05), (0.0, 0.05)], // right_collar
    [(0.0, 0.2), (0.0, 0.1), (0.0, 0.3)],    // head
    [(0.0, 0.3), (0.9, 0.4), (0.1, 0.5)],    // left_shoulder
    [(0.0, 0.3), (-0.9, 0.4), (-0.1, 0.5)],  // right_shoulder
    [(0.0, 0.0), (0.0, 0.0), (0.6, 0.4)],    // left_elbow
    [(0.0, 0.0), (0.0, 0.0), (-0.6, 0.4)],   // right_elbow
    [(0.0, 0.3), (0.0, 0.3), (0.0, 0.3)],    // left_wrist
    [(0.0, 0.3), (0.0, 0.3), (0.0, 0.3)],    // right_wrist
    [(0.0, 0.0), (0.0, 0.0), (0.0, 0.0)],    // left_hand
    [(0.0, 0.0), (0.0, 0.0), (0.0, 0.0)],    // right_hand
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct Sinusoid {
    amplitude: f64,
    freq_hz: f64,
    phase: f64,
}

impl Sinusoid {
    fn at(&self, t: f64) -> f64 {
        self.amplitude * (std::f64::consts::TAU * self.freq_hz * t + self.phase).sin()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Channel {
    center: f64,
    terms: Vec<Sinusoid>,
}

impl Channel {
    fn random(rng: &mut ChaCha8Rng, center: f64, cap: f64) -> Self {
        if cap == 0.0 {
            return Self { center, terms: Vec::new() };
        }
        let weights: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.2..1.0));
        let total = cap * rng.random_range(0.5..1.0) / weights.iter().sum::<f64>();
        let terms = weights
            .iter()
            .map(|w| Sinusoid {
                amplitude: w * total,
                freq_hz: rng.random_range(FREQ_BAND_HZ.0..FREQ_BAND_HZ.1),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            })
            .collect();
        Self { center, terms }
    }

    fn at(&self, t: f64) -> f64 {
        self.center + self.terms.iter().map(|s| s.at(t)).sum::<f64>()
    }
}

/// Continuous-time ground-truth motion for one subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionModel {
    pub beta: ShapeParams,
    joints: Vec<[Channel; 3]>,
    /// Ground-plane position and heading knots of a uniform cubic B-spline.
    root_knots: Vec<[f64; 3]>,
    knot_start: f64,
    root_tilt: [Channel; 2],
    root_bob: Channel,
}

fn bspline(p: [&[f64; 3]; 4], s: f64) -> [f64; 3] {
    let b0 = (1.0 - s).powi(3) / 6.0;
    let b1 = (3.0 * s.powi(3) - 6.0 * s * s + 4.0) / 6.0;
    let b2 = (-3.0 * s.powi(3) + 3.0 * s * s + 3.0 * s + 1.0) / 6.0;
    let b3 = s.powi(3) / 6.0;
    std::array::from_fn(|k| b0 * p[0][k] + b1 * p[1][k] + b2 * p[2][k] + b3 * p[3][k])
}

impl MotionModel {
    /// Random motion valid on `[-KNOT_MARGIN_S + 2, duration_s + KNOT_MARGIN_S - 2]`.
    pub fn random(seed: u64, duration_s: f64, spec: &BodyModelSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let mut beta = ShapeParams::zeros();
        beta.0.iter_mut().for_each(|b| *b = rng.random_range(-2.0..=2.0));
        let joints = (0..spec.joint_count())
            .map(|j| {
                let range = JOINT_RANGES.get(j).copied().unwrap_or([(0.0, 0.0); 3]);
                std::array::from_fn(|a| Channel::random(&mut rng, range[a].0, range[a].1))
            })
            .collect();
        let knot_start = -KNOT_MARGIN_S;
        let count = ((duration_s + 2.0 * KNOT_MARGIN_S) / KNOT_SPACING_S).ceil() as usize + 4;
        let mut root_knots = Vec::with_capacity(count);
        let mut state = [0.0f64; 3];
        for _ in 0..count {
            // mean-reverting walk keeps the subject near the ring center
            state[0] = 0.7 * state[0] + rng.random_range(-0.3..0.3);
            state[1] = 0.7 * state[1] + rng.random_range(-0.3..0.3);
            state[2] = 0.85 * state[2] + rng.random_range(-0.5..0.5);
            root_knots.push(state);
        }
        let root_tilt = [Channel::random(&mut rng, 0.0, 0.08), Channel::random(&mut rng, 0.0, 0.05)];
        let root_bob = Channel::random(&mut rng, 0.0, 0.03);
        Self { beta, joints, root_knots, knot_start, root_tilt, root_bob }
    }

    fn root_plane(&self, t: f64) -> [f64; 3] {
        let u = ((t - self.knot_start) / KNOT_SPACING_S).max(0.0);
        let i = (u.floor() as usize).min(self.root_knots.len() - 4);
        let s = (u - i as f64).clamp(0.0, 1.0);
        let k = &self.root_knots;
        bspline([&k[i], &k[i + 1], &k[i + 2], &k[i + 3]], s)
    }

    /// Ground-truth pose at time `t` (seconds on the reference clock).
    pub fn pose_at(&self, t: f64) -> PoseParams {
        let mut pose = PoseParams::zeros(self.joints.len());
        for (j, ch) in self.joints.iter().enumerate().skip(1) {
            pose.joint_rotations[j] = Vector3::new(ch[0].at(t), ch[1].at(t), ch[2].at(t));
        }
        let [x, y, yaw] = self.root_plane(t);
        let root = Rotation3::about_axis(&Vector3::z(), yaw)
            * Rotation3::about_axis(&Vector3::x(), self.root_tilt[0].at(t))
            * Rotation3::about_axis(&Vector3::y(), self.root_tilt[1].at(t));
        pose.joint_rotations[0] = root.axis_angle();
        pose.root_translation = Vector3::new(x, y, self.root_bob.at(t));
        pose
    }

    /// Poses sampled at `rate_hz` over `[0, duration_s)` with the root axis-angle
    /// kept continuous across frames.
    pub fn sample(&self, duration_s: f64, rate_hz: f64) -> Vec<PoseParams> {
        let n = (duration_s * rate_hz).round() as usize;
        let mut out: Vec<PoseParams> = Vec::with_capacity(n);
        for k in 0..n {
            let mut p = self.pose_at(k as f64 / rate_hz);
            if let Some(prev) = out.last() {
                p.joint_rotations[0] = nearest_axis_angle(&prev.joint_rotations[0], p.joint_rotations[0]);
            }
            out.push(p);
        }
        out
    }
}

/// `(poses, beta)` for `duration_s` at `rate_hz`, deterministic in `seed`.
pub fn generate_motion(
    seed: u64,
    duration_s: f64,
    rate_hz: f64,
    spec: &BodyModelSpec,
) -> (Vec<PoseParams>, ShapeParams) {
    let model = MotionModel::random(seed, duration_s, spec);
    (model.sample(duration_s, rate_hz), model.beta)
}
