//! Built-in 24-joint humanoid with a body25-style keypoint regressor.
//!
//! World frame is z-up; in the rest pose the subject faces +y with their left
//! hand along +x (T-pose).

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{BodyModelSpec, SHAPE_DIM};

pub const SMPL_JOINT_NAMES: [&str; 24] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hand",
    "right_hand",
];

const PARENTS: [i64; 24] = [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21];

// (x, y, z) meters, left side; right side is mirrored in x.
const REST: [[f64; 3]; 24] = [
    [0.0, 0.0, 0.95],
    [0.09, -0.01, 0.87],
    [-0.09, -0.01, 0.87],
    [0.0, -0.02, 1.06],
    [0.10, 0.0, 0.50],
    [-0.10, 0.0, 0.50],
    [0.0, -0.01, 1.19],
    [0.10, -0.03, 0.08],
    [-0.10, -0.03, 0.08],
    [0.0, 0.0, 1.25],
    [0.11, 0.10, 0.02],
    [-0.11, 0.10, 0.02],
    [0.0, 0.0, 1.47],
    [0.07, 0.0, 1.40],
    [-0.07, 0.0, 1.40],
    [0.0, 0.03, 1.62],
    [0.18, -0.01, 1.42],
    [-0.18, -0.01, 1.42],
    [0.44, -0.02, 1.42],
    [-0.44, -0.02, 1.42],
    [0.69, -0.01, 1.42],
    [-0.69, -0.01, 1.42],
    [0.78, -0.01, 1.41],
    [-0.78, -0.01, 1.41],
];

const BODY25: [&str; 25] = [
    "Nose",
    "Neck",
    "RShoulder",
    "RElbow",
    "RWrist",
    "LShoulder",
    "LElbow",
    "LWrist",
    "MidHip",
    "RHip",
    "RKnee",
    "RAnkle",
    "LHip",
    "LKnee",
    "LAnkle",
    "REye",
    "LEye",
    "REar",
    "LEar",
    "LBigToe",
    "LSmallToe",
    "LHeel",
    "RBigToe",
    "RSmallToe",
    "RHeel",
];

const BODY25_BONES: [(usize, usize); 24] = [
    (1, 8),
    (1, 2),
    (1, 5),
    (2, 3),
    (3, 4),
    (5, 6),
    (6, 7),
    (8, 9),
    (9, 10),
    (10, 11),
    (8, 12),
    (12, 13),
    (13, 14),
    (1, 0),
    (0, 15),
    (15, 17),
    (0, 16),
    (16, 18),
    (14, 19),
    (19, 20),
    (14, 21),
    (11, 22),
    (22, 23),
    (11, 24),
];

const SHAPE_SEED: u64 = 0x5eed_b0d1;
const SHAPE_SIGMA_M: f64 = 0.015;

pub fn body25_keypoint_names() -> Vec<String> {
    BODY25.iter().map(|s| s.to_string()).collect()
}

fn regressor() -> Vec<Vec<(usize, f64)>> {
    // joint indices
    let (pelvis, lhip, rhip, lknee, rknee, lankle, rankle) = (0, 1, 2, 4, 5, 7, 8);
    let (lfoot, rfoot, neck, lcollar, rcollar, head) = (10, 11, 12, 13, 14, 15);
    let (lsho, rsho, lelb, relb, lwri, rwri) = (16, 17, 18, 19, 20, 21);
    vec![
        vec![(head, 1.25), (neck, -0.25)],
        vec![(neck, 1.0)],
        vec![(rsho, 1.0)],
        vec![(relb, 1.0)],
        vec![(rwri, 1.0)],
        vec![(lsho, 1.0)],
        vec![(lelb, 1.0)],
        vec![(lwri, 1.0)],
        vec![(lhip, 0.5), (rhip, 0.5)],
        vec![(rhip, 1.0)],
        vec![(rknee, 1.0)],
        vec![(rankle, 1.0)],
        vec![(lhip, 1.0)],
        vec![(lknee, 1.0)],
        vec![(lankle, 1.0)],
        vec![(head, 1.2), (neck, -0.5), (rcollar, 0.3)],
        vec![(head, 1.2), (neck, -0.5), (lcollar, 0.3)],
        vec![(head, 1.0), (neck, -0.6), (rcollar, 0.6)],
        vec![(head, 1.0), (neck, -0.6), (lcollar, 0.6)],
        vec![(lfoot, 1.2), (lankle, -0.2)],
        vec![(lfoot, 1.1), (lankle, -0.1), (lhip, 0.3), (pelvis, -0.3)],
        vec![(lankle, 1.3), (lfoot, -0.3)],
        vec![(rfoot, 1.2), (rankle, -0.2)],
        vec![(rfoot, 1.1), (rankle, -0.1), (rhip, 0.3), (pelvis, -0.3)],
        vec![(rankle, 1.3), (rfoot, -0.3)],
    ]
}

/// The default synthetic body model used throughout the crate.
///
/// Shape directions are drawn once from a fixed seed (about 1.5 cm per unit of
/// each coefficient); the root row is zero so shape never mimics a translation.
pub fn synthetic_humanoid() -> BodyModelSpec {
    let joint_names: Vec<String> = SMPL_JOINT_NAMES.iter().map(|s| s.to_string()).collect();
    let parents = PARENTS.iter().map(|&p| if p < 0 { None } else { Some(p as usize) }).collect();
    let rest_joints_base = REST.iter().map(|v| Vector3::from(*v)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(SHAPE_SEED);
    let normal = Normal::new(0.0, SHAPE_SIGMA_M).expect("valid sigma");
    let shape_dirs = (0..SHAPE_DIM)
        .map(|_| {
            (0..24)
                .map(|j| {
                    let v = Vector3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
                    if j == 0 {
                        Vector3::zeros()
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect();

    let named_joints: BTreeMap<String, usize> =
        [("pelvis", 0), ("head", 15), ("left_wrist", 20), ("right_wrist", 21), ("left_knee", 4), ("right_knee", 5)]
            .into_iter()
            .map(|(n, j)| (n.to_string(), j))
            .collect();

    let upper_joints = vec![3, 6, 9, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23];
    let lower_joints = vec![0, 1, 2, 4, 5, 7, 8, 10, 11];

    BodyModelSpec {
        joint_names,
        parents,
        rest_joints_base,
        shape_dirs,
        keypoint_names: body25_keypoint_names(),
        regressor: regressor(),
        keypoint_bones: BODY25_BONES.to_vec(),
        named_joints,
        upper_joints,
        lower_joints,
    }
}
