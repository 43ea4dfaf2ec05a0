//! Joint-only parametric body model: shape-dependent rest skeleton, forward
//! kinematics over a kinematic tree, and a linear keypoint regressor.

mod humanoid;

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Matrix3, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::Rotation3;

pub use humanoid::{body25_keypoint_names, synthetic_humanoid, SMPL_JOINT_NAMES};

/// Number of shape coefficients.
pub const SHAPE_DIM: usize = 10;

/// Role names every model must resolve in its named-joint map.
pub const REQUIRED_NAMED_JOINTS: [&str; 6] = ["pelvis", "head", "left_wrist", "right_wrist", "left_knee", "right_knee"];

pub const BODY_MODEL_FORMAT: &str = "mocap-fuse/body-model";
pub const BODY_MODEL_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum BodyModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid body model: {0}")]
    Invalid(String),
    #[error("unknown joint name `{0}`")]
    UnknownJoint(String),
    #[error("unsupported body model format `{format}` v{version}")]
    Format { format: String, version: u32 },
    #[error("body model I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("body model parse: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Shape coefficients (dimensionless).
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct ShapeParams(pub SVector<f64, SHAPE_DIM>);

impl ShapeParams {
    pub fn zeros() -> Self {
        Self(SVector::zeros())
    }

    pub fn unit(k: usize) -> Self {
        let mut b = SVector::zeros();
        b[k] = 1.0;
        Self(b)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Root translation (meters) plus one parent-relative axis-angle rotation per joint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseParams {
    pub root_translation: Vector3<f64>,
    pub joint_rotations: Vec<Vector3<f64>>,
}

impl PoseParams {
    pub fn zeros(joint_count: usize) -> Self {
        Self { root_translation: Vector3::zeros(), joint_rotations: vec![Vector3::zeros(); joint_count] }
    }

    /// `3 + 3 * joint_count` scalars.
    pub fn dim(&self) -> usize {
        3 + 3 * self.joint_rotations.len()
    }

    /// Translation first, then the rotation vectors in joint order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        self.write_flat(&mut out);
        out
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.root_translation.as_slice());
        for r in &self.joint_rotations {
            out.extend_from_slice(r.as_slice());
        }
    }

    pub fn from_flat(values: &[f64]) -> Result<Self, BodyModelError> {
        if values.len() < 3 || !values.len().is_multiple_of(3) {
            return Err(BodyModelError::DimensionMismatch { expected: 75, got: values.len() });
        }
        let joint_rotations = values[3..].chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect();
        Ok(Self { root_translation: Vector3::new(values[0], values[1], values[2]), joint_rotations })
    }

    pub fn is_finite(&self) -> bool {
        self.root_translation.iter().all(|v| v.is_finite())
            && self.joint_rotations.iter().all(|r| r.iter().all(|v| v.is_finite()))
    }

    pub fn local_rotations(&self) -> Vec<Rotation3> {
        self.joint_rotations.iter().map(Rotation3::from_axis_angle).collect()
    }
}

/// Global joint rotations and positions produced by forward kinematics.
#[derive(Clone, Debug, PartialEq)]
pub struct Posed {
    pub global_rotations: Vec<Rotation3>,
    pub global_positions: Vec<Vector3<f64>>,
}

/// Matrix form of [`Posed`], used by the energy code.
#[derive(Clone, Debug)]
pub(crate) struct PosedMatrices {
    pub global: Vec<Matrix3<f64>>,
    pub positions: Vec<Vector3<f64>>,
}

/// Kinematic tree, shape blend and keypoint regressor of a body model.
#[derive(Clone, Debug, PartialEq)]
pub struct BodyModelSpec {
    pub joint_names: Vec<String>,
    /// `parents[0]` is `None`; otherwise `parents[j] < j`.
    pub parents: Vec<Option<usize>>,
    pub rest_joints_base: Vec<Vector3<f64>>,
    /// `shape_dirs[k][j]`: displacement of joint `j` per unit of `beta_k`.
    pub shape_dirs: Vec<Vec<Vector3<f64>>>,
    pub keypoint_names: Vec<String>,
    /// Sparse rows: `(joint, weight)` pairs per keypoint.
    pub regressor: Vec<Vec<(usize, f64)>>,
    /// Keypoint index pairs forming the detector skeleton.
    pub keypoint_bones: Vec<(usize, usize)>,
    pub named_joints: BTreeMap<String, usize>,
    pub upper_joints: Vec<usize>,
    pub lower_joints: Vec<usize>,
}

impl BodyModelSpec {
    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn keypoint_count(&self) -> usize {
        self.regressor.len()
    }

    pub fn pose_dim(&self) -> usize {
        3 + 3 * self.joint_count()
    }

    pub fn joint(&self, name: &str) -> Result<usize, BodyModelError> {
        self.named_joints
            .get(name)
            .copied()
            .or_else(|| self.joint_names.iter().position(|n| n == name))
            .ok_or_else(|| BodyModelError::UnknownJoint(name.to_string()))
    }

    pub fn keypoint(&self, name: &str) -> Option<usize> {
        self.keypoint_names.iter().position(|n| n == name)
    }

    pub fn validate(&self) -> Result<(), BodyModelError> {
        let j = self.joint_count();
        let bad = |msg: String| Err(BodyModelError::Invalid(msg));
        if j == 0 {
            return bad("no joints".into());
        }
        if self.joint_names.len() != j || self.rest_joints_base.len() != j {
            return bad("joint_names / rest_joints_base length disagree with parents".into());
        }
        if self.parents[0].is_some() {
            return bad("joint 0 must be the root".into());
        }
        for (idx, p) in self.parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < idx => {}
                _ => return bad(format!("joint {idx} has parent {p:?}; parents must precede children")),
            }
        }
        if self.shape_dirs.len() != SHAPE_DIM || self.shape_dirs.iter().any(|d| d.len() != j) {
            return bad(format!("shape_dirs must be {SHAPE_DIM} blocks of {j} joints"));
        }
        if self.keypoint_names.len() != self.regressor.len() {
            return bad("keypoint_names / regressor length mismatch".into());
        }
        for (k, row) in self.regressor.iter().enumerate() {
            if !row.iter().any(|(_, w)| *w != 0.0) {
                return bad(format!("regressor row {k} has no nonzero weight"));
            }
            if let Some((c, _)) = row.iter().find(|(c, _)| *c >= j) {
                return bad(format!("regressor row {k} references joint {c}"));
            }
        }
        for &(a, b) in &self.keypoint_bones {
            if a >= self.keypoint_count() || b >= self.keypoint_count() || a == b {
                return bad(format!("bad keypoint bone ({a}, {b})"));
            }
        }
        for name in REQUIRED_NAMED_JOINTS {
            match self.named_joints.get(name) {
                Some(&idx) if idx < j => {}
                _ => return bad(format!("named joint `{name}` missing or out of range")),
            }
        }
        for &idx in self.upper_joints.iter().chain(&self.lower_joints) {
            if idx >= j {
                return bad(format!("subset joint {idx} out of range"));
            }
        }
        Ok(())
    }

    /// `base + sum_k beta_k * shape_dirs_k`.
    pub fn rest_joints(&self, beta: &ShapeParams) -> Vec<Vector3<f64>> {
        let mut out = self.rest_joints_base.clone();
        for (k, dirs) in self.shape_dirs.iter().enumerate() {
            let b = beta.0[k];
            if b == 0.0 {
                continue;
            }
            for (o, d) in out.iter_mut().zip(dirs) {
                *o += d * b;
            }
        }
        out
    }

    fn check_pose(&self, theta: &PoseParams) -> Result<(), BodyModelError> {
        if theta.joint_rotations.len() != self.joint_count() {
            return Err(BodyModelError::DimensionMismatch { expected: self.pose_dim(), got: theta.dim() });
        }
        Ok(())
    }

    pub(crate) fn forward_matrices(&self, rest: &[Vector3<f64>], theta: &PoseParams) -> PosedMatrices {
        let n = self.joint_count();
        let local: Vec<Matrix3<f64>> =
            theta.joint_rotations.iter().map(|r| Rotation3::from_axis_angle(r).matrix()).collect();
        let mut global = Vec::with_capacity(n);
        let mut positions = Vec::with_capacity(n);
        global.push(local[0]);
        positions.push(rest[0] + theta.root_translation);
        for j in 1..n {
            let p = self.parents[j].expect("validated tree");
            let g = global[p] * local[j];
            let pos = positions[p] + global[p] * (rest[j] - rest[p]);
            global.push(g);
            positions.push(pos);
        }
        PosedMatrices { global, positions }
    }

    /// Global joint rotations and positions for shape `beta` and pose `theta`.
    pub fn forward_kinematics(&self, beta: &ShapeParams, theta: &PoseParams) -> Result<Posed, BodyModelError> {
        self.check_pose(theta)?;
        let rest = self.rest_joints(beta);
        let n = self.joint_count();
        let local = theta.local_rotations();
        let mut global_rotations: Vec<Rotation3> = Vec::with_capacity(n);
        let mut global_positions: Vec<Vector3<f64>> = Vec::with_capacity(n);
        global_rotations.push(local[0]);
        global_positions.push(rest[0] + theta.root_translation);
        for j in 1..n {
            let p = self.parents[j].expect("validated tree");
            let pos = global_positions[p] + global_rotations[p].rotate(&(rest[j] - rest[p]));
            global_rotations.push(global_rotations[p] * local[j]);
            global_positions.push(pos);
        }
        Ok(Posed { global_rotations, global_positions })
    }

    /// Applies the keypoint regressor to model joint positions.
    pub fn regress_keypoints(&self, joints: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        self.regressor.iter().map(|row| row.iter().fold(Vector3::zeros(), |acc, &(j, w)| acc + joints[j] * w)).collect()
    }

    /// Keypoints of the posed model, i.e. regression after forward kinematics.
    pub fn keypoints(&self, beta: &ShapeParams, theta: &PoseParams) -> Result<Vec<Vector3<f64>>, BodyModelError> {
        Ok(self.regress_keypoints(&self.forward_kinematics(beta, theta)?.global_positions))
    }

    /// Regressor rows that pick exactly one joint with weight one.
    pub fn single_joint_keypoint(&self, k: usize) -> Option<usize> {
        match self.regressor[k].as_slice() {
            [(j, w)] if (*w - 1.0).abs() < 1e-12 => Some(*j),
            _ => None,
        }
    }

    /// Keypoint bones whose length cannot change with pose: both ends are
    /// single joints that are parent/child or siblings.
    pub fn rigid_keypoint_bones(&self) -> Vec<(usize, usize)> {
        self.keypoint_bones
            .iter()
            .copied()
            .filter(|&(a, b)| match (self.single_joint_keypoint(a), self.single_joint_keypoint(b)) {
                (Some(ja), Some(jb)) => {
                    self.parents[ja] == Some(jb)
                        || self.parents[jb] == Some(ja)
                        || (self.parents[ja].is_some() && self.parents[ja] == self.parents[jb])
                }
                _ => false,
            })
            .collect()
    }

    /// `true` if `descendant` lies in the subtree rooted at `ancestor` (inclusive).
    pub fn is_in_subtree(&self, descendant: usize, ancestor: usize) -> bool {
        let mut j = Some(descendant);
        while let Some(idx) = j {
            if idx == ancestor {
                return true;
            }
            if idx < ancestor {
                return false;
            }
            j = self.parents[idx];
        }
        false
    }

    pub fn to_file_repr(&self) -> BodyModelFile {
        BodyModelFile {
            format: BODY_MODEL_FORMAT.to_string(),
            version: BODY_MODEL_VERSION,
            joint_names: self.joint_names.clone(),
            parents: self.parents.iter().map(|p| p.map(|v| v as i64).unwrap_or(-1)).collect(),
            rest_joints_base: self.rest_joints_base.iter().map(|v| [v.x, v.y, v.z]).collect(),
            shape_dirs: self.shape_dirs.iter().map(|d| d.iter().map(|v| [v.x, v.y, v.z]).collect()).collect(),
            keypoint_names: self.keypoint_names.clone(),
            regressor: self
                .regressor
                .iter()
                .enumerate()
                .flat_map(|(k, row)| row.iter().map(move |&(j, w)| (k, j, w)))
                .collect(),
            keypoint_bones: self.keypoint_bones.clone(),
            named_joints: self.named_joints.clone(),
            upper_joints: self.upper_joints.iter().map(|&j| self.joint_names[j].clone()).collect(),
            lower_joints: self.lower_joints.iter().map(|&j| self.joint_names[j].clone()).collect(),
        }
    }

    pub fn from_file_repr(file: BodyModelFile) -> Result<Self, BodyModelError> {
        if file.format != BODY_MODEL_FORMAT || file.version != BODY_MODEL_VERSION {
            return Err(BodyModelError::Format { format: file.format, version: file.version });
        }
        let k = file.keypoint_names.len();
        let mut regressor = vec![Vec::new(); k];
        for (row, col, w) in file.regressor {
            if row >= k {
                return Err(BodyModelError::Invalid(format!("regressor triplet row {row} >= {k}")));
            }
            regressor[row].push((col, w));
        }
        let parents = file.parents.iter().map(|&p| if p < 0 { None } else { Some(p as usize) }).collect();
        let by_name = |names: &[String]| -> Result<Vec<usize>, BodyModelError> {
            names
                .iter()
                .map(|n| {
                    file.joint_names.iter().position(|j| j == n).ok_or_else(|| BodyModelError::UnknownJoint(n.clone()))
                })
                .collect()
        };
        let upper_joints = by_name(&file.upper_joints)?;
        let lower_joints = by_name(&file.lower_joints)?;
        let spec = Self {
            parents,
            rest_joints_base: file.rest_joints_base.iter().map(|v| Vector3::from(*v)).collect(),
            shape_dirs: file.shape_dirs.iter().map(|d| d.iter().map(|v| Vector3::from(*v)).collect()).collect(),
            joint_names: file.joint_names,
            keypoint_names: file.keypoint_names,
            regressor,
            keypoint_bones: file.keypoint_bones,
            named_joints: file.named_joints,
            upper_joints,
            lower_joints,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, BodyModelError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_file_repr(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), BodyModelError> {
        let text = serde_json::to_string_pretty(&self.to_file_repr())?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

/// On-disk body model (pretty-printed JSON).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyModelFile {
    pub format: String,
    pub version: u32,
    pub joint_names: Vec<String>,
    /// `-1` marks the root.
    pub parents: Vec<i64>,
    pub rest_joints_base: Vec<[f64; 3]>,
    pub shape_dirs: Vec<Vec<[f64; 3]>>,
    pub keypoint_names: Vec<String>,
    /// `(keypoint, joint, weight)` triplets.
    pub regressor: Vec<(usize, usize, f64)>,
    pub keypoint_bones: Vec<(usize, usize)>,
    pub named_joints: BTreeMap<String, usize>,
    pub upper_joints: Vec<String>,
    pub lower_joints: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn default_model_is_valid() {
        let spec = synthetic_humanoid();
        spec.validate().unwrap();
        assert_eq!(spec.joint_count(), 24);
        assert_eq!(spec.keypoint_count(), 25);
        assert_eq!(spec.pose_dim(), 75);
        for row in &spec.regressor {
            let s: f64 = row.iter().map(|(_, w)| w).sum();
            assert_relative_eq!(s, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn stature_is_plausible() {
        let spec = synthetic_humanoid();
        let rest = spec.rest_joints(&ShapeParams::zeros());
        let head = rest[spec.joint("head").unwrap()].z;
        let ankle = rest[spec.joint("left_ankle").unwrap()].z;
        // head joint sits ~10 cm under the crown, ankle ~8 cm above the floor
        let stature = head - ankle + 0.18;
        assert!((1.6..1.85).contains(&stature), "stature {stature}");
    }

    #[test]
    fn zero_shape_gives_base_and_unit_shape_adds_one_direction() {
        let spec = synthetic_humanoid();
        assert_eq!(spec.rest_joints(&ShapeParams::zeros()), spec.rest_joints_base);
        let r = spec.rest_joints(&ShapeParams::unit(0));
        for j in 0..24 {
            assert_relative_eq!(r[j], spec.rest_joints_base[j] + spec.shape_dirs[0][j], epsilon = 1e-15);
        }
    }

    #[test]
    fn all_ones_shape_matches_loop_summation() {
        let spec = synthetic_humanoid();
        let beta = ShapeParams(SVector::repeat(1.0));
        let r = spec.rest_joints(&beta);
        for j in 0..24 {
            let mut expected = spec.rest_joints_base[j];
            for k in 0..SHAPE_DIM {
                expected += spec.shape_dirs[k][j];
            }
            assert_relative_eq!(r[j], expected, epsilon = 1e-14);
        }
    }

    #[test]
    fn rest_pose_fk() {
        let spec = synthetic_humanoid();
        let beta = ShapeParams::unit(3);
        let posed = spec.forward_kinematics(&beta, &PoseParams::zeros(24)).unwrap();
        let rest = spec.rest_joints(&beta);
        for j in 0..24 {
            assert_relative_eq!(posed.global_positions[j], rest[j], epsilon = 1e-14);
            assert_eq!(posed.global_rotations[j], Rotation3::identity());
        }
    }

    #[test]
    fn root_quarter_turn_rotates_rigidly() {
        let spec = synthetic_humanoid();
        let beta = ShapeParams::zeros();
        let mut theta = PoseParams::zeros(24);
        theta.joint_rotations[0] = Vector3::new(0.0, 0.0, FRAC_PI_2);
        let posed = spec.forward_kinematics(&beta, &theta).unwrap();
        let rest = spec.rest_joints(&beta);
        let rz = Rotation3::about_axis(&Vector3::z(), FRAC_PI_2);
        for j in 0..24 {
            let expected = rest[0] + rz.rotate(&(rest[j] - rest[0]));
            assert_relative_eq!(posed.global_positions[j], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn wrong_pose_dimension() {
        let spec = synthetic_humanoid();
        let err = spec.forward_kinematics(&ShapeParams::zeros(), &PoseParams::zeros(22)).unwrap_err();
        assert!(matches!(err, BodyModelError::DimensionMismatch { expected: 75, got: 69 }));
    }

    #[test]
    fn regressor_identity_and_midpoint() {
        let mut spec = synthetic_humanoid();
        let joints: Vec<Vector3<f64>> = (0..24).map(|j| Vector3::new(j as f64, (j * j) as f64, -(j as f64))).collect();
        spec.regressor = (0..24).map(|j| vec![(j, 1.0)]).collect();
        assert_eq!(spec.regress_keypoints(&joints), joints);
        spec.regressor = vec![vec![(0, 0.5), (1, 0.5)]];
        assert_relative_eq!(spec.regress_keypoints(&joints)[0], (joints[0] + joints[1]) / 2.0);
    }

    #[test]
    fn default_regressor_matches_dense_product() {
        let spec = synthetic_humanoid();
        let rest = spec.rest_joints(&ShapeParams::zeros());
        let mut dense = nalgebra::DMatrix::<f64>::zeros(25, 24);
        for (k, row) in spec.regressor.iter().enumerate() {
            for &(j, w) in row {
                dense[(k, j)] += w;
            }
        }
        let mut jm = nalgebra::DMatrix::<f64>::zeros(24, 3);
        for (j, p) in rest.iter().enumerate() {
            for c in 0..3 {
                jm[(j, c)] = p[c];
            }
        }
        let prod = dense * jm;
        let kp = spec.regress_keypoints(&rest);
        for k in 0..25 {
            for c in 0..3 {
                assert_relative_eq!(kp[k][c], prod[(k, c)], epsilon = 1e-14);
            }
        }
        let midhip = spec.keypoint("MidHip").unwrap();
        let (l, r) = (spec.joint("left_hip").unwrap(), spec.joint("right_hip").unwrap());
        assert_relative_eq!(kp[midhip], (rest[l] + rest[r]) / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn file_round_trip() {
        let spec = synthetic_humanoid();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        spec.save(&path).unwrap();
        assert_eq!(BodyModelSpec::load(&path).unwrap(), spec);
    }

    #[test]
    fn rejects_bad_tree() {
        let mut spec = synthetic_humanoid();
        spec.parents[5] = Some(7);
        assert!(spec.validate().is_err());
        let mut spec = synthetic_humanoid();
        spec.regressor[3] = vec![(2, 0.0)];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn rigid_bones_are_pose_invariant() {
        let spec = synthetic_humanoid();
        let bones = spec.rigid_keypoint_bones();
        assert_eq!(bones.len(), 8);
        let mut theta = PoseParams::zeros(24);
        for (j, r) in theta.joint_rotations.iter_mut().enumerate() {
            *r = Vector3::new(0.1 * j as f64, -0.05 * j as f64, 0.3).map(|v| v.sin());
        }
        let beta = ShapeParams::unit(2);
        let a = spec.keypoints(&beta, &PoseParams::zeros(24)).unwrap();
        let b = spec.keypoints(&beta, &theta).unwrap();
        for (i, j) in bones {
            assert_relative_eq!((a[i] - a[j]).norm(), (b[i] - b[j]).norm(), epsilon = 1e-12);
        }
    }
}
