//! Sequence fitting of the body model to 3D keypoints and sparse rotation targets.
//!
//! Stage 1 initializes the shape from rigid limb lengths and each frame's root
//! from a rigid fit of the torso keypoints. Stage 2 jointly minimizes the
//! weighted energy over every frame's pose and the shared shape.

mod energy;
mod optimizer;
mod precond;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

pub use energy::{
    e_joint, e_prior, e_reg, e_rot, e_smooth, energy_gradient, total_energy, EnergyBreakdown, EnergyGradient,
    FitWeights, KeypointFrame, RotationTargets,
};
pub use optimizer::{minimize, LbfgsOptions, LbfgsOutcome};
pub use precond::Preconditioner;

use crate::body_model::{BodyModelSpec, PoseParams, ShapeParams, SHAPE_DIM};
use crate::geometry::{nearest_axis_angle, umeyama, Rotation3};
use crate::triangulate::{median, SkeletonSequence3D};
use energy::EnergyModel;
use precond::VariableMap;

#[derive(Debug, Clone, thiserror::Error)]
pub enum FitError {
    #[error("sequence has {0} frames, need at least 1 (2 for the smoothness term)")]
    EmptySeries(usize),
    #[error("length mismatch: {keypoints} keypoint frames, {targets} target frames, {poses:?} pose frames")]
    LengthMismatch { keypoints: usize, targets: usize, poses: Option<usize> },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown joint name {0:?} in rotation targets")]
    UnknownJointName(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("invalid weights {0:?}")]
    InvalidWeights(FitWeights),
    #[error("optimizer did not converge in {} iterations (energy {})", .0.iterations, .0.energy.total)]
    NotConverged(Box<FitResult>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub grad_tol: f64,
    pub lbfgs_memory: usize,
    pub preconditioner: Preconditioner,
    /// Initialize the shape from observed rigid limb lengths.
    pub init_shape: bool,
    /// Keypoints used for the per-frame rigid root initialization.
    pub torso_keypoints: Vec<String>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            rel_tol: 1e-8,
            grad_tol: 1e-6,
            lbfgs_memory: 10,
            preconditioner: Preconditioner::Block,
            init_shape: true,
            torso_keypoints: ["LHip", "RHip", "LShoulder", "RShoulder"].map(String::from).to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub poses: Vec<PoseParams>,
    pub beta: ShapeParams,
    pub energy: EnergyBreakdown,
    pub iterations: usize,
    pub converged: bool,
    /// Energy breakdown after initialization and after every accepted iteration.
    pub energy_log: Vec<EnergyBreakdown>,
}

impl KeypointFrame {
    pub fn from_sequence(seq: &SkeletonSequence3D) -> Vec<KeypointFrame> {
        seq.positions
            .iter()
            .zip(&seq.valid)
            .map(|(p, v)| KeypointFrame { positions: p.clone(), valid: v.clone() })
            .collect()
    }
}

/// Least-squares shape from the median observed lengths of rigid limbs.
pub fn initial_shape(spec: &BodyModelSpec, frames: &[KeypointFrame]) -> ShapeParams {
    let mut rows = Vec::new();
    for (a, b) in spec.rigid_keypoint_bones() {
        let mut lengths: Vec<f64> = frames
            .iter()
            .filter(|f| f.valid[a] && f.valid[b])
            .map(|f| (f.positions[a] - f.positions[b]).norm())
            .collect();
        if let (Some(l), Some(ja), Some(jb)) =
            (median(&mut lengths), spec.single_joint_keypoint(a), spec.single_joint_keypoint(b))
        {
            rows.push((ja, jb, l));
        }
    }
    let mut beta = ShapeParams::zeros();
    if rows.is_empty() {
        return beta;
    }
    const RIDGE: f64 = 1e-10;
    for _ in 0..20 {
        let rest = spec.rest_joints(&beta);
        let mut jac = DMatrix::<f64>::zeros(rows.len(), SHAPE_DIM);
        let mut res = DVector::<f64>::zeros(rows.len());
        for (r, &(ja, jb, l)) in rows.iter().enumerate() {
            let d = rest[ja] - rest[jb];
            let len = d.norm().max(1e-9);
            res[r] = len - l;
            let u = d / len;
            for k in 0..SHAPE_DIM {
                jac[(r, k)] = u.dot(&(spec.shape_dirs[k][ja] - spec.shape_dirs[k][jb]));
            }
        }
        let lhs = jac.transpose() * &jac + DMatrix::identity(SHAPE_DIM, SHAPE_DIM) * RIDGE;
        let rhs = -(jac.transpose() * &res + DVector::from_column_slice(beta.0.as_slice()) * RIDGE);
        let Some(step) = lhs.cholesky().map(|c| c.solve(&rhs)) else { break };
        for k in 0..SHAPE_DIM {
            beta.0[k] += step[k];
        }
        if step.norm() < 1e-12 {
            break;
        }
    }
    beta
}

/// Per-frame root rotation and translation from a rigid fit of the torso keypoints;
/// all other joints start at rest. Frames without enough torso points copy a neighbour.
pub fn initial_poses(
    spec: &BodyModelSpec,
    beta: &ShapeParams,
    frames: &[KeypointFrame],
    torso_keypoints: &[String],
) -> Result<Vec<PoseParams>, FitError> {
    let torso: Vec<usize> = torso_keypoints
        .iter()
        .map(|n| spec.keypoint(n).ok_or_else(|| FitError::DegenerateInput(format!("unknown keypoint {n:?}"))))
        .collect::<Result<_, _>>()?;
    let rest = spec.rest_joints(beta);
    let model_kp = spec.regress_keypoints(&rest);
    let mut out: Vec<Option<PoseParams>> = Vec::with_capacity(frames.len());
    let mut prev_rot = Vector3::zeros();
    for f in frames {
        let idx: Vec<usize> = torso.iter().copied().filter(|&k| f.valid[k]).collect();
        let src: Vec<_> = idx.iter().map(|&k| model_kp[k]).collect();
        let dst: Vec<_> = idx.iter().map(|&k| f.positions[k]).collect();
        out.push(umeyama(&src, &dst, false).map(|sim| {
            let mut pose = PoseParams::zeros(spec.joint_count());
            let rot = nearest_axis_angle(&prev_rot, sim.rotation.axis_angle());
            prev_rot = rot;
            pose.joint_rotations[0] = rot;
            pose.root_translation = sim.translation - rest[0] + sim.rotation.rotate(&rest[0]);
            pose
        }));
    }
    let Some(first) = out.iter().position(Option::is_some) else {
        return Err(FitError::DegenerateInput("no frame has three valid torso keypoints".into()));
    };
    let mut last = out[first].clone().expect("checked");
    Ok(out
        .into_iter()
        .map(|p| {
            if let Some(p) = p {
                last = p;
            }
            last.clone()
        })
        .collect())
}

/// Fit one shape and a pose per frame. Returns [`FitError::NotConverged`] carrying the
/// best iterate if the optimizer exhausts `max_iters`.
pub fn fit_sequence(
    spec: &BodyModelSpec,
    keypoints: &[KeypointFrame],
    targets: &[RotationTargets],
    weights: &FitWeights,
    opts: &FitOptions,
) -> Result<FitResult, FitError> {
    let beta = if opts.init_shape { initial_shape(spec, keypoints) } else { ShapeParams::zeros() };
    let model = EnergyModel::new(spec, keypoints, targets, *weights)?;
    if keypoints.is_empty() {
        return Err(FitError::EmptySeries(0));
    }
    let poses = initial_poses(spec, &beta, keypoints, &opts.torso_keypoints)?;
    fit_from(&model, &poses, &beta, opts)
}

/// Stage 2 only, starting from the given poses and shape.
pub fn fit_sequence_from(
    spec: &BodyModelSpec,
    keypoints: &[KeypointFrame],
    targets: &[RotationTargets],
    weights: &FitWeights,
    init_poses: &[PoseParams],
    init_beta: &ShapeParams,
    opts: &FitOptions,
) -> Result<FitResult, FitError> {
    let model = EnergyModel::new(spec, keypoints, targets, *weights)?;
    if keypoints.is_empty() {
        return Err(FitError::EmptySeries(0));
    }
    if init_poses.len() != keypoints.len() {
        return Err(FitError::LengthMismatch {
            keypoints: keypoints.len(),
            targets: targets.len(),
            poses: Some(init_poses.len()),
        });
    }
    fit_from(&model, init_poses, init_beta, opts)
}

fn fit_from(
    model: &EnergyModel,
    poses: &[PoseParams],
    beta: &ShapeParams,
    opts: &FitOptions,
) -> Result<FitResult, FitError> {
    model.weights().validate()?;
    let x0 = model.pack(poses, beta);
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(FitError::DegenerateInput("non-finite initial parameters".into()));
    }
    let lopts = LbfgsOptions {
        max_iters: opts.max_iters,
        rel_tol: opts.rel_tol,
        grad_tol: opts.grad_tol,
        memory: opts.lbfgs_memory.max(1),
    };
    let map = VariableMap::build(model, &x0, opts.preconditioner);
    let mut out = minimize(
        map.to_z(&x0),
        &lopts,
        |z| {
            let (b, g) = model.value_and_gradient(&map.to_x(z));
            (b, b.total, map.grad_z(&g))
        },
        |z| model.value(&map.to_x(z)),
    );
    out.x = map.to_x(&out.x);
    let (poses, beta) = model.unpack(&out.x);
    let result = FitResult {
        poses,
        beta,
        energy: *out.log.last().expect("log holds the initial point"),
        iterations: out.iterations,
        converged: out.converged,
        energy_log: out.log,
    };
    if result.converged {
        Ok(result)
    } else {
        Err(FitError::NotConverged(Box::new(result)))
    }
}

/// Global rotation of `joint` in every frame of a fitted sequence.
pub fn global_rotations(
    spec: &BodyModelSpec,
    beta: &ShapeParams,
    poses: &[PoseParams],
    joint: usize,
) -> Vec<Rotation3> {
    poses
        .iter()
        .map(|p| Rotation3::from_matrix(&spec.forward_matrices(&spec.rest_joints(beta), p).global[joint]))
        .collect()
}
