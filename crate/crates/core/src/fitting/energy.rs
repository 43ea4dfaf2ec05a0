//! Energy terms of the body fit and their analytic gradient.
//!
//! Gradients of the kinematic terms are accumulated over subtrees: a small
//! rotation `w` (world frame) of joint `a` moves every descendant position `p`
//! by `w x (p - p_a)` and left-multiplies every descendant global rotation by
//! `exp([w]x)`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Matrix3, SVector, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::FitError;
use crate::body_model::{BodyModelSpec, PoseParams, ShapeParams, SHAPE_DIM};
use crate::geometry::{right_jacobian, Rotation3};

/// Balance weights of the five energy terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitWeights {
    pub rot: f64,
    pub joint: f64,
    pub prior: f64,
    pub smooth: f64,
    pub reg: f64,
}

impl Default for FitWeights {
    fn default() -> Self {
        Self { rot: 1.0, joint: 5.0, prior: 0.01, smooth: 1.0, reg: 0.01 }
    }
}

impl FitWeights {
    pub fn zero() -> Self {
        Self { rot: 0.0, joint: 0.0, prior: 0.0, smooth: 0.0, reg: 0.0 }
    }

    pub fn validate(&self) -> Result<(), FitError> {
        let all = [self.rot, self.joint, self.prior, self.smooth, self.reg];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(FitError::InvalidWeights(*self));
        }
        Ok(())
    }
}

/// Global rotation targets of one frame, keyed by joint name.
pub type RotationTargets = BTreeMap<String, Rotation3>;

/// Observed 3D keypoints of one frame.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct KeypointFrame {
    pub positions: Vec<Vector3<f64>>,
    pub valid: Vec<bool>,
}

/// Unweighted term values and the weighted total.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub rot: f64,
    pub joint: f64,
    pub prior: f64,
    pub smooth: f64,
    pub reg: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    fn finish(mut self, w: &FitWeights) -> Self {
        self.total =
            w.rot * self.rot + w.joint * self.joint + w.prior * self.prior + w.smooth * self.smooth + w.reg * self.reg;
        self
    }

    /// Weighted contribution of each term, same field layout.
    pub fn weighted(&self, w: &FitWeights) -> EnergyBreakdown {
        EnergyBreakdown {
            rot: w.rot * self.rot,
            joint: w.joint * self.joint,
            prior: w.prior * self.prior,
            smooth: w.smooth * self.smooth,
            reg: w.reg * self.reg,
            total: self.total,
        }
    }
}

/// Gradient of the total energy: one flat `3 + 3J` vector per frame plus the shape block.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyGradient {
    pub frames: Vec<Vec<f64>>,
    pub beta: SVector<f64, SHAPE_DIM>,
}

impl EnergyGradient {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.frames.iter().flatten().copied().collect();
        out.extend(self.beta.iter());
        out
    }
}

fn resolve_targets(spec: &BodyModelSpec, targets: &RotationTargets) -> Result<Vec<(usize, Matrix3<f64>)>, FitError> {
    targets
        .iter()
        .map(|(name, r)| {
            spec.joint(name).map(|j| (j, r.matrix())).map_err(|_| FitError::UnknownJointName(name.clone()))
        })
        .collect()
}

fn check_keypoints(spec: &BodyModelSpec, p3d: &KeypointFrame) -> Result<(), FitError> {
    let k = spec.keypoint_count();
    if p3d.positions.len() != k || p3d.valid.len() != k {
        return Err(FitError::DimensionMismatch { expected: k, got: p3d.positions.len() });
    }
    Ok(())
}

fn check_pose(spec: &BodyModelSpec, theta: &PoseParams) -> Result<(), FitError> {
    if theta.joint_rotations.len() != spec.joint_count() {
        return Err(FitError::DimensionMismatch { expected: spec.pose_dim(), got: theta.dim() });
    }
    Ok(())
}

/// `sum_j ||F(theta)_j - R_j||_F^2` over the targets present in this frame.
pub fn e_rot(
    spec: &BodyModelSpec,
    beta: &ShapeParams,
    theta: &PoseParams,
    targets: &RotationTargets,
) -> Result<f64, FitError> {
    check_pose(spec, theta)?;
    let resolved = resolve_targets(spec, targets)?;
    let posed = spec.forward_matrices(&spec.rest_joints(beta), theta);
    Ok(resolved.iter().map(|(j, r)| (posed.global[*j] - r).norm_squared()).sum())
}

/// `sum_i ||Phi(theta, beta)_i - P_i||^2` over valid keypoints (m^2).
pub fn e_joint(
    spec: &BodyModelSpec,
    beta: &ShapeParams,
    theta: &PoseParams,
    p3d: &KeypointFrame,
) -> Result<f64, FitError> {
    check_pose(spec, theta)?;
    check_keypoints(spec, p3d)?;
    let posed = spec.forward_matrices(&spec.rest_joints(beta), theta);
    let kp = spec.regress_keypoints(&posed.positions);
    Ok(kp
        .iter()
        .zip(&p3d.positions)
        .zip(&p3d.valid)
        .filter(|(_, v)| **v)
        .map(|((a, b), _)| (a - b).norm_squared())
        .sum())
}

/// Zero-mean Gaussian pose prior: squared norm of every joint rotation except the root.
pub fn e_prior(theta: &PoseParams) -> f64 {
    theta.joint_rotations.iter().skip(1).map(|r| r.norm_squared()).sum()
}

/// `sum_t ||theta_t - theta_{t-1}||^2` over all pose scalars.
pub fn e_smooth(thetas: &[PoseParams]) -> Result<f64, FitError> {
    if thetas.len() < 2 {
        return Err(FitError::EmptySeries(thetas.len()));
    }
    Ok(thetas
        .windows(2)
        .map(|w| {
            (w[1].root_translation - w[0].root_translation).norm_squared()
                + w[1]
                    .joint_rotations
                    .iter()
                    .zip(&w[0].joint_rotations)
                    .map(|(a, b)| (a - b).norm_squared())
                    .sum::<f64>()
        })
        .sum())
}

pub fn e_reg(beta: &ShapeParams) -> f64 {
    beta.0.norm_squared()
}

/// Per-frame kinematic terms and (optionally) their weighted gradient.
struct FrameEval {
    rot: f64,
    joint: f64,
    grad_pose: Vec<f64>,
    grad_beta: SVector<f64, SHAPE_DIM>,
}

/// The full-sequence objective with targets resolved to joint indices.
pub(crate) struct EnergyModel<'a> {
    spec: &'a BodyModelSpec,
    keypoints: &'a [KeypointFrame],
    targets: Vec<Vec<(usize, Matrix3<f64>)>>,
    weights: FitWeights,
    frame_dim: usize,
}

impl<'a> EnergyModel<'a> {
    pub fn new(
        spec: &'a BodyModelSpec,
        keypoints: &'a [KeypointFrame],
        targets: &[RotationTargets],
        weights: FitWeights,
    ) -> Result<Self, FitError> {
        if keypoints.len() != targets.len() {
            return Err(FitError::LengthMismatch { keypoints: keypoints.len(), targets: targets.len(), poses: None });
        }
        for kf in keypoints {
            check_keypoints(spec, kf)?;
        }
        let targets = targets.iter().map(|t| resolve_targets(spec, t)).collect::<Result<_, _>>()?;
        Ok(Self { spec, keypoints, targets, weights, frame_dim: spec.pose_dim() })
    }

    pub fn frames(&self) -> usize {
        self.keypoints.len()
    }

    pub fn dim(&self) -> usize {
        self.frames() * self.frame_dim + SHAPE_DIM
    }

    pub fn weights(&self) -> &FitWeights {
        &self.weights
    }

    pub fn pack(&self, thetas: &[PoseParams], beta: &ShapeParams) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dim());
        for t in thetas {
            t.write_flat(&mut x);
        }
        x.extend(beta.0.iter());
        x
    }

    pub fn unpack(&self, x: &[f64]) -> (Vec<PoseParams>, ShapeParams) {
        let thetas = x[..self.frames() * self.frame_dim]
            .chunks_exact(self.frame_dim)
            .map(|c| PoseParams::from_flat(c).expect("frame_dim is 3 + 3J"))
            .collect();
        (thetas, self.beta_of(x))
    }

    fn beta_of(&self, x: &[f64]) -> ShapeParams {
        let off = self.frames() * self.frame_dim;
        ShapeParams(SVector::from_column_slice(&x[off..off + SHAPE_DIM]))
    }

    fn frame<'b>(&self, x: &'b [f64], t: usize) -> &'b [f64] {
        &x[t * self.frame_dim..(t + 1) * self.frame_dim]
    }

    fn eval_frame(&self, t: usize, theta_flat: &[f64], rest: &[Vector3<f64>], need_grad: bool) -> FrameEval {
        let spec = self.spec;
        let n = spec.joint_count();
        let theta = PoseParams::from_flat(theta_flat).expect("frame_dim is 3 + 3J");
        let posed = spec.forward_matrices(rest, &theta);
        let kp = spec.regress_keypoints(&posed.positions);
        let obs = &self.keypoints[t];

        let mut joint = 0.0;
        let mut force = vec![Vector3::<f64>::zeros(); n];
        for (i, row) in spec.regressor.iter().enumerate() {
            if !obs.valid[i] {
                continue;
            }
            let r = kp[i] - obs.positions[i];
            joint += r.norm_squared();
            if need_grad {
                let f = r * (2.0 * self.weights.joint);
                for &(j, w) in row {
                    force[j] += f * w;
                }
            }
        }

        let mut rot = 0.0;
        let mut torque = vec![Vector3::<f64>::zeros(); n];
        for (j, target) in &self.targets[t] {
            let g = posed.global[*j];
            rot += (g - target).norm_squared();
            if need_grad {
                // d/dw ||exp([w]x) G - R||^2 = 2 vee(G R^T - R G^T)
                let m = g * target.transpose();
                let s = m - m.transpose();
                torque[*j] += Vector3::new(s[(2, 1)], s[(0, 2)], s[(1, 0)]) * (2.0 * self.weights.rot);
            }
        }

        let mut grad_pose = Vec::new();
        let mut grad_beta = SVector::zeros();
        if need_grad {
            let mut f_sub = force;
            let mut m_sub: Vec<Vector3<f64>> = (0..n).map(|j| posed.positions[j].cross(&f_sub[j])).collect();
            let mut t_sub = torque;
            for j in (1..n).rev() {
                let p = spec.parents[j].expect("validated tree");
                let (f, m, tq) = (f_sub[j], m_sub[j], t_sub[j]);
                f_sub[p] += f;
                m_sub[p] += m;
                t_sub[p] += tq;
            }
            grad_pose = vec![0.0; self.frame_dim];
            grad_pose[..3].copy_from_slice(f_sub[0].as_slice());
            for a in 0..n {
                let world = m_sub[a] - posed.positions[a].cross(&f_sub[a]) + t_sub[a];
                let jr = right_jacobian(&theta.joint_rotations[a]);
                let g = jr.transpose() * (posed.global[a].transpose() * world);
                grad_pose[3 + 3 * a..6 + 3 * a].copy_from_slice(g.as_slice());
            }
            for (b, dirs) in spec.shape_dirs.iter().enumerate() {
                let mut acc = dirs[0].dot(&f_sub[0]);
                for m in 1..n {
                    let p = spec.parents[m].expect("validated tree");
                    acc += (posed.global[p] * (dirs[m] - dirs[p])).dot(&f_sub[m]);
                }
                grad_beta[b] = acc;
            }
        }
        FrameEval { rot, joint, grad_pose, grad_beta }
    }

    /// Weighted residuals of the per-frame terms, `E_rot + E_joint = sum r^2`.
    fn frame_residuals(&self, t: usize, theta_flat: &[f64], rest: &[Vector3<f64>], out: &mut Vec<f64>) {
        out.clear();
        let theta = PoseParams::from_flat(theta_flat).expect("frame_dim is 3 + 3J");
        let posed = self.spec.forward_matrices(rest, &theta);
        let kp = self.spec.regress_keypoints(&posed.positions);
        let obs = &self.keypoints[t];
        let sj = self.weights.joint.sqrt();
        for i in 0..kp.len() {
            if obs.valid[i] {
                out.extend((kp[i] - obs.positions[i]).iter().map(|v| v * sj));
            }
        }
        let sr = self.weights.rot.sqrt();
        for (j, target) in &self.targets[t] {
            out.extend((posed.global[*j] - target).iter().map(|v| v * sr));
        }
    }

    /// Gauss-Newton curvature blocks at `x`: one `(3+3J)^2` block per frame (with the
    /// prior and the smoothness diagonal folded in) and the shape block summed over frames.
    /// Cross-frame and pose-shape couplings are dropped.
    pub fn gauss_newton_blocks(&self, x: &[f64]) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
        const H: f64 = 1e-6;
        let fd = self.frame_dim;
        let beta0 = self.beta_of(x);
        let rest0 = self.spec.rest_joints(&beta0);
        let rest_shifted: Vec<Vec<Vector3<f64>>> = (0..SHAPE_DIM)
            .map(|k| {
                let mut b = beta0;
                b.0[k] += H;
                self.spec.rest_joints(&b)
            })
            .collect();
        let w = &self.weights;
        let frames = self.frames();
        let per_frame: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..frames)
            .into_par_iter()
            .map(|t| {
                let mut theta = self.frame(x, t).to_vec();
                let mut base = Vec::new();
                let mut shifted = Vec::new();
                self.frame_residuals(t, &theta, &rest0, &mut base);
                let m = base.len();
                let mut jac = DMatrix::<f64>::zeros(m, fd + SHAPE_DIM);
                for i in 0..fd {
                    let orig = theta[i];
                    theta[i] = orig + H;
                    self.frame_residuals(t, &theta, &rest0, &mut shifted);
                    theta[i] = orig;
                    for r in 0..m {
                        jac[(r, i)] = (shifted[r] - base[r]) / H;
                    }
                }
                for (k, rest) in rest_shifted.iter().enumerate() {
                    self.frame_residuals(t, &theta, rest, &mut shifted);
                    for r in 0..m {
                        jac[(r, fd + k)] = (shifted[r] - base[r]) / H;
                    }
                }
                let jp = jac.columns(0, fd);
                let jb = jac.columns(fd, SHAPE_DIM);
                let mut block = jp.transpose() * jp * 2.0;
                let neighbours = (t > 0) as usize + (t + 1 < frames) as usize;
                for i in 0..fd {
                    block[(i, i)] += 2.0 * w.smooth * neighbours as f64 + if i >= 6 { 2.0 * w.prior } else { 0.0 };
                }
                (block, jb.transpose() * jb * 2.0)
            })
            .collect();
        let mut shape = DMatrix::<f64>::identity(SHAPE_DIM, SHAPE_DIM) * (2.0 * w.reg);
        let mut blocks = Vec::with_capacity(frames);
        for (b, s) in per_frame {
            shape += s;
            blocks.push(b);
        }
        (blocks, shape)
    }

    fn frames_eval(&self, x: &[f64], need_grad: bool) -> Vec<FrameEval> {
        let rest = self.spec.rest_joints(&self.beta_of(x));
        // collected in frame order so the reduction below is thread-count independent
        (0..self.frames()).into_par_iter().map(|t| self.eval_frame(t, self.frame(x, t), &rest, need_grad)).collect()
    }

    fn global_terms(&self, x: &[f64]) -> (f64, f64, f64) {
        let mut prior = 0.0;
        let mut smooth = 0.0;
        for t in 0..self.frames() {
            let f = self.frame(x, t);
            prior += f[6..].iter().map(|v| v * v).sum::<f64>();
            if t > 0 {
                let prev = self.frame(x, t - 1);
                smooth += f.iter().zip(prev).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            }
        }
        let reg = self.beta_of(x).0.norm_squared();
        (prior, smooth, reg)
    }

    pub fn breakdown(&self, x: &[f64]) -> EnergyBreakdown {
        let evals = self.frames_eval(x, false);
        let (prior, smooth, reg) = self.global_terms(x);
        let mut b = EnergyBreakdown { prior, smooth, reg, ..Default::default() };
        for e in &evals {
            b.rot += e.rot;
            b.joint += e.joint;
        }
        b.finish(&self.weights)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.breakdown(x).total
    }

    pub fn value_and_gradient(&self, x: &[f64]) -> (EnergyBreakdown, Vec<f64>) {
        let evals = self.frames_eval(x, true);
        let (prior, smooth, reg) = self.global_terms(x);
        let mut b = EnergyBreakdown { prior, smooth, reg, ..Default::default() };
        let w = &self.weights;
        let fd = self.frame_dim;
        let mut g = vec![0.0; self.dim()];
        let mut gb = SVector::<f64, SHAPE_DIM>::zeros();
        for (t, e) in evals.iter().enumerate() {
            b.rot += e.rot;
            b.joint += e.joint;
            g[t * fd..(t + 1) * fd].copy_from_slice(&e.grad_pose);
            gb += e.grad_beta;
        }
        for t in 0..self.frames() {
            let cur = self.frame(x, t);
            for i in 6..fd {
                g[t * fd + i] += 2.0 * w.prior * cur[i];
            }
            if t > 0 {
                let prev = self.frame(x, t - 1);
                for i in 0..fd {
                    let d = 2.0 * w.smooth * (cur[i] - prev[i]);
                    g[t * fd + i] += d;
                    g[(t - 1) * fd + i] -= d;
                }
            }
        }
        let beta = self.beta_of(x);
        let off = self.frames() * fd;
        for k in 0..SHAPE_DIM {
            g[off + k] = gb[k] + 2.0 * w.reg * beta.0[k];
        }
        (b.finish(w), g)
    }
}

fn check_lengths(thetas: &[PoseParams], p3d: &[KeypointFrame], targets: &[RotationTargets]) -> Result<(), FitError> {
    if thetas.len() != p3d.len() || thetas.len() != targets.len() {
        return Err(FitError::LengthMismatch {
            keypoints: p3d.len(),
            targets: targets.len(),
            poses: Some(thetas.len()),
        });
    }
    Ok(())
}

/// Weighted sum of all five terms over a sequence, with the per-term breakdown.
pub fn total_energy(
    spec: &BodyModelSpec,
    thetas: &[PoseParams],
    beta: &ShapeParams,
    p3d: &[KeypointFrame],
    targets: &[RotationTargets],
    weights: &FitWeights,
) -> Result<EnergyBreakdown, FitError> {
    check_lengths(thetas, p3d, targets)?;
    for t in thetas {
        check_pose(spec, t)?;
    }
    let model = EnergyModel::new(spec, p3d, targets, *weights)?;
    Ok(model.breakdown(&model.pack(thetas, beta)))
}

/// Analytic gradient of [`total_energy`] with respect to every frame's pose and the shared shape.
pub fn energy_gradient(
    spec: &BodyModelSpec,
    thetas: &[PoseParams],
    beta: &ShapeParams,
    p3d: &[KeypointFrame],
    targets: &[RotationTargets],
    weights: &FitWeights,
) -> Result<EnergyGradient, FitError> {
    check_lengths(thetas, p3d, targets)?;
    for t in thetas {
        check_pose(spec, t)?;
    }
    let model = EnergyModel::new(spec, p3d, targets, *weights)?;
    let (_, g) = model.value_and_gradient(&model.pack(thetas, beta));
    let fd = spec.pose_dim();
    let frames = g[..thetas.len() * fd].chunks_exact(fd).map(<[f64]>::to_vec).collect();
    let beta = SVector::from_column_slice(&g[thetas.len() * fd..]);
    Ok(EnergyGradient { frames, beta })
}
