//! Pose-sequence metrics with the column names of the usual benchmark tables.
//! Positions are in meters in, centimeters out; rotations are reported in degrees.

use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::body_model::{BodyModelSpec, PoseParams, ShapeParams};
use crate::geometry::{geodesic_angle, umeyama, Rotation3};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("frame {0} is degenerate for Procrustes alignment")]
    DegenerateFrame(usize),
    #[error("need at least {needed} frames, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("unknown joint {0:?} in metric subset")]
    UnknownJoint(String),
}

fn check_shapes<T, U>(pred: &[Vec<T>], gt: &[Vec<U>]) -> Result<(), MetricError> {
    if pred.len() != gt.len() {
        return Err(MetricError::ShapeMismatch(format!("{} vs {} frames", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(MetricError::TooShort { needed: 1, got: 0 });
    }
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.len() != g.len() || p.is_empty() {
            return Err(MetricError::ShapeMismatch(format!("frame {i}: {} vs {} joints", p.len(), g.len())));
        }
    }
    Ok(())
}

fn mean_distance_cm<'a>(pairs: impl Iterator<Item = (&'a Vector3<f64>, &'a Vector3<f64>)>) -> f64 {
    let (sum, n) = pairs.fold((0.0, 0usize), |(s, n), (a, b)| (s + (a - b).norm(), n + 1));
    100.0 * sum / n as f64
}

/// Mean per-joint position error, cm.
pub fn mpjpe(pred: &[Vec<Vector3<f64>>], gt: &[Vec<Vector3<f64>>]) -> Result<f64, MetricError> {
    check_shapes(pred, gt)?;
    Ok(mean_distance_cm(pred.iter().zip(gt).flat_map(|(p, g)| p.iter().zip(g))))
}

/// MPJPE after a per-frame similarity alignment of `pred` onto `gt`, cm.
pub fn pa_mpjpe(pred: &[Vec<Vector3<f64>>], gt: &[Vec<Vector3<f64>>]) -> Result<f64, MetricError> {
    check_shapes(pred, gt)?;
    let mut aligned = Vec::with_capacity(pred.len());
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        let sim = umeyama(p, g, true).ok_or(MetricError::DegenerateFrame(i))?;
        if !(sim.scale.is_finite() && sim.scale > 0.0) {
            return Err(MetricError::DegenerateFrame(i));
        }
        aligned.push(p.iter().map(|x| sim.apply(x)).collect::<Vec<_>>());
    }
    Ok(mean_distance_cm(aligned.iter().zip(gt).flat_map(|(p, g)| p.iter().zip(g))))
}

/// Mean geodesic angle between local joint rotations, degrees.
pub fn mpjre(pred: &[Vec<Rotation3>], gt: &[Vec<Rotation3>]) -> Result<f64, MetricError> {
    check_shapes(pred, gt)?;
    let (sum, n) = pred
        .iter()
        .zip(gt)
        .flat_map(|(p, g)| p.iter().zip(g))
        .fold((0.0, 0usize), |(s, n), (a, b)| (s + geodesic_angle(a, b), n + 1));
    Ok((sum / n as f64).to_degrees())
}

/// MPJPE restricted to the joints in `subset`, cm.
pub fn subset_pe(pred: &[Vec<Vector3<f64>>], gt: &[Vec<Vector3<f64>>], subset: &[usize]) -> Result<f64, MetricError> {
    check_shapes(pred, gt)?;
    if subset.is_empty() {
        return Err(MetricError::ShapeMismatch("empty joint subset".into()));
    }
    let joints = pred[0].len();
    if let Some(j) = subset.iter().find(|&&j| j >= joints) {
        return Err(MetricError::ShapeMismatch(format!("subset joint {j} out of range for {joints} joints")));
    }
    Ok(mean_distance_cm(pred.iter().zip(gt).flat_map(|(p, g)| subset.iter().map(move |&j| (&p[j], &g[j])))))
}

/// Mean magnitude of the third-order finite difference times `rate^3`, in 10^2 m/s^3.
pub fn jitter(pred: &[Vec<Vector3<f64>>], rate_hz: f64) -> Result<f64, MetricError> {
    if pred.len() < 4 {
        return Err(MetricError::TooShort { needed: 4, got: pred.len() });
    }
    let joints = pred[0].len();
    if pred.iter().any(|f| f.len() != joints) || joints == 0 {
        return Err(MetricError::ShapeMismatch("frames have different joint counts".into()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for t in 1..pred.len() - 2 {
        for j in 0..joints {
            let d3 = pred[t + 2][j] - pred[t + 1][j] * 3.0 + pred[t][j] * 3.0 - pred[t - 1][j];
            sum += d3.norm();
            n += 1;
        }
    }
    Ok(sum / n as f64 * rate_hz.powi(3) / 100.0)
}

/// Joint indices for the given names.
pub fn joint_indices(spec: &BodyModelSpec, names: &[String]) -> Result<Vec<usize>, MetricError> {
    names.iter().map(|n| spec.joint(n).map_err(|_| MetricError::UnknownJoint(n.clone()))).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(rename = "MPJRE")]
    pub mpjre: f64,
    #[serde(rename = "MPJPE")]
    pub mpjpe: f64,
    #[serde(rename = "PA-MPJPE")]
    pub pa_mpjpe: f64,
    #[serde(rename = "UpperPE")]
    pub upper_pe: f64,
    #[serde(rename = "LowerPE")]
    pub lower_pe: f64,
    #[serde(rename = "RootPE")]
    pub root_pe: f64,
    #[serde(rename = "Jitter")]
    pub jitter: f64,
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>8} {:>8} {:>9} {:>8} {:>8} {:>8} {:>8}",
            "MPJRE", "MPJPE", "PA-MPJPE", "UpperPE", "LowerPE", "RootPE", "Jitter"
        )?;
        writeln!(
            f,
            "{:>8.3} {:>8.3} {:>9.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
            self.mpjre, self.mpjpe, self.pa_mpjpe, self.upper_pe, self.lower_pe, self.root_pe, self.jitter
        )
    }
}

/// Joint subsets used by [`evaluate`]; defaults come from the body model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSubsets {
    pub upper: Vec<String>,
    pub lower: Vec<String>,
    pub root: Vec<String>,
}

impl MetricSubsets {
    pub fn from_model(spec: &BodyModelSpec) -> Self {
        let names = |idx: &[usize]| idx.iter().map(|&j| spec.joint_names[j].clone()).collect();
        Self {
            upper: names(&spec.upper_joints),
            lower: names(&spec.lower_joints),
            root: vec![spec.joint_names[spec.named_joints["pelvis"]].clone()],
        }
    }
}

/// Joint positions and local rotations of a posed sequence.
pub fn posed_sequence(
    spec: &BodyModelSpec,
    beta: &ShapeParams,
    poses: &[PoseParams],
) -> (Vec<Vec<Vector3<f64>>>, Vec<Vec<Rotation3>>) {
    let rest = spec.rest_joints(beta);
    poses.iter().map(|p| (spec.forward_matrices(&rest, p).positions, p.local_rotations())).unzip()
}

/// Full report comparing a fitted sequence against ground truth.
pub fn evaluate(
    spec: &BodyModelSpec,
    pred: (&ShapeParams, &[PoseParams]),
    gt: (&ShapeParams, &[PoseParams]),
    rate_hz: f64,
    subsets: &MetricSubsets,
) -> Result<MetricReport, MetricError> {
    let (pp, pr) = posed_sequence(spec, pred.0, pred.1);
    let (gp, gr) = posed_sequence(spec, gt.0, gt.1);
    Ok(MetricReport {
        mpjre: mpjre(&pr, &gr)?,
        mpjpe: mpjpe(&pp, &gp)?,
        pa_mpjpe: pa_mpjpe(&pp, &gp)?,
        upper_pe: subset_pe(&pp, &gp, &joint_indices(spec, &subsets.upper)?)?,
        lower_pe: subset_pe(&pp, &gp, &joint_indices(spec, &subsets.lower)?)?,
        root_pe: subset_pe(&pp, &gp, &joint_indices(spec, &subsets.root)?)?,
        jitter: jitter(&pp, rate_hz)?,
    })
}
