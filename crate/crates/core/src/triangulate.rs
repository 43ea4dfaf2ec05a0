//! Multi-view keypoint triangulation and sequence-level refinement.

use std::collections::BTreeMap;

use nalgebra::{Matrix2x3, Matrix3, Matrix4, RowVector4, SymmetricEigen, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraView, MIN_DEPTH};

/// One detected 2D keypoint; confidence 0 means "not detected".
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeypointObservation {
    pub pixel: Vector2<f64>,
    pub confidence: f64,
}

impl KeypointObservation {
    pub fn missing() -> Self {
        Self { pixel: Vector2::zeros(), confidence: 0.0 }
    }
}

/// Detections of one frame, keyed by camera id.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct FrameObservations {
    pub timestamp: f64,
    pub views: BTreeMap<String, Vec<KeypointObservation>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TriangulationOptions {
    pub min_views: usize,
    /// Observations at or below this confidence are ignored.
    pub confidence_threshold: f64,
}

impl Default for TriangulationOptions {
    fn default() -> Self {
        Self { min_views: 2, confidence_threshold: 0.3 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriangulatedFrame {
    pub positions: Vec<Vector3<f64>>,
    /// Unweighted reprojection RMS in pixels over the views used; NaN when invalid.
    pub reprojection_rms_px: Vec<f64>,
    pub valid: Vec<bool>,
}

/// Per-frame 3D keypoints with validity flags and the skeleton's bone list.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence3D {
    pub timestamps: Vec<f64>,
    pub positions: Vec<Vec<Vector3<f64>>>,
    pub valid: Vec<Vec<bool>>,
    pub bones: Vec<(usize, usize)>,
}

impl SkeletonSequence3D {
    pub fn frame_count(&self) -> usize {
        self.positions.len()
    }

    pub fn keypoint_count(&self) -> usize {
        self.positions.first().map_or(0, Vec::len)
    }

    /// Median length of every bone over frames where both ends are valid.
    pub fn median_bone_lengths(&self) -> Vec<Option<f64>> {
        self.bones
            .iter()
            .map(|&(i, j)| {
                let mut lengths: Vec<f64> = self
                    .positions
                    .iter()
                    .zip(&self.valid)
                    .filter(|(_, v)| v[i] && v[j])
                    .map(|(p, _)| (p[i] - p[j]).norm())
                    .collect();
                median(&mut lengths)
            })
            .collect()
    }

    /// Standard deviation of each bone's length over frames where both ends are valid.
    pub fn bone_length_std(&self) -> Vec<f64> {
        self.bones
            .iter()
            .map(|&(i, j)| {
                let lengths: Vec<f64> = self
                    .positions
                    .iter()
                    .zip(&self.valid)
                    .filter(|(_, v)| v[i] && v[j])
                    .map(|(p, _)| (p[i] - p[j]).norm())
                    .collect();
                if lengths.len() < 2 {
                    return 0.0;
                }
                let n = lengths.len() as f64;
                let mean = lengths.iter().sum::<f64>() / n;
                (lengths.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n).sqrt()
            })
            .collect()
    }

    pub fn from_frames(timestamps: Vec<f64>, frames: Vec<TriangulatedFrame>, bones: Vec<(usize, usize)>) -> Self {
        let (positions, valid) = frames.into_iter().map(|f| (f.positions, f.valid)).unzip();
        Self { timestamps, positions, valid, bones }
    }
}

pub(crate) fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) })
}

struct View<'a> {
    camera: &'a CameraView,
    pixel: Vector2<f64>,
    weight: f64,
}

fn dlt(views: &[View]) -> Option<Vector3<f64>> {
    let mut ata = Matrix4::<f64>::zeros();
    for v in views {
        let k = &v.camera.intrinsics;
        let r = v.camera.world_to_camera.rotation.matrix();
        let t = v.camera.world_to_camera.translation;
        let row = |i: usize| RowVector4::new(r[(i, 0)], r[(i, 1)], r[(i, 2)], t[i]);
        // normalized image coordinates keep the system well conditioned
        let x = (v.pixel.x - k.cx) / k.fx;
        let y = (v.pixel.y - k.cy) / k.fy;
        let a0 = (row(2) * x - row(0)) * v.weight;
        let a1 = (row(2) * y - row(1)) * v.weight;
        ata += a0.transpose() * a0 + a1.transpose() * a1;
    }
    let eig = SymmetricEigen::new(ata);
    let (idx, _) = eig.eigenvalues.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1))?;
    let h = eig.eigenvectors.column(idx);
    if h[3].abs() < 1e-12 {
        return None;
    }
    Some(Vector3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]))
}

fn weighted_cost(views: &[View], x: &Vector3<f64>) -> Option<f64> {
    let mut cost = 0.0;
    for v in views {
        let (px, _) = v.camera.project(x).ok()?;
        cost += v.weight * (px - v.pixel).norm_squared();
    }
    Some(cost)
}

/// One confidence-weighted Gauss-Newton step on the reprojection error,
/// kept only if it lowers the cost.
fn gauss_newton_step(views: &[View], x: &Vector3<f64>) -> Vector3<f64> {
    let mut jtj = Matrix3::<f64>::zeros();
    let mut jtr = Vector3::<f64>::zeros();
    for v in views {
        let k = &v.camera.intrinsics;
        let rot = v.camera.world_to_camera.rotation.matrix();
        let pc = v.camera.world_to_camera.transform_point(x);
        if pc.z <= MIN_DEPTH {
            return *x;
        }
        let iz = 1.0 / pc.z;
        let dproj = Matrix2x3::new(k.fx * iz, 0.0, -k.fx * pc.x * iz * iz, 0.0, k.fy * iz, -k.fy * pc.y * iz * iz);
        let j = dproj * rot;
        let r = Vector2::new(k.fx * pc.x * iz + k.cx, k.fy * pc.y * iz + k.cy) - v.pixel;
        jtj += j.transpose() * j * v.weight;
        jtr += j.transpose() * r * v.weight;
    }
    let Some(delta) = jtj.cholesky().map(|c| c.solve(&-jtr)) else {
        return *x;
    };
    let candidate = x + delta;
    match (weighted_cost(views, x), weighted_cost(views, &candidate)) {
        (Some(before), Some(after)) if after <= before => candidate,
        _ => *x,
    }
}

/// Triangulates every keypoint seen by at least `min_views` cameras above the
/// confidence threshold. Observations from unknown camera ids are ignored.
pub fn triangulate_frame(
    obs: &FrameObservations,
    cameras: &[CameraView],
    opts: &TriangulationOptions,
) -> TriangulatedFrame {
    let keypoints = obs.views.values().map(Vec::len).max().unwrap_or(0);
    let by_id: BTreeMap<&str, &CameraView> = cameras.iter().map(|c| (c.id.as_str(), c)).collect();
    let mut out = TriangulatedFrame {
        positions: vec![Vector3::zeros(); keypoints],
        reprojection_rms_px: vec![f64::NAN; keypoints],
        valid: vec![false; keypoints],
    };
    let mut views = Vec::new();
    for k in 0..keypoints {
        views.clear();
        for (id, kps) in &obs.views {
            let Some(camera) = by_id.get(id.as_str()) else { continue };
            let Some(kp) = kps.get(k) else { continue };
            if kp.confidence > opts.confidence_threshold && kp.pixel.iter().all(|v| v.is_finite()) {
                views.push(View { camera, pixel: kp.pixel, weight: kp.confidence });
            }
        }
        if views.len() < opts.min_views.max(2) {
            continue;
        }
        let Some(x0) = dlt(&views) else { continue };
        let x = gauss_newton_step(&views, &x0);
        let mut sq = 0.0;
        let mut in_front = true;
        for v in &views {
            match v.camera.project(&x) {
                Ok((px, _)) => sq += (px - v.pixel).norm_squared(),
                Err(_) => in_front = false,
            }
        }
        if !in_front || !x.iter().all(|v| v.is_finite()) {
            continue;
        }
        out.positions[k] = x;
        out.reprojection_rms_px[k] = (sq / views.len() as f64).sqrt();
        out.valid[k] = true;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineOptions {
    pub w_smooth: f64,
    pub w_bone: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self { w_smooth: 10.0, w_bone: 1.0, max_iters: 50, rel_tol: 1e-6 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RefineError {
    #[error("sequence needs at least 3 frames, has {0}")]
    TooShort(usize),
    #[error("refinement did not converge in {iterations} iterations")]
    NotConverged { iterations: usize, last: Box<SkeletonSequence3D> },
}

/// Refined sequence plus the objective value after every accepted step.
#[derive(Clone, Debug)]
pub struct RefineOutput {
    pub sequence: SkeletonSequence3D,
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

struct RefineProblem<'a> {
    seq: &'a SkeletonSequence3D,
    frames: usize,
    keypoints: usize,
    w_smooth: f64,
    w_bone: f64,
    /// Keypoints that are valid somewhere; the rest are left untouched.
    active: Vec<bool>,
    bones: Vec<(usize, usize, f64)>,
}

impl RefineProblem<'_> {
    fn idx(&self, t: usize, k: usize) -> usize {
        3 * (t * self.keypoints + k)
    }

    fn point(&self, x: &[f64], t: usize, k: usize) -> Vector3<f64> {
        let i = self.idx(t, k);
        Vector3::new(x[i], x[i + 1], x[i + 2])
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let mut data = 0.0;
        for t in 0..self.frames {
            for k in 0..self.keypoints {
                if self.seq.valid[t][k] {
                    data += (self.point(x, t, k) - self.seq.positions[t][k]).norm_squared();
                }
            }
        }
        let mut smooth = 0.0;
        for t in 1..self.frames - 1 {
            for k in (0..self.keypoints).filter(|&k| self.active[k]) {
                let acc = self.point(x, t - 1, k) - 2.0 * self.point(x, t, k) + self.point(x, t + 1, k);
                smooth += acc.norm_squared();
            }
        }
        let mut bone = 0.0;
        for t in 0..self.frames {
            for &(i, j, l) in &self.bones {
                let d = (self.point(x, t, i) - self.point(x, t, j)).norm() - l;
                bone += d * d;
            }
        }
        data + self.w_smooth * smooth + self.w_bone * bone
    }

    /// Gradient `J^T r` (halved objective convention) and the bone unit
    /// directions used by the Gauss-Newton product.
    fn gradient(&self, x: &[f64]) -> (Vec<f64>, Vec<Vector3<f64>>) {
        let mut g = vec![0.0; x.len()];
        let add = |g: &mut Vec<f64>, t: usize, k: usize, v: Vector3<f64>| {
            let i = 3 * (t * self.keypoints + k);
            g[i] += v.x;
            g[i + 1] += v.y;
            g[i + 2] += v.z;
        };
        for t in 0..self.frames {
            for k in 0..self.keypoints {
                if self.seq.valid[t][k] {
                    add(&mut g, t, k, self.point(x, t, k) - self.seq.positions[t][k]);
                }
            }
        }
        for t in 1..self.frames - 1 {
            for k in (0..self.keypoints).filter(|&k| self.active[k]) {
                let acc =
                    (self.point(x, t - 1, k) - 2.0 * self.point(x, t, k) + self.point(x, t + 1, k)) * self.w_smooth;
                add(&mut g, t - 1, k, acc);
                add(&mut g, t, k, -2.0 * acc);
                add(&mut g, t + 1, k, acc);
            }
        }
        let mut dirs = Vec::with_capacity(self.frames * self.bones.len());
        for t in 0..self.frames {
            for &(i, j, l) in &self.bones {
                let d = self.point(x, t, i) - self.point(x, t, j);
                let n = d.norm();
                let u = if n > 1e-12 { d / n } else { Vector3::zeros() };
                let r = (n - l) * self.w_bone;
                add(&mut g, t, i, u * r);
                add(&mut g, t, j, -u * r);
                dirs.push(u);
            }
        }
        (g, dirs)
    }

    /// `(J^T J + damping) v` with the Gauss-Newton Jacobian.
    fn normal_product(&self, dirs: &[Vector3<f64>], damping: f64, v: &[f64], out: &mut [f64]) {
        for (o, vi) in out.iter_mut().zip(v) {
            *o = damping * vi;
        }
        let get = |t: usize, k: usize| -> Vector3<f64> {
            let i = 3 * (t * self.keypoints + k);
            Vector3::new(v[i], v[i + 1], v[i + 2])
        };
        let mut add = |t: usize, k: usize, w: Vector3<f64>| {
            let i = 3 * (t * self.keypoints + k);
            out[i] += w.x;
            out[i + 1] += w.y;
            out[i + 2] += w.z;
        };
        for t in 0..self.frames {
            for k in 0..self.keypoints {
                if self.seq.valid[t][k] {
                    add(t, k, get(t, k));
                }
            }
        }
        for t in 1..self.frames - 1 {
            for k in (0..self.keypoints).filter(|&k| self.active[k]) {
                let acc = (get(t - 1, k) - 2.0 * get(t, k) + get(t + 1, k)) * self.w_smooth;
                add(t - 1, k, acc);
                add(t, k, -2.0 * acc);
                add(t + 1, k, acc);
            }
        }
        for t in 0..self.frames {
            for (b, &(i, j, _)) in self.bones.iter().enumerate() {
                let u = dirs[t * self.bones.len() + b];
                let s = u.dot(&(get(t, i) - get(t, j))) * self.w_bone;
                add(t, i, u * s);
                add(t, j, -u * s);
            }
        }
    }
}

fn conjugate_gradient(
    apply: impl Fn(&[f64], &mut [f64]),
    rhs: &[f64],
    mask: &[bool],
    max_iters: usize,
    tol: f64,
) -> Vec<f64> {
    let n = rhs.len();
    let mut x = vec![0.0; n];
    let mut r: Vec<f64> = rhs.iter().zip(mask).map(|(v, m)| if *m { *v } else { 0.0 }).collect();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    let stop = tol * tol * rr;
    for _ in 0..max_iters {
        if rr <= stop || rr == 0.0 {
            break;
        }
        apply(&p, &mut ap);
        for (a, m) in ap.iter_mut().zip(mask) {
            if !m {
                *a = 0.0;
            }
        }
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            break;
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    x
}

/// Fills invalid keypoints by interpolating between the nearest valid frames.
fn initial_guess(seq: &SkeletonSequence3D) -> Vec<Vec<Vector3<f64>>> {
    let mut out = seq.positions.clone();
    let frames = seq.frame_count();
    for k in 0..seq.keypoint_count() {
        let valid_frames: Vec<usize> = (0..frames).filter(|&t| seq.valid[t][k]).collect();
        if valid_frames.is_empty() {
            continue;
        }
        for t in 0..frames {
            if seq.valid[t][k] {
                continue;
            }
            let after = valid_frames.partition_point(|&v| v < t);
            out[t][k] = match (after.checked_sub(1).map(|i| valid_frames[i]), valid_frames.get(after)) {
                (Some(a), Some(&b)) => {
                    let s = (t - a) as f64 / (b - a) as f64;
                    seq.positions[a][k] * (1.0 - s) + seq.positions[b][k] * s
                }
                (Some(a), None) => seq.positions[a][k],
                (None, Some(&b)) => seq.positions[b][k],
                (None, None) => unreachable!(),
            };
        }
    }
    out
}

/// Smoothness- and bone-length-regularized refinement with the objective
/// history; see [`refine_sequence`].
pub fn refine_sequence_with_log(seq: &SkeletonSequence3D, opts: &RefineOptions) -> Result<RefineOutput, RefineError> {
    let frames = seq.frame_count();
    if frames < 3 {
        return Err(RefineError::TooShort(frames));
    }
    if opts.w_smooth == 0.0 && opts.w_bone == 0.0 {
        return Ok(RefineOutput { sequence: seq.clone(), objective_history: Vec::new(), iterations: 0 });
    }
    let keypoints = seq.keypoint_count();
    let active: Vec<bool> = (0..keypoints).map(|k| (0..frames).any(|t| seq.valid[t][k])).collect();
    let bones: Vec<(usize, usize, f64)> = seq
        .bones
        .iter()
        .zip(seq.median_bone_lengths())
        .filter_map(|(&(i, j), l)| Some((i, j, l?)))
        .filter(|&(i, j, _)| active[i] && active[j])
        .collect();
    let problem = RefineProblem { seq, frames, keypoints, w_smooth: opts.w_smooth, w_bone: opts.w_bone, active, bones };

    let mut x: Vec<f64> = initial_guess(seq).iter().flatten().flat_map(|p| [p.x, p.y, p.z]).collect();
    let mask: Vec<bool> = (0..x.len()).map(|i| problem.active[(i / 3) % keypoints]).collect();
    let mut f = problem.objective(&x);
    let mut history = vec![f];
    let mut damping = 1e-6;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        let (g, dirs) = problem.gradient(&x);
        let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
        let step =
            conjugate_gradient(|v, out| problem.normal_product(&dirs, damping, v, out), &rhs, &mask, 2000, 1e-10);
        let candidate: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + b).collect();
        let fc = problem.objective(&candidate);
        if fc <= f {
            let rel = (f - fc) / f.max(f64::MIN_POSITIVE);
            x = candidate;
            f = fc;
            history.push(f);
            damping = (damping / 3.0).max(1e-12);
            if rel < opts.rel_tol || f < 1e-24 {
                converged = true;
                break;
            }
        } else {
            damping *= 10.0;
            if damping > 1e8 {
                // no descent possible along the model: treat as a stationary point
                converged = true;
                break;
            }
        }
    }

    let mut refined = seq.clone();
    for t in 0..frames {
        for k in (0..keypoints).filter(|&k| problem.active[k]) {
            refined.positions[t][k] = problem.point(&x, t, k);
        }
    }
    if !converged {
        return Err(RefineError::NotConverged { iterations, last: Box::new(refined) });
    }
    Ok(RefineOutput { sequence: refined, objective_history: history, iterations })
}

/// Minimizes data fidelity plus `w_smooth` times squared accelerations plus
/// `w_bone` times squared deviations from each bone's median length.
///
/// Validity flags are carried over unchanged: keypoints filled in from
/// neighbors stay marked invalid.
pub fn refine_sequence(
    seq: &SkeletonSequence3D,
    w_smooth: f64,
    w_bone: f64,
) -> Result<SkeletonSequence3D, RefineError> {
    let opts = RefineOptions { w_smooth, w_bone, ..RefineOptions::default() };
    refine_sequence_with_log(seq, &opts).map(|o| o.sequence)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Intrinsics, RigidTransform, Rotation3};

    fn intr() -> Intrinsics {
        Intrinsics { fx: 900.0, fy: 900.0, cx: 960.0, cy: 540.0, width: 1920, height: 1080 }
    }

    fn observe(cams: &[CameraView], points: &[Vector3<f64>]) -> FrameObservations {
        let mut obs = FrameObservations::default();
        for c in cams {
            let kps = points
                .iter()
                .map(|p| KeypointObservation { pixel: c.project(p).unwrap().0, confidence: 1.0 })
                .collect();
            obs.views.insert(c.id.clone(), kps);
        }
        obs
    }

    fn two_orthogonal() -> Vec<CameraView> {
        let target = Vector3::new(0.0, 0.0, 1.0);
        vec![
            CameraView::look_at("a", intr(), &Vector3::new(3.0, 0.0, 1.0), &target, &Vector3::z()).unwrap(),
            CameraView::look_at("b", intr(), &Vector3::new(0.0, 3.0, 1.0), &target, &Vector3::z()).unwrap(),
        ]
    }

    #[test]
    fn noiseless_two_view_recovery() {
        let cams = two_orthogonal();
        let p = Vector3::new(0.12, -0.3, 1.25);
        let out = triangulate_frame(&observe(&cams, &[p]), &cams, &TriangulationOptions::default());
        assert!(out.valid[0]);
        assert!((out.positions[0] - p).norm() < 1e-6);
        assert!(out.reprojection_rms_px[0] < 1e-6);
    }

    #[test]
    fn single_view_is_invalid() {
        let cams = two_orthogonal();
        let p = Vector3::new(0.12, -0.3, 1.25);
        let mut obs = observe(&cams, &[p]);
        obs.views.get_mut("b").unwrap()[0].confidence = 0.0;
        let out = triangulate_frame(&obs, &cams, &TriangulationOptions::default());
        assert!(!out.valid[0]);
    }

    #[test]
    fn low_confidence_counts_as_missing() {
        let cams = two_orthogonal();
        let mut obs = observe(&cams, &[Vector3::new(0.0, 0.0, 1.0)]);
        obs.views.get_mut("a").unwrap()[0].confidence = 0.3;
        assert!(!triangulate_frame(&obs, &cams, &TriangulationOptions::default()).valid[0]);
    }

    #[test]
    fn rigid_motion_equivariance() {
        let cams = two_orthogonal();
        let p = Vector3::new(-0.2, 0.1, 0.7);
        let motion =
            RigidTransform::new(Rotation3::about_axis(&Vector3::new(0.3, 1.0, 0.2), 0.9), Vector3::new(1.0, -2.0, 0.5));
        let moved: Vec<CameraView> = cams
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.world_to_camera = c.world_to_camera * motion.inverse();
                c
            })
            .collect();
        let q = motion.transform_point(&p);
        let a = triangulate_frame(&observe(&cams, &[p]), &cams, &TriangulationOptions::default());
        let b = triangulate_frame(&observe(&moved, &[q]), &moved, &TriangulationOptions::default());
        assert!((motion.transform_point(&a.positions[0]) - b.positions[0]).norm() < 1e-6);
    }

    fn line_sequence(frames: usize) -> SkeletonSequence3D {
        let positions = (0..frames)
            .map(|t| vec![Vector3::new(t as f64 * 0.01, 0.0, 1.0), Vector3::new(t as f64 * 0.01, 0.3, 1.0)])
            .collect();
        SkeletonSequence3D {
            timestamps: (0..frames).map(|t| t as f64 / 30.0).collect(),
            positions,
            valid: vec![vec![true, true]; frames],
            bones: vec![(0, 1)],
        }
    }

    #[test]
    fn zero_weights_are_a_no_op() {
        let seq = line_sequence(10);
        assert_eq!(refine_sequence(&seq, 0.0, 0.0).unwrap(), seq);
    }

    #[test]
    fn too_short_rejected() {
        assert!(matches!(refine_sequence(&line_sequence(2), 1.0, 1.0), Err(RefineError::TooShort(2))));
    }

    #[test]
    fn invalid_point_is_filled_and_stays_invalid() {
        let mut seq = line_sequence(9);
        seq.valid[4][1] = false;
        seq.positions[4][1] = Vector3::new(50.0, 50.0, 50.0);
        let out = refine_sequence(&seq, 10.0, 1.0).unwrap();
        assert!(!out.valid[4][1]);
        assert!((out.positions[4][1] - Vector3::new(0.04, 0.3, 1.0)).norm() < 1e-3);
    }

    #[test]
    fn jittered_frame_moves_towards_neighbors() {
        let mut seq = line_sequence(11);
        for f in seq.positions.iter_mut() {
            f[0].x = 0.0;
            f[1].x = 0.0;
        }
        seq.positions[5][0] += Vector3::new(0.0, 0.0, 0.05);
        let out = refine_sequence_with_log(&seq, &RefineOptions::default()).unwrap();
        assert!(out.sequence.positions[5][0].z < seq.positions[5][0].z);
        for w in out.objective_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        let accel = |s: &SkeletonSequence3D| -> f64 {
            (1..s.frame_count() - 1)
                .map(|t| (s.positions[t - 1][0] - 2.0 * s.positions[t][0] + s.positions[t + 1][0]).norm_squared())
                .sum()
        };
        assert!(accel(&out.sequence) < accel(&seq));
    }
}
