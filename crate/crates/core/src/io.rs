//! On-disk formats. Streams are line-delimited JSON: a header line
//! `{"format": "mocap-fuse/<kind>", "version": N, ...}` followed by one record per
//! line. Single-object files carry the same two tags at the top level.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Vector2, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::align::MountCalibration;
use crate::body_model::{PoseParams, ShapeParams};
use crate::fitting::{EnergyBreakdown, FitResult};
use crate::geometry::{CameraView, Intrinsics, RigidTransform, Rotation3};
use crate::sync::TimedSeries;
use crate::triangulate::{FrameObservations, KeypointObservation, SkeletonSequence3D};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: expected format {expected:?} version {FORMAT_VERSION}, found {found:?}")]
    Format { path: PathBuf, expected: String, found: String },
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    fn parse(path: &Path, line: usize, msg: impl ToString) -> Self {
        Self::Parse { path: path.to_path_buf(), line, msg: msg.to_string() }
    }
}

fn tag(kind: &str) -> String {
    format!("mocap-fuse/{kind}")
}

#[derive(Serialize, Deserialize)]
struct Tagged<M> {
    format: String,
    version: u32,
    #[serde(flatten)]
    body: M,
}

/// Header metadata for files that need none.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct NoMeta {}

fn check_tag(path: &Path, kind: &str, format: &str, version: u32) -> Result<(), IoError> {
    if format != tag(kind) || version != FORMAT_VERSION {
        return Err(IoError::Format {
            path: path.to_path_buf(),
            expected: tag(kind),
            found: format!("{format} v{version}"),
        });
    }
    Ok(())
}

fn put_line<T: Serialize>(w: &mut impl Write, path: &Path, value: &T) -> Result<(), IoError> {
    let line = serde_json::to_string(value).map_err(|e| IoError::parse(path, 0, e))?;
    writeln!(w, "{line}").map_err(|e| IoError::io(path, e))
}

pub fn write_jsonl<M: Serialize, R: Serialize>(
    path: &Path,
    kind: &str,
    meta: &M,
    records: impl IntoIterator<Item = R>,
) -> Result<(), IoError> {
    let file = File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut w = BufWriter::new(file);
    put_line(&mut w, path, &Tagged { format: tag(kind), version: FORMAT_VERSION, body: meta })?;
    for r in records {
        put_line(&mut w, path, &r)?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

pub fn read_jsonl<M: DeserializeOwned, R: DeserializeOwned>(path: &Path, kind: &str) -> Result<(M, Vec<R>), IoError> {
    let file = File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| IoError::parse(path, 1, "empty file, expected a header line"))?;
    let first = first.map_err(|e| IoError::io(path, e))?;
    let header: Tagged<serde_json::Value> = serde_json::from_str(&first).map_err(|e| IoError::parse(path, 1, e))?;
    check_tag(path, kind, &header.format, header.version)?;
    let meta = M::deserialize(header.body).map_err(|e| IoError::parse(path, 1, e))?;
    let mut records = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| IoError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| IoError::parse(path, i + 1, e))?);
    }
    Ok((meta, records))
}

pub fn write_json<T: Serialize>(path: &Path, kind: &str, value: &T) -> Result<(), IoError> {
    let tagged = Tagged { format: tag(kind), version: FORMAT_VERSION, body: value };
    let text = serde_json::to_string_pretty(&tagged).map_err(|e| IoError::parse(path, 0, e))?;
    std::fs::write(path, text + "\n").map_err(|e| IoError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let tagged: Tagged<serde_json::Value> = serde_json::from_str(&text).map_err(|e| IoError::parse(path, 1, e))?;
    check_tag(path, kind, &tagged.format, tagged.version)?;
    T::deserialize(tagged.body).map_err(|e| IoError::parse(path, 1, e))
}

fn rotation_from(q: [f64; 4], path: &Path, line: usize) -> Result<Rotation3, IoError> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !n.is_finite() || n < 1e-6 {
        return Err(IoError::parse(path, line, format!("invalid quaternion {q:?}")));
    }
    Ok(Rotation3::from(q))
}

// ---- cameras ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub id: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// World-to-camera rotation `(w, x, y, z)`.
    pub q: [f64; 4],
    /// World-to-camera translation in meters.
    pub t: [f64; 3],
}

pub fn write_cameras(path: &Path, cameras: &[CameraView]) -> Result<(), IoError> {
    let records = cameras.iter().map(|c| {
        let i = &c.intrinsics;
        CameraRecord {
            id: c.id.clone(),
            fx: i.fx,
            fy: i.fy,
            cx: i.cx,
            cy: i.cy,
            width: i.width,
            height: i.height,
            q: c.world_to_camera.rotation.quaternion(),
            t: c.world_to_camera.translation.into(),
        }
    });
    write_jsonl(path, "cameras", &NoMeta {}, records)
}

pub fn read_cameras(path: &Path) -> Result<Vec<CameraView>, IoError> {
    let (_, records): (NoMeta, Vec<CameraRecord>) = read_jsonl(path, "cameras")?;
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let intr = Intrinsics { fx: r.fx, fy: r.fy, cx: r.cx, cy: r.cy, width: r.width, height: r.height };
            let pose = RigidTransform::new(rotation_from(r.q, path, i + 2)?, Vector3::from(r.t));
            CameraView::new(&r.id, intr, pose)
                .map_err(|e| IoError::parse(path, i + 2, format!("camera {:?}: {e}", r.id)))
        })
        .collect()
}

// ---- 2D keypoints ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keypoints2dRecord {
    pub t: f64,
    pub camera_id: String,
    /// `(u, v, confidence)` per keypoint.
    pub keypoints: Vec<[f64; 3]>,
}

pub fn write_keypoints2d(path: &Path, frames: &[FrameObservations]) -> Result<(), IoError> {
    let records = frames.iter().flat_map(|f| {
        f.views.iter().map(move |(cam, obs)| Keypoints2dRecord {
            t: f.timestamp,
            camera_id: cam.clone(),
            keypoints: obs.iter().map(|o| [o.pixel.x, o.pixel.y, o.confidence]).collect(),
        })
    });
    write_jsonl(path, "keypoints2d", &NoMeta {}, records)
}

/// Consecutive records with the same `t` form one frame.
pub fn read_keypoints2d(path: &Path) -> Result<Vec<FrameObservations>, IoError> {
    let (_, records): (NoMeta, Vec<Keypoints2dRecord>) = read_jsonl(path, "keypoints2d")?;
    let mut frames: Vec<FrameObservations> = Vec::new();
    for (i, r) in records.into_iter().enumerate() {
        let line = i + 2;
        if !r.t.is_finite() {
            return Err(IoError::parse(path, line, "non-finite timestamp"));
        }
        let obs = r
            .keypoints
            .iter()
            .map(|k| KeypointObservation { pixel: Vector2::new(k[0], k[1]), confidence: k[2] })
            .collect();
        match frames.last_mut() {
            Some(f) if f.timestamp == r.t => {
                if f.views.insert(r.camera_id.clone(), obs).is_some() {
                    return Err(IoError::parse(path, line, format!("duplicate camera {:?} at t={}", r.camera_id, r.t)));
                }
            }
            Some(f) if r.t < f.timestamp => {
                return Err(IoError::parse(path, line, format!("timestamp {} goes backwards", r.t)));
            }
            _ => frames.push(FrameObservations { timestamp: r.t, views: BTreeMap::from([(r.camera_id, obs)]) }),
        }
    }
    Ok(frames)
}

// ---- timed streams ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamRecord<P> {
    pub t: f64,
    pub payload: P,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImuMeta {
    pub sensor: String,
    /// Body joint the device is strapped to.
    pub joint: String,
    pub rate_hz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateMeta {
    pub rate_hz: f64,
}

fn series_from<P, T>(
    path: &Path,
    rate: f64,
    records: Vec<StreamRecord<P>>,
    mut convert: impl FnMut(P, usize) -> Result<T, IoError>,
) -> Result<TimedSeries<T>, IoError> {
    if !(rate > 0.0) {
        return Err(IoError::parse(path, 1, format!("rate_hz must be positive, got {rate}")));
    }
    let mut stamps = Vec::with_capacity(records.len());
    let mut samples = Vec::with_capacity(records.len());
    for (i, r) in records.into_iter().enumerate() {
        stamps.push(r.t);
        samples.push(convert(r.payload, i + 2)?);
    }
    TimedSeries::new(stamps, samples, rate).map_err(|e| IoError::parse(path, 0, e))
}

/// IMU orientation stream; payload is the sensor orientation `(w, x, y, z)`.
pub fn write_imu(path: &Path, meta: &ImuMeta, series: &TimedSeries<Rotation3>) -> Result<(), IoError> {
    let records = series.iter().map(|(t, r)| StreamRecord { t, payload: r.quaternion() });
    write_jsonl(path, "imu", meta, records)
}

pub fn read_imu(path: &Path) -> Result<(ImuMeta, TimedSeries<Rotation3>), IoError> {
    let (meta, records): (ImuMeta, Vec<StreamRecord<[f64; 4]>>) = read_jsonl(path, "imu")?;
    let series = series_from(path, meta.rate_hz, records, |q, line| rotation_from(q, path, line))?;
    Ok((meta, series))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosePayload {
    pub q: [f64; 4],
    pub t: [f64; 3],
}

/// Optically tracked rigid body `T_rb^o` on the reference clock.
pub fn write_rigidbody(path: &Path, series: &TimedSeries<RigidTransform>) -> Result<(), IoError> {
    let records = series
        .iter()
        .map(|(t, x)| StreamRecord { t, payload: PosePayload { q: x.rotation.quaternion(), t: x.translation.into() } });
    write_jsonl(path, "rigidbody", &RateMeta { rate_hz: series.nominal_rate() }, records)
}

pub fn read_rigidbody(path: &Path) -> Result<TimedSeries<RigidTransform>, IoError> {
    let (meta, records): (RateMeta, Vec<StreamRecord<PosePayload>>) = read_jsonl(path, "rigidbody")?;
    series_from(path, meta.rate_hz, records, |p, line| {
        Ok(RigidTransform::new(rotation_from(p.q, path, line)?, Vector3::from(p.t)))
    })
}

// ---- calibration ----

pub fn write_mount(path: &Path, mount: &MountCalibration) -> Result<(), IoError> {
    write_json(path, "calibration", mount)
}

pub fn read_mount(path: &Path) -> Result<MountCalibration, IoError> {
    read_json(path, "calibration")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibPairRecord {
    pub joint: String,
    pub r_sensor: [f64; 4],
    pub r_joint: [f64; 4],
}

pub fn write_calib_pairs(path: &Path, pairs: &BTreeMap<String, Vec<(Rotation3, Rotation3)>>) -> Result<(), IoError> {
    let records = pairs.iter().flat_map(|(j, ps)| {
        ps.iter().map(move |(s, b)| CalibPairRecord {
            joint: j.clone(),
            r_sensor: s.quaternion(),
            r_joint: b.quaternion(),
        })
    });
    write_jsonl(path, "calib-pairs", &NoMeta {}, records)
}

pub fn read_calib_pairs(path: &Path) -> Result<BTreeMap<String, Vec<(Rotation3, Rotation3)>>, IoError> {
    let (_, records): (NoMeta, Vec<CalibPairRecord>) = read_jsonl(path, "calib-pairs")?;
    let mut out: BTreeMap<String, Vec<_>> = BTreeMap::new();
    for (i, r) in records.into_iter().enumerate() {
        let pair = (rotation_from(r.r_sensor, path, i + 2)?, rotation_from(r.r_joint, path, i + 2)?);
        out.entry(r.joint).or_default().push(pair);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainRecord {
    pub t: f64,
    pub kinect: String,
    pub egocam: String,
    /// `T_k^c`.
    pub q: [f64; 4],
    pub translation: [f64; 3],
}

pub fn write_kinect_to_egocam(
    path: &Path,
    timestamps: &[f64],
    chains: &[BTreeMap<(String, String), RigidTransform>],
) -> Result<(), IoError> {
    let records = timestamps.iter().zip(chains).flat_map(|(t, m)| {
        m.iter().map(move |((k, c), x)| ChainRecord {
            t: *t,
            kinect: k.clone(),
            egocam: c.clone(),
            q: x.rotation.quaternion(),
            translation: x.translation.into(),
        })
    });
    write_jsonl(path, "kinect-to-egocam", &NoMeta {}, records)
}

// ---- 3D keypoints ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonMeta {
    pub keypoint_names: Vec<String>,
    pub bones: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keypoints3dRecord {
    pub t: f64,
    /// `(x, y, z, valid)` per keypoint; invalid entries hold zeros.
    pub keypoints: Vec<(f64, f64, f64, bool)>,
}

pub fn write_keypoints3d(path: &Path, names: &[String], seq: &SkeletonSequence3D) -> Result<(), IoError> {
    let meta = SkeletonMeta { keypoint_names: names.to_vec(), bones: seq.bones.clone() };
    let records = (0..seq.frame_count()).map(|f| Keypoints3dRecord {
        t: seq.timestamps[f],
        keypoints: seq.positions[f]
            .iter()
            .zip(&seq.valid[f])
            .map(
                |(p, &v)| {
                    if v && p.iter().all(|c| c.is_finite()) {
                        (p.x, p.y, p.z, true)
                    } else {
                        (0.0, 0.0, 0.0, false)
                    }
                },
            )
            .collect(),
    });
    write_jsonl(path, "keypoints3d", &meta, records)
}

pub fn read_keypoints3d(path: &Path) -> Result<(Vec<String>, SkeletonSequence3D), IoError> {
    let (meta, records): (SkeletonMeta, Vec<Keypoints3dRecord>) = read_jsonl(path, "keypoints3d")?;
    let k = meta.keypoint_names.len();
    let mut seq = SkeletonSequence3D { timestamps: vec![], positions: vec![], valid: vec![], bones: meta.bones };
    for (i, r) in records.into_iter().enumerate() {
        if r.keypoints.len() != k {
            return Err(IoError::parse(path, i + 2, format!("expected {k} keypoints, found {}", r.keypoints.len())));
        }
        seq.timestamps.push(r.t);
        seq.positions.push(r.keypoints.iter().map(|p| Vector3::new(p.0, p.1, p.2)).collect());
        seq.valid.push(r.keypoints.iter().map(|p| p.3).collect());
    }
    if seq.bones.iter().any(|&(a, b)| a >= k || b >= k) {
        return Err(IoError::parse(path, 1, "bone index out of range"));
    }
    Ok((meta.keypoint_names, seq))
}

// ---- pose series (fit output and ground truth) ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSeriesMeta {
    pub beta: Vec<f64>,
    pub rate_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub t: f64,
    /// Root translation followed by one axis-angle per joint.
    pub theta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseSeries {
    pub meta: PoseSeriesMeta,
    pub timestamps: Vec<f64>,
    pub poses: Vec<PoseParams>,
}

impl PoseSeries {
    pub fn new(beta: &ShapeParams, timestamps: &[f64], poses: &[PoseParams], rate_hz: f64) -> Self {
        Self {
            meta: PoseSeriesMeta { beta: beta.0.iter().copied().collect(), rate_hz, converged: None, iterations: None },
            timestamps: timestamps.to_vec(),
            poses: poses.to_vec(),
        }
    }

    pub fn from_fit(fit: &FitResult, timestamps: &[f64], rate_hz: f64) -> Self {
        let mut s = Self::new(&fit.beta, timestamps, &fit.poses, rate_hz);
        s.meta.converged = Some(fit.converged);
        s.meta.iterations = Some(fit.iterations);
        s
    }

    pub fn beta(&self) -> ShapeParams {
        let mut b = ShapeParams::zeros();
        for (d, s) in b.0.iter_mut().zip(&self.meta.beta) {
            *d = *s;
        }
        b
    }
}

pub fn write_poses(path: &Path, kind: &str, series: &PoseSeries) -> Result<(), IoError> {
    let records = series.timestamps.iter().zip(&series.poses).map(|(t, p)| PoseRecord { t: *t, theta: p.to_flat() });
    write_jsonl(path, kind, &series.meta, records)
}

pub fn read_poses(path: &Path, kind: &str, joint_count: usize) -> Result<PoseSeries, IoError> {
    let (meta, records): (PoseSeriesMeta, Vec<PoseRecord>) = read_jsonl(path, kind)?;
    if meta.beta.len() != crate::body_model::SHAPE_DIM {
        return Err(IoError::parse(path, 1, format!("beta has {} entries", meta.beta.len())));
    }
    let mut timestamps = Vec::with_capacity(records.len());
    let mut poses = Vec::with_capacity(records.len());
    for (i, r) in records.into_iter().enumerate() {
        if r.theta.len() != 3 + 3 * joint_count {
            return Err(IoError::parse(
                path,
                i + 2,
                format!("theta has {} entries, expected {}", r.theta.len(), 3 + 3 * joint_count),
            ));
        }
        timestamps.push(r.t);
        poses.push(PoseParams::from_flat(&r.theta).map_err(|e| IoError::parse(path, i + 2, e))?);
    }
    Ok(PoseSeries { meta, timestamps, poses })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyLogRecord {
    pub iteration: usize,
    #[serde(flatten)]
    pub energy: EnergyBreakdown,
}

pub fn write_energy_log(path: &Path, log: &[EnergyBreakdown]) -> Result<(), IoError> {
    let records = log.iter().enumerate().map(|(iteration, e)| EnergyLogRecord { iteration, energy: *e });
    write_jsonl(path, "energy-log", &NoMeta {}, records)
}

pub fn read_energy_log(path: &Path) -> Result<Vec<EnergyBreakdown>, IoError> {
    let (_, records): (NoMeta, Vec<EnergyLogRecord>) = read_jsonl(path, "energy-log")?;
    Ok(records.into_iter().map(|r| r.energy).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rig_sim::camera_ring;

    #[test]
    fn cameras_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cameras.jsonl");
        let cams = camera_ring(4, 2.0, 1.5);
        write_cameras(&p, &cams).unwrap();
        let back = read_cameras(&p).unwrap();
        assert_eq!(back.len(), 4);
        for (a, b) in cams.iter().zip(&back) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.intrinsics, b.intrinsics);
            assert!((a.world_to_camera.translation - b.world_to_camera.translation).norm() < 1e-15);
        }
    }

    #[test]
    fn wrong_format_tag_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        write_cameras(&p, &camera_ring(2, 2.0, 1.5)).unwrap();
        let err = read_rigidbody(&p).unwrap_err();
        assert!(matches!(err, IoError::Format { .. }), "{err}");
    }

    #[test]
    fn parse_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("k.jsonl");
        std::fs::write(&p, "{\"format\":\"mocap-fuse/keypoints2d\",\"version\":1}\n{\"t\":0.0,\"camera_id\":\"a\",\"keypoints\":[]}\n{\"t\":0.0}\n").unwrap();
        let msg = read_keypoints2d(&p).unwrap_err().to_string();
        assert!(msg.contains(":3:"), "{msg}");
    }

    #[test]
    fn keypoints2d_groups_by_timestamp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("k.jsonl");
        let obs = |u: f64| vec![KeypointObservation { pixel: Vector2::new(u, 2.0), confidence: 1.0 }];
        let frames = vec![
            FrameObservations {
                timestamp: 0.0,
                views: BTreeMap::from([("a".into(), obs(1.0)), ("b".into(), obs(2.0))]),
            },
            FrameObservations { timestamp: 0.1, views: BTreeMap::from([("a".into(), obs(3.0))]) },
        ];
        write_keypoints2d(&p, &frames).unwrap();
        assert_eq!(read_keypoints2d(&p).unwrap(), frames);
    }
}
