//! File-based stage runner behind the command-line tool.
//!
//! Each stage reads its inputs (capture files named in the config, or artifacts an
//! earlier stage left in the output directory), writes its own artifacts, and the
//! run ends with a `manifest.json` describing what happened.

pub mod config;
pub mod stages;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{ConfigError, InputPaths, PipelineConfig};

use crate::align::MountCalibration;
use crate::body_model::{synthetic_humanoid, BodyModelSpec};
use crate::fitting::{FitError, FitResult};
use crate::geometry::Rotation3;
use crate::io::{self, ImuMeta, IoError, PoseSeries};
use crate::metrics::{evaluate, MetricReport, MetricSubsets};
use crate::rig_sim::{simulate, IMU_SENSORS};
use crate::sync::{SyncReport, TimedSeries};
use crate::triangulate::SkeletonSequence3D;
use stages::{estimate_offsets, kinect_to_egocam_series, rotation_targets, sync_headset, triangulate_sequence};

pub const SYNC_REPORT: &str = "sync_report.json";
pub const CALIBRATION: &str = "calibration.json";
pub const KINECT_TO_EGOCAM: &str = "kinect_to_egocam.jsonl";
pub const KEYPOINTS3D: &str = "keypoints3d.jsonl";
pub const FIT: &str = "fit.jsonl";
pub const ENERGY_LOG: &str = "energy_log.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const MANIFEST: &str = "manifest.json";
pub const GROUND_TRUTH: &str = "ground_truth.jsonl";
pub const GROUND_TRUTH_RIG: &str = "ground_truth_rig.json";
pub const SIM_CONFIG: &str = "pipeline.toml";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Simulate,
    Sync,
    Calibrate,
    Triangulate,
    Fit,
    Evaluate,
    Pipeline,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant");
        f.write_str(s.as_str().expect("string"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("bad input: {0}")]
    Input(String),
    #[error("{0}")]
    NotConverged(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Input(_) => 2,
            RunError::NotConverged(_) => 3,
            RunError::Internal(_) => 4,
        }
    }
}

fn input_err(e: impl fmt::Display) -> RunError {
    RunError::Input(e.to_string())
}

fn write_err(e: IoError) -> RunError {
    RunError::Internal(e.to_string())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub seconds: f64,
    pub artifacts: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub tool_version: String,
    pub command: Stage,
    pub config_hash: String,
    pub config: PipelineConfig,
    pub jobs: Option<usize>,
    pub stages: Vec<StageRecord>,
    /// `ok`, or the error that ended the run.
    pub status: String,
}

/// Ground truth the simulator knows beyond the pose series.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RigTruth {
    pub imu_clock_offset_s: f64,
    pub imu_joint_offsets: BTreeMap<String, Rotation3>,
}

/// Everything a stage run needs besides its inputs.
#[derive(Clone, Debug)]
pub struct RunContext {
    pub config: PipelineConfig,
    pub out_dir: PathBuf,
    pub jobs: Option<usize>,
}

impl RunContext {
    pub fn new(config: PipelineConfig, out_dir: Option<PathBuf>, jobs: Option<usize>) -> Result<Self, RunError> {
        let out_dir = out_dir
            .or_else(|| config.output_dir.clone())
            .ok_or_else(|| RunError::Input("no output directory: pass --out or set output_dir".into()))?;
        Ok(Self { config, out_dir, jobs })
    }

    fn artifact(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn inputs(&self) -> Result<&InputPaths, RunError> {
        self.config.inputs.as_ref().ok_or_else(|| RunError::Input("config has no [inputs] section".into()))
    }

    fn body_model(&self) -> Result<BodyModelSpec, RunError> {
        let p = &self.inputs()?.body_model;
        BodyModelSpec::load(p).map_err(|e| RunError::Input(format!("{}: {e}", p.display())))
    }

    /// A previous stage's artifact; missing files name the stage that writes them.
    fn require(&self, name: &str, producer: Stage) -> Result<PathBuf, RunError> {
        let p = self.artifact(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(RunError::Input(format!("{} not found; run `{producer}` first", p.display())))
        }
    }

    fn imu_streams(&self) -> Result<Vec<(ImuMeta, TimedSeries<Rotation3>)>, RunError> {
        self.inputs()?.imu.iter().map(|p| io::read_imu(p).map_err(input_err)).collect()
    }
}

/// Outcome of a stage function: the artifacts written, and a deferred
/// non-convergence that should still fail the run after bookkeeping.
struct StageOutput {
    artifacts: Vec<String>,
    not_converged: Option<String>,
}

impl StageOutput {
    fn ok(artifacts: &[&str]) -> Self {
        Self { artifacts: artifacts.iter().map(|s| s.to_string()).collect(), not_converged: None }
    }
}

fn run_simulate(ctx: &RunContext) -> Result<StageOutput, RunError> {
    let spec = synthetic_humanoid();
    let rig = &ctx.config.simulate;
    let gt = simulate(&spec, rig).map_err(input_err)?;
    let out = |n: &str| ctx.artifact(n);

    spec.save(&out("body_model.json")).map_err(|e| RunError::Internal(e.to_string()))?;
    io::write_cameras(&out("cameras.jsonl"), &gt.cameras).map_err(write_err)?;
    io::write_keypoints2d(&out("keypoints2d.jsonl"), &gt.observations).map_err(write_err)?;
    let mut imu_files = Vec::new();
    for (sensor, joint) in IMU_SENSORS {
        let name = format!("imu_{sensor}.jsonl");
        let meta = ImuMeta { sensor: sensor.into(), joint: joint.into(), rate_hz: rig.imu_rate_hz };
        io::write_imu(&out(&name), &meta, &gt.imu[sensor]).map_err(write_err)?;
        imu_files.push(name);
    }
    io::write_rigidbody(&out("rigidbody.jsonl"), &gt.rigidbody).map_err(write_err)?;
    let mount = MountCalibration { imu_joint_offsets: BTreeMap::new(), ..gt.mount.clone() };
    io::write_mount(&out("mount.json"), &mount).map_err(write_err)?;
    io::write_calib_pairs(&out("calib_pairs.jsonl"), &gt.calib_pairs).map_err(write_err)?;
    let truth = PoseSeries::new(&gt.beta, &gt.timestamps, &gt.poses, rig.frame_rate_hz);
    io::write_poses(&out(GROUND_TRUTH), "poses", &truth).map_err(write_err)?;
    let rig_truth =
        RigTruth { imu_clock_offset_s: gt.imu_clock_offset_s, imu_joint_offsets: gt.mount.imu_joint_offsets.clone() };
    io::write_json(&out(GROUND_TRUTH_RIG), "rig-truth", &rig_truth).map_err(write_err)?;

    let inputs = InputPaths {
        body_model: "body_model.json".into(),
        cameras: "cameras.jsonl".into(),
        keypoints2d: "keypoints2d.jsonl".into(),
        imu: imu_files.iter().map(PathBuf::from).collect(),
        rigidbody: "rigidbody.jsonl".into(),
        mount: "mount.json".into(),
        calib_pairs: "calib_pairs.jsonl".into(),
        ground_truth: Some(GROUND_TRUTH.into()),
    };
    let sim_cfg = PipelineConfig { inputs: Some(inputs), ..PipelineConfig::default() };
    std::fs::write(out(SIM_CONFIG), sim_cfg.to_toml()).map_err(|e| RunError::Internal(e.to_string()))?;

    let mut artifacts = vec![
        "body_model.json".to_string(),
        "cameras.jsonl".into(),
        "keypoints2d.jsonl".into(),
        "rigidbody.jsonl".into(),
        "mount.json".into(),
        "calib_pairs.jsonl".into(),
        GROUND_TRUTH.into(),
        GROUND_TRUTH_RIG.into(),
        SIM_CONFIG.into(),
    ];
    artifacts.extend(imu_files);
    Ok(StageOutput { artifacts, not_converged: None })
}

fn run_sync(ctx: &RunContext) -> Result<StageOutput, RunError> {
    let sensor = &ctx.config.sync.reference_sensor;
    let streams = ctx.imu_streams()?;
    let (_, reference) = streams
        .iter()
        .find(|(m, _)| &m.sensor == sensor)
        .ok_or_else(|| RunError::Input(format!("no IMU stream for reference sensor {sensor:?}")))?;
    let rigidbody = io::read_rigidbody(&ctx.inputs()?.rigidbody).map_err(input_err)?;
    let report = sync_headset(reference, &rigidbody, &ctx.config.sync.options).map_err(input_err)?;
    log::info!("clock offset {:+.4} s (peak correlation {:.3})", report.offset_s, report.peak_correlation);
    io::write_json(&ctx.artifact(SYNC_REPORT), "sync-report", &report).map_err(write_err)?;
    Ok(StageOutput::ok(&[SYNC_REPORT]))
}

fn run_calibrate(ctx: &RunContext) -> Result<StageOutput, RunError> {
    let inputs = ctx.inputs()?;
    let mount = io::read_mount(&inputs.mount).map_err(input_err)?;
    let pairs = io::read_calib_pairs(&inputs.calib_pairs).map_err(input_err)?;
    let cal = estimate_offsets(&pairs).map_err(input_err)?;
    let calibrated = MountCalibration { imu_joint_offsets: cal.imu_joint_offsets, ..mount };
    io::write_mount(&ctx.artifact(CALIBRATION), &calibrated).map_err(write_err)?;

    let cameras = io::read_cameras(&inputs.cameras).map_err(input_err)?;
    let rigidbody = io::read_rigidbody(&inputs.rigidbody).map_err(input_err)?;
    let chains = kinect_to_egocam_series(&rigidbody, &calibrated, &cameras);
    io::write_kinect_to_egocam(&ctx.artifact(KINECT_TO_EGOCAM), rigidbody.timestamps(), &chains).map_err(write_err)?;
    Ok(StageOutput::ok(&[CALIBRATION, KINECT_TO_EGOCAM]))
}

fn run_triangulate(ctx: &RunContext) -> Result<StageOutput, RunError> {
    let inputs = ctx.inputs()?;
    let spec = ctx.body_model()?;
    let cameras = io::read_cameras(&inputs.cameras).map_err(input_err)?;
    let observations = io::read_keypoints2d(&inputs.keypoints2d).map_err(input_err)?;
    let k = spec.keypoint_count();
    for f in &observations {
        for (cam, obs) in &f.views {
            if obs.len() != k {
                return Err(RunError::Input(format!(
                    "{}: camera {cam:?} at t={} has {} keypoints, body model has {k}",
                    inputs.keypoints2d.display(),
                    f.timestamp,
                    obs.len()
                )));
            }
        }
    }
    let tc = &ctx.config.triangulate;
    let refine = tc.refine.then_some(&tc.refine_options);
    let out =
        triangulate_sequence(&observations, &cameras, &spec.keypoint_bones, &tc.options, refine).map_err(input_err)?;
    io::write_keypoints3d(&ctx.artifact(KEYPOINTS3D), &spec.keypoint_names, &out.refined).map_err(write_err)?;
    Ok(StageOutput::ok(&[KEYPOINTS3D]))
}

fn load_keypoints3d(ctx: &RunContext, spec: &BodyModelSpec) -> Result<SkeletonSequence3D, RunError> {
    let path = ctx.require(KEYPOINTS3D, Stage::Triangulate)?;
    let (names, seq) = io::read_keypoints3d(&path).map_err(input_err)?;
    if names != spec.keypoint_names {
        return Err(RunError::Input(format!("{}: keypoint names differ from the body model", path.display())));
    }
    Ok(seq)
}

fn run_fit(ctx: &RunContext) -> Result<StageOutput, RunError> {
    let spec = ctx.body_model()?;
    let seq = load_keypoints3d(ctx, &spec)?;
    let sync: SyncReport = io::read_json(&ctx.require(SYNC_REPORT, Stage::Sync)?, "sync-report").map_err(input_err)?;
    let cal = io::read_mount(&ctx.require(CALIBRATION, Stage::Calibrate)?).map_err(input_err)?;
    let mut imu = BTreeMap::new();
    let mut sensor_joints = BTreeMap::new();
    for (meta, series) in ctx.imu_streams()? {
        sensor_joints.insert(meta.sensor.clone(), meta.joint);
        imu.insert(meta.sensor, series);
    }
    let targets = rotation_targets(&imu, &sensor_joints, &cal.imu_joint_offsets, sync.offset_s, &seq.timestamps)
        .map_err(RunError::Input)?;
    let fc = &ctx.config.fit;
    let (result, not_converged) = match stages::fit(&spec, &seq, &targets, &fc.weights, &fc.solver) {
        Ok(r) => (r, None),
        Err(FitError::NotConverged(r)) => {
            let msg = format!("fit did not converge in {} iterations; wrote the last iterate", r.iterations);
            (*r, Some(msg))
        }
        Err(e) => return Err(input_err(e)),
    };
    write_fit(ctx, &result, &seq.timestamps)?;
    Ok(StageOutput { artifacts: vec![FIT.into(), ENERGY_LOG.into()], not_converged })
}

fn frame_rate(timestamps: &[f64]) -> f64 {
    if timestamps.len() < 2 {
        return 1.0;
    }
    (timestamps.len() - 1) as f64 / (timestamps[timestamps.len() - 1] - timestamps[0])
}

fn write_fit(ctx: &RunContext, result: &FitResult, timestamps: &[f64]) -> Result<(), RunError> {
    let series = PoseSeries::from_fit(result, timestamps, frame_rate(timestamps));
    io::write_poses(&ctx.artifact(FIT), "poses", &series).map_err(write_err)?;
    io::write_energy_log(&ctx.artifact(ENERGY_LOG), &result.energy_log).map_err(write_err)
}

fn run_evaluate(ctx: &RunContext) -> Result<StageOutput, RunError> {
    let spec = ctx.body_model()?;
    let gt_path =
        ctx.inputs()?.ground_truth.clone().ok_or_else(|| RunError::Input("inputs.ground_truth is not set".into()))?;
    let pred_path = match &ctx.config.metrics.prediction {
        Some(p) => p.clone(),
        None => ctx.require(FIT, Stage::Fit)?,
    };
    let n = spec.joint_count();
    let gt = io::read_poses(&gt_path, "poses", n).map_err(input_err)?;
    let pred = io::read_poses(&pred_path, "poses", n).map_err(input_err)?;
    if gt.timestamps != pred.timestamps {
        return Err(RunError::Input(format!(
            "{} and {} cover different frames ({} vs {})",
            pred_path.display(),
            gt_path.display(),
            pred.timestamps.len(),
            gt.timestamps.len()
        )));
    }
    let defaults = MetricSubsets::from_model(&spec);
    let m = &ctx.config.metrics;
    let subsets = MetricSubsets {
        upper: m.upper.clone().unwrap_or(defaults.upper),
        lower: m.lower.clone().unwrap_or(defaults.lower),
        root: m.root.clone().unwrap_or(defaults.root),
    };
    let report = evaluate(&spec, (&pred.beta(), &pred.poses), (&gt.beta(), &gt.poses), gt.meta.rate_hz, &subsets)
        .map_err(input_err)?;
    write_report(ctx, &report)?;
    Ok(StageOutput::ok(&[REPORT_JSON, REPORT_TXT]))
}

fn write_report(ctx: &RunContext, report: &MetricReport) -> Result<(), RunError> {
    io::write_json(&ctx.artifact(REPORT_JSON), "report", report).map_err(write_err)?;
    let text = format!("{report}(positions in cm, rotations in degrees, jitter in 100 m/s^3)\n");
    std::fs::write(ctx.artifact(REPORT_TXT), text).map_err(|e| RunError::Internal(e.to_string()))
}

const PIPELINE_STAGES: [Stage; 5] = [Stage::Sync, Stage::Calibrate, Stage::Triangulate, Stage::Fit, Stage::Evaluate];

fn run_stage(ctx: &RunContext, stage: Stage) -> Result<StageOutput, RunError> {
    match stage {
        Stage::Simulate => run_simulate(ctx),
        Stage::Sync => run_sync(ctx),
        Stage::Calibrate => run_calibrate(ctx),
        Stage::Triangulate => run_triangulate(ctx),
        Stage::Fit => run_fit(ctx),
        Stage::Evaluate => run_evaluate(ctx),
        Stage::Pipeline => unreachable!("expanded by run"),
    }
}

/// Runs `command`, writes `manifest.json` and returns it. A non-converged fit keeps
/// going (its last iterate is written and scored) and is reported at the end.
pub fn run(command: Stage, ctx: &RunContext) -> Result<Manifest, RunError> {
    std::fs::create_dir_all(&ctx.out_dir)
        .map_err(|e| RunError::Internal(format!("cannot create {}: {e}", ctx.out_dir.display())))?;
    let plan: Vec<Stage> = match command {
        Stage::Pipeline => {
            let mut p = PIPELINE_STAGES.to_vec();
            if ctx.config.inputs.as_ref().is_some_and(|i| i.ground_truth.is_none()) {
                log::warn!("inputs.ground_truth is not set; skipping evaluate");
                p.pop();
            }
            p
        }
        s => vec![s],
    };
    let mut manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command,
        config_hash: ctx.config.hash(),
        config: ctx.config.clone(),
        jobs: ctx.jobs,
        stages: Vec::new(),
        status: "ok".into(),
    };
    let mut deferred = None;
    let mut failure = None;
    for stage in plan {
        log::info!("stage {stage}");
        let t0 = Instant::now();
        match run_stage(ctx, stage) {
            Ok(out) => {
                manifest.stages.push(StageRecord {
                    stage,
                    seconds: t0.elapsed().as_secs_f64(),
                    artifacts: out.artifacts,
                });
                if let Some(msg) = out.not_converged {
                    log::warn!("{msg}");
                    deferred.get_or_insert(msg);
                }
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    let result = match (failure, deferred) {
        (Some(e), _) => Err(e),
        (None, Some(msg)) => Err(RunError::NotConverged(msg)),
        (None, None) => Ok(()),
    };
    if let Err(e) = &result {
        manifest.status = e.to_string();
    }
    io::write_json(&ctx.artifact(MANIFEST), "manifest", &manifest).map_err(write_err)?;
    result.map(|_| manifest)
}

/// Reads the simulator's extra ground truth from a simulate output directory.
pub fn read_rig_truth(dir: &Path) -> Result<RigTruth, IoError> {
    io::read_json(&dir.join(GROUND_TRUTH_RIG), "rig-truth")
}
