//! TOML run configuration with dotted `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::stages::SyncStageOptions;
use crate::fitting::{FitOptions, FitWeights};
use crate::rig_sim::RigConfig;
use crate::triangulate::{RefineOptions, TriangulationOptions};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("bad override {0:?}: expected key=value")]
    Override(String),
    #[error("override {key}: {msg}")]
    OverridePath { key: String, msg: String },
    #[error("input file {key} = {path} does not exist")]
    MissingFile { key: String, path: PathBuf },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Input files of a capture. Relative paths are resolved against the config file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    pub body_model: PathBuf,
    pub cameras: PathBuf,
    pub keypoints2d: PathBuf,
    /// One stream per IMU device; each file names its sensor and joint.
    pub imu: Vec<PathBuf>,
    pub rigidbody: PathBuf,
    /// Rig constants: headset-to-rigid-body and egocentric camera mounts.
    pub mount: PathBuf,
    pub calib_pairs: PathBuf,
    /// Ground-truth pose series, needed only by `evaluate`.
    #[serde(default)]
    pub ground_truth: Option<PathBuf>,
}

impl InputPaths {
    fn entries(&mut self) -> Vec<(String, &mut PathBuf)> {
        let mut v: Vec<(String, &mut PathBuf)> = vec![
            ("inputs.body_model".into(), &mut self.body_model),
            ("inputs.cameras".into(), &mut self.cameras),
            ("inputs.keypoints2d".into(), &mut self.keypoints2d),
            ("inputs.rigidbody".into(), &mut self.rigidbody),
            ("inputs.mount".into(), &mut self.mount),
            ("inputs.calib_pairs".into(), &mut self.calib_pairs),
        ];
        for (i, p) in self.imu.iter_mut().enumerate() {
            v.push((format!("inputs.imu[{i}]"), p));
        }
        if let Some(p) = self.ground_truth.as_mut() {
            v.push(("inputs.ground_truth".into(), p));
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyncConfig {
    /// IMU device whose stream is correlated against the tracked rigid body.
    pub reference_sensor: String,
    pub options: SyncStageOptions,
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self { reference_sensor: "headset".into(), options: SyncStageOptions::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TriangulateConfig {
    pub options: TriangulationOptions,
    /// Run the temporal and bone-length refinement after per-frame triangulation.
    pub refine: bool,
    pub refine_options: RefineOptions,
}

impl Default for TriangulateConfig {
    fn default() -> Self {
        Self { options: TriangulationOptions::default(), refine: true, refine_options: RefineOptions::default() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub weights: FitWeights,
    pub solver: FitOptions,
}

/// Joint-name subsets for the report; unset entries fall back to the body model's.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub upper: Option<Vec<String>>,
    pub lower: Option<Vec<String>>,
    pub root: Option<Vec<String>>,
    /// Pose series to score; defaults to the run's own `fit.jsonl`.
    pub prediction: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub inputs: Option<InputPaths>,
    pub output_dir: Option<PathBuf>,
    pub simulate: RigConfig,
    pub sync: SyncConfig,
    pub triangulate: TriangulateConfig,
    pub fit: FitConfig,
    pub metrics: MetricsConfig,
}

fn parse_override_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key v was just parsed"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `a.b.c = value` inside `root`, creating intermediate tables.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| ConfigError::Override(assignment.to_string()))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(assignment.to_string()));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| ConfigError::OverridePath {
            key: key.to_string(),
            msg: format!("{part:?} is not a table"),
        })?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_override_value(raw.trim()));
    Ok(())
}

impl PipelineConfig {
    /// Parses `text` (or defaults when `None`), applies `overrides` in order, resolves
    /// relative input paths against `base_dir` and validates the result.
    pub fn from_toml(
        text: Option<&str>,
        origin: &str,
        base_dir: &Path,
        overrides: &[String],
    ) -> Result<Self, ConfigError> {
        let mut table: toml::Table = match text {
            Some(t) => {
                toml::from_str(t).map_err(|e| ConfigError::Parse { path: origin.to_string(), msg: e.to_string() })?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: PipelineConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse { path: origin.to_string(), msg: e.to_string() })?;
        cfg.resolve_paths(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        match path {
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|e| ConfigError::Read { path: p.to_path_buf(), source: e })?;
                let base = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
                Self::from_toml(Some(&text), &p.display().to_string(), base, overrides)
            }
            None => Self::from_toml(None, "<defaults>", Path::new("."), overrides),
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(inputs) = self.inputs.as_mut() {
            for (_, p) in inputs.entries() {
                join(p);
            }
        }
        if let Some(p) = self.metrics.prediction.as_mut() {
            join(p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(inputs) = self.inputs.clone().as_mut() {
            for (key, path) in inputs.entries() {
                if !path.is_file() {
                    return Err(ConfigError::MissingFile { key, path: path.clone() });
                }
            }
        }
        self.fit.weights.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.simulate.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let s = &self.sync.options;
        if !(s.search_window_s > 0.0 && s.smoothing_s >= 0.0) {
            return Err(ConfigError::Invalid("sync windows must be positive".into()));
        }
        let r = &self.triangulate.refine_options;
        if !(r.w_smooth >= 0.0 && r.w_bone >= 0.0) {
            return Err(ConfigError::Invalid("refinement weights must be non-negative".into()));
        }
        if self.fit.solver.max_iters == 0 {
            return Err(ConfigError::Invalid("fit.solver.max_iters must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the effective configuration.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = PipelineConfig::default();
        let back = PipelineConfig::from_toml(Some(&cfg.to_toml()), "t", Path::new("."), &[]).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = PipelineConfig::from_toml(Some("[fit.weights]\nrott = 1.0\n"), "t", Path::new("."), &[]).unwrap_err();
        assert!(err.to_string().contains("rott"), "{err}");
        let err =
            PipelineConfig::from_toml(None, "t", Path::new("."), &["sync.options.smoothing=1".into()]).unwrap_err();
        assert!(err.to_string().contains("smoothing"), "{err}");
    }

    #[test]
    fn overrides_apply_in_order() {
        let o = ["fit.weights.prior=0".to_string(), "fit.weights.prior=0.5".into(), "simulate.seed=11".into()];
        let cfg = PipelineConfig::from_toml(None, "t", Path::new("."), &o).unwrap();
        assert_eq!(cfg.fit.weights.prior, 0.5);
        assert_eq!(cfg.simulate.seed, 11);
    }

    #[test]
    fn negative_weight_is_rejected() {
        let err = PipelineConfig::from_toml(None, "t", Path::new("."), &["fit.weights.rot=-1".into()]).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)), "{err}");
    }

    #[test]
    fn missing_input_file_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        for f in ["b.json", "c.jsonl", "k.jsonl", "r.jsonl", "m.json", "p.jsonl"] {
            std::fs::write(dir.path().join(f), "").unwrap();
        }
        let text = r#"[inputs]
body_model = "b.json"
cameras = "c.jsonl"
keypoints2d = "k.jsonl"
imu = []
rigidbody = "r.jsonl"
mount = "m.json"
calib_pairs = "p.jsonl"
"#;
        PipelineConfig::from_toml(Some(text), "t", dir.path(), &[]).unwrap();
        let err =
            PipelineConfig::from_toml(Some(&text.replace("m.json", "nope.json")), "t", dir.path(), &[]).unwrap_err();
        assert!(err.to_string().contains("nope.json"), "{err}");
    }

    #[test]
    fn hash_tracks_effective_values() {
        let a = PipelineConfig::default();
        let b = PipelineConfig::from_toml(None, "t", Path::new("."), &["fit.weights.rot=1.0".into()]).unwrap();
        let c = PipelineConfig::from_toml(None, "t", Path::new("."), &["fit.weights.rot=1.5".into()]).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }
}
