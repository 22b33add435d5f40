//! Session configuration files.
//!
//! A session file names the calibration, human topology, target skeleton and
//! clip library (paths relative to the file; omitted paths fall back to the
//! bundled fixtures) plus every tunable stage parameter. Unknown keys are
//! rejected at every nesting level.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::CalibrationFile;
use crate::fixtures;
use crate::pipeline::{PipelineConfig, SessionSetup};
use crate::response::ClipLibrary;
use crate::retarget::TargetSkeleton;
use crate::skeleton::{SkeletonFile, SkeletonTopology};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub calibration: Option<PathBuf>,
    pub topology: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub clips: Option<PathBuf>,
    /// Base seed for synthetic corpora.
    pub seed: u64,
    pub pipeline: PipelineConfig,
}

fn read(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })
}

fn parse<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T, ConfigError> {
    serde_json::from_str(text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })
}

impl SessionConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        parse(Path::new("<config>"), text)
    }

    /// Reads a config file; relative paths inside it are later resolved
    /// against its directory.
    pub fn load(path: &Path) -> Result<(Self, PathBuf), ConfigError> {
        let config: Self = parse(path, &read(path)?)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((config, base))
    }

    /// Loads every referenced file and validates the result.
    pub fn resolve(&self, base: &Path) -> Result<SessionSetup, ConfigError> {
        let locate = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        let invalid = |path: &Path, e: &dyn std::fmt::Display| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        };

        let rig = match &self.calibration {
            Some(p) => {
                let path = locate(p);
                let file: CalibrationFile = parse(&path, &read(&path)?)?;
                file.to_rig().map_err(|e| invalid(&path, &e))?
            }
            None => fixtures::default_rig(),
        };
        let topology = match &self.topology {
            Some(p) => {
                let path = locate(p);
                let file: SkeletonFile = parse(&path, &read(&path)?)?;
                let topo = SkeletonTopology::from_file(&file).map_err(|e| invalid(&path, &e))?;
                topo.ensure_human().map_err(|e| invalid(&path, &e))?;
                topo
            }
            None => fixtures::human_topology(),
        };
        let target = match &self.target {
            Some(p) => {
                let path = locate(p);
                let file: SkeletonFile = parse(&path, &read(&path)?)?;
                TargetSkeleton::from_file(&file).map_err(|e| invalid(&path, &e))?
            }
            None => fixtures::cat_skeleton(),
        };
        let clips = match &self.clips {
            Some(p) => {
                let path = locate(p);
                ClipLibrary::from_json(&read(&path)?, &target).map_err(|e| invalid(&path, &e))?
            }
            None => ClipLibrary::from_json(fixtures::CLIPS_JSON, &target)
                .map_err(|e| ConfigError::Invalid(format!("bundled clips do not fit the target: {e}")))?,
        };
        self.pipeline.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(SessionSetup { rig, topology, target, clips, config: self.pipeline.clone() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_bundled_fixtures() {
        let c = SessionConfig::from_json("{}").unwrap();
        assert_eq!(c, SessionConfig::default());
        let setup = c.resolve(Path::new(".")).unwrap();
        assert_eq!(setup.topology.len(), 32);
        assert!(setup.clips.get("shy").is_some());
    }

    #[test]
    fn unknown_keys_rejected_at_any_depth() {
        assert!(SessionConfig::from_json(r#"{"sede": 1}"#).is_err());
        assert!(SessionConfig::from_json(r#"{"pipeline": {"recognizer": {"wave_amplitud": 0.3}}}"#).is_err());
        assert!(SessionConfig::from_json(r#"{"pipeline": {"tracker": {"alpha": 0.4, "gamma": 1}}}"#).is_err());
        let ok =
            SessionConfig::from_json(r#"{"seed": 9, "pipeline": {"recognizer": {"wave_amplitude": 0.3}}}"#).unwrap();
        assert_eq!(ok.seed, 9);
        assert_eq!(ok.pipeline.recognizer.wave_amplitude, 0.3);
    }

    #[test]
    fn invalid_values_and_missing_files() {
        let c = SessionConfig::from_json(r#"{"pipeline": {"fusion": {"window": -1}}}"#).unwrap();
        assert!(matches!(c.resolve(Path::new(".")), Err(ConfigError::Invalid(_))));
        let c = SessionConfig::from_json(r#"{"calibration": "no/such/rig.json"}"#).unwrap();
        assert!(matches!(c.resolve(Path::new(".")), Err(ConfigError::Io { .. })));
    }

    #[test]
    fn relative_paths_follow_config_dir() {
        let dir = std::env::temp_dir().join(format!("mocap-config-{}", std::process::id()));
        fs::create_dir_all(dir.join("data")).unwrap();
        fs::write(dir.join("data/rig.json"), fixtures::RIG_JSON).unwrap();
        fs::write(dir.join("session.json"), r#"{"calibration": "data/rig.json"}"#).unwrap();
        let (c, base) = SessionConfig::load(&dir.join("session.json")).unwrap();
        let setup = c.resolve(&base).unwrap();
        assert!((setup.rig.baseline() - 0.5).abs() < 1e-12);
        fs::remove_dir_all(&dir).unwrap();
    }
}
