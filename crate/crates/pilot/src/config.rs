//! Episode configuration files (TOML, SI units).
//!
//! ```toml
//! dt = 0.001
//! duration = 61.0          # optional; defaults to the scripted pilot's length
//! seed = 7
//! robot_params = "robot.toml"   # optional, relative to this file
//!
//! [robot]                  # used when robot_params is absent
//! mass = 15.8
//!
//! [control]                # loop gains, weights and limits
//! haptic_gain = 200.0
//!
//! [pilot]
//! source = "scripted"      # or "replay" (path = ...) or "live" (port = ...)
//! kind = "velocity_profile"
//! segments = [{ duration = 20.0, speed = 0.1 }]
//!
//! [output]
//! dir = "out"
//! ```
//!
//! The loop time step is the top-level `dt`; `control.dt` is rejected.
//! Scripted pilots take their heights and gravity from the robot and the
//! `control.h_human` entry.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use telewalk::robot::RobotParams;
use telewalk::telelocomotion::{LoopConfig, PilotSource};

use crate::replay::{ReplayError, ReplaySource};
use crate::scripted::{ScriptedPilot, ScriptedPilotSpec, SpecError};

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum PilotDescriptor {
    Scripted(ScriptedPilotSpec),
    Replay { path: PathBuf },
    Live { port: u16 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub telemetry: String,
    pub summary: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), telemetry: "telemetry.jsonl".into(), summary: "summary.json".into() }
    }
}

impl OutputConfig {
    pub fn telemetry_path(&self) -> PathBuf {
        self.dir.join(&self.telemetry)
    }

    pub fn summary_path(&self) -> PathBuf {
        self.dir.join(&self.summary)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub duration: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub robot_params: Option<PathBuf>,
    #[serde(default)]
    pub robot: RobotParams,
    #[serde(default)]
    pub control: LoopConfig,
    pub pilot: PilotDescriptor,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_dt() -> f64 {
    1e-3
}

/// A pilot source and its natural length [s], if it has one.
pub type OfflineSource = (Box<dyn PilotSource>, Option<f64>);

/// Built-in scenarios for `run`.
pub const SCENARIOS: [&str; 3] = ["velocity", "backward", "stand"];

/// Fallback episode length for sources without a natural end [s].
pub const DEFAULT_DURATION: f64 = 60.0;

fn read(path: &Path) -> Result<String, ConfigFileError> {
    fs::read_to_string(path).map_err(|source| ConfigFileError::Io { path: path.to_owned(), source })
}

impl EpisodeConfig {
    pub fn scenario(name: &str) -> Option<Self> {
        let spec = match name {
            "velocity" => ScriptedPilotSpec::velocity_tracking(),
            "backward" => ScriptedPilotSpec::backward(),
            "stand" => ScriptedPilotSpec::standing(10.0),
            _ => return None,
        };
        Some(Self::with_pilot(PilotDescriptor::Scripted(spec)))
    }

    pub fn with_pilot(pilot: PilotDescriptor) -> Self {
        Self {
            dt: default_dt(),
            duration: None,
            seed: 0,
            robot_params: None,
            robot: RobotParams::default(),
            control: LoopConfig::default(),
            pilot,
            output: OutputConfig::default(),
        }
    }

    /// Parses a config file; relative paths inside it resolve against its
    /// directory, and the robot parameter file (if any) is loaded.
    pub fn load(path: &Path) -> Result<Self, ConfigFileError> {
        let base = path.parent().unwrap_or(Path::new("."));
        let mut cfg = Self::from_toml_str(&read(path)?).map_err(|e| match e {
            ConfigFileError::Parse { source, .. } => ConfigFileError::Parse { path: path.to_owned(), source },
            other => other,
        })?;
        cfg.resolve_paths(base);
        if let Some(file) = &cfg.robot_params {
            cfg.robot = load_robot_params(file)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses without touching the filesystem.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigFileError> {
        let raw: toml::Table =
            text.parse().map_err(|source| ConfigFileError::Parse { path: PathBuf::new(), source })?;
        if raw.get("control").and_then(|c| c.get("dt")).is_some() {
            return Err(ConfigFileError::Invalid("set the time step with the top-level `dt`, not `control.dt`".into()));
        }
        let mut cfg: Self = raw.try_into().map_err(|source| ConfigFileError::Parse { path: PathBuf::new(), source })?;
        cfg.control.dt = cfg.dt;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.robot_params.as_mut() {
            fix(p);
        }
        if let PilotDescriptor::Replay { path } = &mut self.pilot {
            fix(path);
        }
        fix(&mut self.output.dir);
    }

    pub fn validate(&self) -> Result<(), ConfigFileError> {
        if !(self.dt > 0.0) {
            return Err(ConfigFileError::Invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if let Some(d) = self.duration {
            if !(d > 0.0) {
                return Err(ConfigFileError::Invalid(format!("duration must be positive, got {d}")));
            }
        }
        self.robot.validate().map_err(|e| ConfigFileError::Invalid(e.to_string()))?;
        self.loop_config().validate().map_err(|e| ConfigFileError::Invalid(e.to_string()))?;
        if let Some(spec) = self.scripted_spec() {
            spec.validate()?;
        }
        Ok(())
    }

    pub fn loop_config(&self) -> LoopConfig {
        LoopConfig { dt: self.dt, ..self.control }
    }

    /// The scripted spec with heights and gravity taken from the episode.
    pub fn scripted_spec(&self) -> Option<ScriptedPilotSpec> {
        match &self.pilot {
            PilotDescriptor::Scripted(spec) => Some(ScriptedPilotSpec {
                h_human: self.control.h_human,
                h_robot: self.robot.com_height_nominal,
                gravity: self.robot.gravity,
                ..spec.clone()
            }),
            _ => None,
        }
    }

    /// Requested duration, else the scripted pilot's length, else the
    /// replay's length, else [`DEFAULT_DURATION`].
    pub fn episode_duration(&self, source_len: Option<f64>) -> f64 {
        self.duration.or_else(|| self.scripted_spec().map(|s| s.duration())).or(source_len).unwrap_or(DEFAULT_DURATION)
    }

    /// Offline source for scripted and replay pilots; `None` for live.
    pub fn offline_source(&self) -> Result<Option<OfflineSource>, ConfigFileError> {
        match &self.pilot {
            PilotDescriptor::Scripted(_) => {
                let spec = self.scripted_spec().expect("scripted");
                let len = spec.duration();
                Ok(Some((Box::new(ScriptedPilot::new(spec, self.seed)?), Some(len))))
            }
            PilotDescriptor::Replay { path } => {
                let src = ReplaySource::open(path)?;
                let len = src.duration();
                Ok(Some((Box::new(src), Some(len))))
            }
            PilotDescriptor::Live { .. } => Ok(None),
        }
    }
}

/// Robot parameter file: TOML with the fields of [`RobotParams`]; missing
/// keys take their defaults, unknown keys are rejected.
pub fn load_robot_params(path: &Path) -> Result<RobotParams, ConfigFileError> {
    let text = read(path)?;
    let table: toml::Table = text.parse().map_err(|source| ConfigFileError::Parse { path: path.to_owned(), source })?;
    let known = toml::Value::try_from(RobotParams::default()).expect("serializable");
    if let Some(k) = table.keys().find(|k| known.get(k.as_str()).is_none()) {
        return Err(ConfigFileError::Invalid(format!("{}: unknown robot parameter `{k}`", path.display())));
    }
    let params: RobotParams =
        table.try_into().map_err(|source| ConfigFileError::Parse { path: path.to_owned(), source })?;
    params.validate().map_err(|e| ConfigFileError::Invalid(format!("{}: {e}", path.display())))?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scripted::PilotKind;

    #[test]
    fn minimal_config() {
        let cfg = EpisodeConfig::from_toml_str(
            "[pilot]\nsource = \"scripted\"\nkind = \"backward\"\nsegments = [{ duration = 3.0, speed = -0.1 }]\n",
        )
        .unwrap();
        assert_eq!(cfg.dt, 1e-3);
        let spec = cfg.scripted_spec().unwrap();
        assert_eq!(spec.kind, PilotKind::Backward);
        assert_eq!(spec.h_robot, 0.5);
        assert_eq!(cfg.episode_duration(None), 4.0);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        assert!(EpisodeConfig::from_toml_str("dt = -1.0\n[pilot]\nsource = \"live\"\nport = 0\n")
            .unwrap()
            .validate()
            .is_err());
        assert!(matches!(
            EpisodeConfig::from_toml_str("[control]\ndt = 0.002\n[pilot]\nsource = \"live\"\nport = 0\n"),
            Err(ConfigFileError::Invalid(_))
        ));
        assert!(EpisodeConfig::from_toml_str("typo = 1\n[pilot]\nsource = \"live\"\nport = 0\n").is_err());
        let fast = "[pilot]\nsource = \"scripted\"\nkind = \"velocity_profile\"\nsegments = [{ duration = 1.0, speed = 0.9 }]\n";
        assert!(matches!(
            EpisodeConfig::from_toml_str(fast).unwrap().validate(),
            Err(ConfigFileError::Spec(SpecError::Speed(_)))
        ));
    }

    #[test]
    fn scenarios_validate() {
        for name in SCENARIOS {
            EpisodeConfig::scenario(name).unwrap().validate().unwrap();
        }
        assert!(EpisodeConfig::scenario("moonwalk").is_none());
    }

    #[test]
    fn load_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("robot.toml"), "mass = 20.0\nfriction_mu = 0.9\n").unwrap();
        let text = "robot_params = \"robot.toml\"\n[pilot]\nsource = \"replay\"\npath = \"rec.csv\"\n[output]\ndir = \"runs\"\n";
        let file = dir.path().join("episode.toml");
        fs::write(&file, text).unwrap();
        let cfg = EpisodeConfig::load(&file).unwrap();
        assert_eq!((cfg.robot.mass, cfg.robot.friction_mu, cfg.robot.thigh_len), (20.0, 0.9, 0.25));
        assert_eq!(cfg.pilot, PilotDescriptor::Replay { path: dir.path().join("rec.csv") });
        assert_eq!(cfg.output.telemetry_path(), dir.path().join("runs/telemetry.jsonl"));
        fs::write(dir.path().join("robot.toml"), "masss = 20.0\n").unwrap();
        assert!(matches!(EpisodeConfig::load(&file), Err(ConfigFileError::Invalid(_))));
    }
}
