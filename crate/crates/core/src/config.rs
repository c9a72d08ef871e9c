//! Engine configuration file (TOML).
//!
//! ```toml
//! seed = 42
//! duration_ms = 120000
//! decimation = 20
//! window = 50
//! autostart = false
//!
//! [patient]
//! preset = "moderate"        # severe | moderate | mild
//! ripple_amplitude = 0.1     # any PatientModel field overrides the preset
//!
//! [script]
//! path = "script.toml"       # or inline [[script.segment]] tables
//!
//! [control]
//! strategy = "proportional"
//! th = 50.0
//! th1 = 20.0
//! th2 = 80.0
//! delta = 5.0
//!
//! [plant]
//! max_rate = 1.0
//! time_constant = 80.0
//!
//! [calibration]
//! rest_window = 1000
//! mvc_window = 1000
//!
//! [calibration.profile]      # optional: skip in-session calibration
//! rest_raw = 40
//! mvc_raw = 1200
//!
//! [[schedule]]
//! at_ms = 0
//! command = { type = "calibrate_rest" }
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::calibration::{CalibrationProfile, CalibrationSettings, MvcEstimator, RestEstimator};
use crate::control::ControlConfig;
use crate::error::{ConfigError, ValidationError};
use crate::pipeline::DEFAULT_WINDOW;
use crate::plant::PlantParams;
use crate::session::{Command, EngineConfig};
use crate::source::{IntentScript, PatientModel, Segment};
use crate::telemetry::DEFAULT_DECIMATION;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientSection {
    pub preset: Option<String>,
    pub path: Option<PathBuf>,
    pub rest_noise_mean: Option<f64>,
    pub rest_noise_sd: Option<f64>,
    pub mvc_level: Option<f64>,
    pub ripple_amplitude: Option<f64>,
    pub ripple_period: Option<f64>,
    pub fatigue_rate: Option<f64>,
    pub contraction_rise_time: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptSection {
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub segment: Vec<Segment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSection {
    pub rest_raw: u16,
    pub mvc_raw: u16,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    pub rest_window: usize,
    pub mvc_window: usize,
    pub min_window: usize,
    pub rest_estimator: String,
    pub mvc_percentile: Option<f64>,
    pub profile: Option<ProfileSection>,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        let d = CalibrationSettings::default();
        Self {
            rest_window: d.rest_window,
            mvc_window: d.mvc_window,
            min_window: d.min_window,
            rest_estimator: "mean".into(),
            mvc_percentile: Some(95.0),
            profile: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledCommand {
    pub at_ms: u64,
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: u64,
    pub duration_ms: Option<u64>,
    pub decimation: u32,
    pub window: usize,
    pub autostart: bool,
    pub patient: PatientSection,
    pub script: ScriptSection,
    pub control: ControlConfig,
    pub plant: PlantParams,
    pub calibration: CalibrationSection,
    pub schedule: Vec<ScheduledCommand>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl Default for ConfigFile {
    fn default() -> Self {
        Self {
            seed: 0,
            duration_ms: None,
            decimation: DEFAULT_DECIMATION,
            window: DEFAULT_WINDOW,
            autostart: false,
            patient: PatientSection::default(),
            script: ScriptSection::default(),
            control: ControlConfig::default(),
            plant: PlantParams::default(),
            calibration: CalibrationSection::default(),
            schedule: Vec::new(),
            base_dir: PathBuf::from("."),
        }
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn syntax(path: &Path, e: impl std::fmt::Display) -> ConfigError {
    ConfigError::Syntax {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

impl ConfigFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let mut cfg = Self::parse(&read(path)?).map_err(|e| match e {
            ConfigError::Syntax { msg, .. } => syntax(path, msg),
            other => other,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| syntax(Path::new("<config>"), e))
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Patient model: preset (default moderate) or model file, then field
    /// overrides.
    pub fn patient_model(&self) -> Result<(PatientModel, String), ConfigError> {
        let p = &self.patient;
        let (mut m, mut label) = match (&p.path, &p.preset) {
            (Some(path), _) => (load_model(&self.resolve(path))?, path.display().to_string()),
            (None, Some(name)) => (PatientModel::preset(name)?, name.to_ascii_lowercase()),
            (None, None) => (PatientModel::MODERATE, "moderate".to_string()),
        };
        let overrides = [
            (&mut m.rest_noise_mean, p.rest_noise_mean),
            (&mut m.rest_noise_sd, p.rest_noise_sd),
            (&mut m.mvc_level, p.mvc_level),
            (&mut m.ripple_amplitude, p.ripple_amplitude),
            (&mut m.ripple_period, p.ripple_period),
            (&mut m.fatigue_rate, p.fatigue_rate),
            (&mut m.contraction_rise_time, p.contraction_rise_time),
        ];
        let mut touched = false;
        for (slot, v) in overrides {
            if let Some(v) = v {
                *slot = v;
                touched = true;
            }
        }
        if touched {
            label.push('*');
        }
        m.validate()?;
        Ok((m, label))
    }

    pub fn script(&self) -> Result<IntentScript, ConfigError> {
        let mut segs = match &self.script.path {
            Some(p) => load_script(&self.resolve(p))?.segments().to_vec(),
            None => Vec::new(),
        };
        segs.extend(self.script.segment.iter().copied());
        segs.sort_by_key(|s| s.start_ms);
        Ok(IntentScript::new(segs)?)
    }

    pub fn calibration_settings(&self) -> Result<CalibrationSettings, ValidationError> {
        let c = &self.calibration;
        let rest_estimator = match c.rest_estimator.as_str() {
            "mean" => RestEstimator::Mean,
            "median" => RestEstimator::Median,
            other => {
                return Err(ValidationError::new(
                    "calibration.rest_estimator",
                    format!("expected mean or median, got {other:?}"),
                ))
            }
        };
        let mvc_estimator = match c.mvc_percentile {
            Some(p) if p > 0.0 && p <= 100.0 => MvcEstimator::Percentile { p },
            Some(p) => {
                return Err(ValidationError::new(
                    "calibration.mvc_percentile",
                    format!("{p} outside (0, 100]"),
                ))
            }
            None => MvcEstimator::Max,
        };
        Ok(CalibrationSettings {
            rest_window: c.rest_window,
            mvc_window: c.mvc_window,
            min_window: c.min_window,
            rest_estimator,
            mvc_estimator,
        })
    }

    pub fn engine_config(&self) -> Result<EngineConfig, ConfigError> {
        let calibration = self.calibration_settings()?;
        let profile = match self.calibration.profile {
            Some(p) => Some(CalibrationProfile::new(
                p.rest_raw,
                p.mvc_raw,
                0,
                calibration.rest_window as u64,
                calibration.mvc_window as u64,
            )?),
            None => None,
        };
        let cfg = EngineConfig {
            control: self.control,
            plant: self.plant,
            calibration,
            profile,
            window: self.window,
            decimation: self.decimation,
            seed: self.seed,
            autostart: self.autostart,
            keep_rows: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn schedule(&self) -> Vec<(u64, Command)> {
        self.schedule.iter().map(|s| (s.at_ms, s.command.clone())).collect()
    }
}

/// Standalone patient model file: the `PatientModel` fields at top level.
pub fn load_model(path: &Path) -> Result<PatientModel, ConfigError> {
    let m: PatientModel = toml::from_str(&read(path)?).map_err(|e| syntax(path, e))?;
    m.validate()?;
    Ok(m)
}

/// Script file: `[[segment]]` tables with `start_ms`, `end_ms`, `effort`.
pub fn load_script(path: &Path) -> Result<IntentScript, ConfigError> {
    let s: IntentScript = toml::from_str(&read(path)?).map_err(|e| syntax(path, e))?;
    s.validate()?;
    Ok(s)
}
