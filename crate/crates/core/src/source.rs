//! Conditioned electrode signal sources.
//!
//! A source yields one envelope sample in volts per 1 ms tick. The synthetic
//! source models a post-stroke extensor signal: clipped Gaussian baseline,
//! effort-driven contraction through a first-order lag, linear fatigue decay
//! of the MVC level and a sinusoidal ripple with band-limited jitter. The
//! replay source plays back the `volts` column of a recorded session.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, RecordError, ValidationError};
use crate::pipeline::FULL_SCALE_VOLTS;
use crate::record;

/// RNG stream used by the synthetic source; the encoder uses another stream
/// of the same session seed.
pub const SOURCE_STREAM: u64 = 1;

const JITTER_SCALE: f64 = 0.25;

/// Pull-based sample source driven by the tick loop.
pub trait EmgSource: Send {
    /// Next envelope sample, or `None` once the source is exhausted.
    fn next_volts(&mut self) -> Option<f64>;

    /// Short description recorded in the session header.
    fn descriptor(&self) -> String;
}

/// Simulated patient signal parameters. Presets are simulator defaults, not
/// clinical measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientModel {
    pub rest_noise_mean: f64,
    pub rest_noise_sd: f64,
    pub mvc_level: f64,
    pub ripple_amplitude: f64,
    /// ms
    pub ripple_period: f64,
    /// Fraction of MVC lost per minute.
    pub fatigue_rate: f64,
    /// ms
    pub contraction_rise_time: f64,
}

impl PatientModel {
    /// Weak signal, large ripple relative to MVC.
    pub const SEVERE: PatientModel = PatientModel {
        rest_noise_mean: 0.05,
        rest_noise_sd: 0.01,
        mvc_level: 0.6,
        ripple_amplitude: 0.06,
        ripple_period: 180.0,
        fatigue_rate: 0.01,
        contraction_rise_time: 150.0,
    };
    pub const MODERATE: PatientModel = PatientModel {
        rest_noise_mean: 0.05,
        rest_noise_sd: 0.01,
        mvc_level: 1.5,
        ripple_amplitude: 0.08,
        ripple_period: 250.0,
        fatigue_rate: 0.008,
        contraction_rise_time: 120.0,
    };
    pub const MILD: PatientModel = PatientModel {
        rest_noise_mean: 0.04,
        rest_noise_sd: 0.008,
        mvc_level: 3.0,
        ripple_amplitude: 0.06,
        ripple_period: 300.0,
        fatigue_rate: 0.005,
        contraction_rise_time: 80.0,
    };

    /// Noise-free, ripple-free, fatigue-free signal.
    pub fn ideal(mvc_level: f64, contraction_rise_time: f64) -> Self {
        Self {
            rest_noise_mean: 0.0,
            rest_noise_sd: 0.0,
            mvc_level,
            ripple_amplitude: 0.0,
            ripple_period: 100.0,
            fatigue_rate: 0.0,
            contraction_rise_time,
        }
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        match name.to_ascii_lowercase().as_str() {
            "severe" => Ok(Self::SEVERE),
            "moderate" => Ok(Self::MODERATE),
            "mild" => Ok(Self::MILD),
            other => Err(ConfigError::UnknownPreset(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let all = [
            ("rest_noise_mean", self.rest_noise_mean),
            ("rest_noise_sd", self.rest_noise_sd),
            ("mvc_level", self.mvc_level),
            ("ripple_amplitude", self.ripple_amplitude),
            ("ripple_period", self.ripple_period),
            ("fatigue_rate", self.fatigue_rate),
            ("contraction_rise_time", self.contraction_rise_time),
        ];
        for (name, v) in all {
            if !v.is_finite() {
                return Err(ValidationError::new(name, "must be a finite number"));
            }
        }
        if self.rest_noise_mean < 0.0 {
            return Err(ValidationError::new("rest_noise_mean", "must be >= 0"));
        }
        if self.rest_noise_sd < 0.0 {
            return Err(ValidationError::new("rest_noise_sd", "must be >= 0"));
        }
        if self.mvc_level <= self.rest_noise_mean || self.mvc_level > FULL_SCALE_VOLTS {
            return Err(ValidationError::new(
                "mvc_level",
                format!("must lie in (rest_noise_mean, 5.0], got {}", self.mvc_level),
            ));
        }
        if self.ripple_amplitude < 0.0 {
            return Err(ValidationError::new("ripple_amplitude", "must be >= 0"));
        }
        if self.fatigue_rate < 0.0 {
            return Err(ValidationError::new("fatigue_rate", "must be >= 0"));
        }
        if self.ripple_period <= 0.0 {
            return Err(ValidationError::new("ripple_period", "must be > 0"));
        }
        if self.contraction_rise_time <= 0.0 {
            return Err(ValidationError::new("contraction_rise_time", "must be > 0"));
        }
        Ok(())
    }

    /// MVC level after fatigue at session time `t_ms`, floored at zero.
    pub fn mvc_effective(&self, t_ms: u64) -> f64 {
        self.mvc_level * (1.0 - self.fatigue_rate * t_ms as f64 / 60_000.0).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub start_ms: u64,
    pub end_ms: u64,
    /// Fraction of MVC.
    pub effort: f64,
}

/// Intended effort over time; zero outside segments.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IntentScript {
    #[serde(default, rename = "segment")]
    segments: Vec<Segment>,
}

impl IntentScript {
    pub fn new(segments: Vec<Segment>) -> Result<Self, ValidationError> {
        let s = Self { segments };
        s.validate()?;
        Ok(s)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let mut prev_end = 0;
        for (i, s) in self.segments.iter().enumerate() {
            if s.start_ms >= s.end_ms {
                return Err(ValidationError::new(
                    format!("segment[{i}]"),
                    "start_ms must be before end_ms",
                ));
            }
            if i > 0 && s.start_ms < prev_end {
                return Err(ValidationError::new(
                    format!("segment[{i}]"),
                    "segments must be time-ordered and non-overlapping",
                ));
            }
            if !(0.0..=1.0).contains(&s.effort) {
                return Err(ValidationError::new(
                    format!("segment[{i}].effort"),
                    format!("{} outside [0, 1]", s.effort),
                ));
            }
            prev_end = s.end_ms;
        }
        Ok(())
    }

    /// Commanded effort at `t_ms` (segments are half-open `[start, end)`).
    pub fn target_at(&self, t_ms: u64) -> f64 {
        let idx = self.segments.partition_point(|s| s.end_ms <= t_ms);
        match self.segments.get(idx) {
            Some(s) if s.start_ms <= t_ms => s.effort,
            _ => 0.0,
        }
    }

    pub fn end_ms(&self) -> u64 {
        self.segments.last().map_or(0, |s| s.end_ms)
    }
}

/// Seeded synthetic patient.
#[derive(Debug, Clone)]
pub struct SynthSource {
    model: PatientModel,
    script: IntentScript,
    label: String,
    rng: ChaCha8Rng,
    t_ms: u64,
    effort: f64,
    jitter: f64,
    effort_alpha: f64,
    jitter_decay: f64,
}

impl SynthSource {
    pub fn new(model: PatientModel, script: IntentScript, seed: u64) -> Result<Self, ValidationError> {
        model.validate()?;
        script.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(SOURCE_STREAM);
        // jitter correlation time tied to the ripple period
        let jitter_tau = model.ripple_period / std::f64::consts::TAU;
        Ok(Self {
            model,
            script,
            label: "custom".to_string(),
            rng,
            t_ms: 0,
            effort: 0.0,
            jitter: 0.0,
            effort_alpha: 1.0 - (-1.0 / model.contraction_rise_time).exp(),
            jitter_decay: (-1.0 / jitter_tau).exp(),
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn model(&self) -> &PatientModel {
        &self.model
    }

    /// Session time of the next sample.
    pub fn t_ms(&self) -> u64 {
        self.t_ms
    }

    /// Lagged effort after the most recent sample.
    pub fn effort(&self) -> f64 {
        self.effort
    }

    /// Produces the sample at the current time and advances by 1 ms.
    pub fn synth_next(&mut self) -> f64 {
        let t = self.t_ms;
        let m = &self.model;

        let target = self.script.target_at(t);
        self.effort += self.effort_alpha * (target - self.effort);

        // RNG draws happen unconditionally so the stream layout does not
        // depend on which terms are enabled.
        let z_noise: f64 = self.rng.sample(StandardNormal);
        let z_jitter: f64 = self.rng.sample(StandardNormal);

        let baseline = (m.rest_noise_mean + m.rest_noise_sd * z_noise).max(0.0);
        let a = self.jitter_decay;
        self.jitter = a * self.jitter + (1.0 - a * a).sqrt() * z_jitter;
        let phase = std::f64::consts::TAU * t as f64 / m.ripple_period;
        let ripple = m.ripple_amplitude * (phase.sin() + JITTER_SCALE * self.jitter);

        let v = baseline + self.effort * m.mvc_effective(t) + ripple;
        self.t_ms += 1;
        v.clamp(0.0, FULL_SCALE_VOLTS)
    }
}

impl EmgSource for SynthSource {
    fn next_volts(&mut self) -> Option<f64> {
        Some(self.synth_next())
    }

    fn descriptor(&self) -> String {
        format!("sim:{}", self.label)
    }
}

/// Plays back a recorded volts column.
#[derive(Debug, Clone)]
pub struct ReplaySource {
    volts: Vec<f64>,
    pos: usize,
    label: String,
}

impl ReplaySource {
    pub fn from_volts(volts: Vec<f64>, label: impl Into<String>) -> Self {
        Self {
            volts,
            pos: 0,
            label: label.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.volts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volts.is_empty()
    }

    pub fn remaining(&self) -> usize {
        self.volts.len() - self.pos
    }
}

impl Iterator for ReplaySource {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        let v = self.volts.get(self.pos).copied();
        if v.is_some() {
            self.pos += 1;
        }
        v
    }
}

impl EmgSource for ReplaySource {
    fn next_volts(&mut self) -> Option<f64> {
        self.next()
    }

    fn descriptor(&self) -> String {
        format!("replay:{}", self.label)
    }
}

/// Opens a session CSV for playback. Only the `t_ms` and `volts` columns are
/// required; the preamble is optional.
pub fn open_replay(path: impl AsRef<Path>) -> Result<ReplaySource, RecordError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| RecordError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let volts = record::read_volts(&text)?;
    Ok(ReplaySource::from_volts(volts, path.display().to_string()))
}
