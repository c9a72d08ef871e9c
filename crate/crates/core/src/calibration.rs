//! Rest / MVC capture and the normalization profile.

use serde::{Deserialize, Serialize};

use crate::error::CalibrationError;
use crate::pipeline::ADC_MAX;

/// Minimum capture window, one second at 1 kHz.
pub const DEFAULT_MIN_WINDOW: usize = 1000;

/// Activation threshold applied right after calibration: half the dynamic
/// range, in percent.
pub const INITIAL_THRESHOLD: f64 = 50.0;

/// Rest and MVC anchors for one session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationProfile {
    pub rest_raw: u16,
    pub mvc_raw: u16,
    /// Session time (ms) at which the profile was built.
    pub captured_at: u64,
    pub rest_window_ms: u64,
    pub mvc_window_ms: u64,
}

impl CalibrationProfile {
    pub fn new(
        rest_raw: u16,
        mvc_raw: u16,
        captured_at: u64,
        rest_window_ms: u64,
        mvc_window_ms: u64,
    ) -> Result<Self, CalibrationError> {
        let p = Self {
            rest_raw,
            mvc_raw,
            captured_at,
            rest_window_ms,
            mvc_window_ms,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        if self.rest_raw < self.mvc_raw && self.mvc_raw <= ADC_MAX {
            Ok(())
        } else {
            Err(CalibrationError::InvalidCalibration {
                rest_raw: self.rest_raw,
                mvc_raw: self.mvc_raw,
            })
        }
    }

    /// Raw count corresponding to a percent of the dynamic range.
    pub fn raw_at_percent(&self, percent: f64) -> f64 {
        f64::from(self.rest_raw) + percent / 100.0 * (f64::from(self.mvc_raw) - f64::from(self.rest_raw))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RestEstimator {
    Mean,
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MvcEstimator {
    /// Nearest-rank percentile, `p` in (0, 100].
    Percentile { p: f64 },
    Max,
}

/// Capture settings. Defaults: 1 s windows, mean at rest, 95th percentile
/// for MVC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationSettings {
    pub rest_window: usize,
    pub mvc_window: usize,
    pub min_window: usize,
    pub rest_estimator: RestEstimator,
    pub mvc_estimator: MvcEstimator,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            rest_window: DEFAULT_MIN_WINDOW,
            mvc_window: DEFAULT_MIN_WINDOW,
            min_window: DEFAULT_MIN_WINDOW,
            rest_estimator: RestEstimator::Mean,
            mvc_estimator: MvcEstimator::Percentile { p: 95.0 },
        }
    }
}

fn check_len(samples: &[u16], min_window: usize) -> Result<(), CalibrationError> {
    if samples.len() < min_window.max(1) {
        return Err(CalibrationError::InsufficientData {
            needed: min_window.max(1),
            got: samples.len(),
        });
    }
    Ok(())
}

/// Rest level: mean of the window, rounded half up.
pub fn capture_rest(samples: &[u16]) -> Result<u16, CalibrationError> {
    capture_rest_with(samples, DEFAULT_MIN_WINDOW, RestEstimator::Mean)
}

pub fn capture_rest_with(
    samples: &[u16],
    min_window: usize,
    estimator: RestEstimator,
) -> Result<u16, CalibrationError> {
    check_len(samples, min_window)?;
    let value = match estimator {
        RestEstimator::Mean => {
            let sum: u64 = samples.iter().map(|&s| u64::from(s)).sum();
            let n = samples.len() as u64;
            // round half up in integer arithmetic
            (2 * sum + n) / (2 * n)
        }
        RestEstimator::Median => {
            let mut sorted = samples.to_vec();
            sorted.sort_unstable();
            let n = sorted.len();
            if n % 2 == 1 {
                u64::from(sorted[n / 2])
            } else {
                let s = u64::from(sorted[n / 2 - 1]) + u64::from(sorted[n / 2]);
                s.div_ceil(2)
            }
        }
    };
    Ok(value as u16)
}

/// MVC level: 95th percentile (nearest rank) of the window.
pub fn capture_mvc(samples: &[u16]) -> Result<u16, CalibrationError> {
    capture_mvc_with(samples, DEFAULT_MIN_WINDOW, MvcEstimator::Percentile { p: 95.0 })
}

pub fn capture_mvc_with(
    samples: &[u16],
    min_window: usize,
    estimator: MvcEstimator,
) -> Result<u16, CalibrationError> {
    check_len(samples, min_window)?;
    match estimator {
        MvcEstimator::Max => Ok(samples.iter().copied().max().unwrap_or(0)),
        MvcEstimator::Percentile { p } => {
            let mut sorted = samples.to_vec();
            sorted.sort_unstable();
            let n = sorted.len();
            let rank = ((p.clamp(0.0, 100.0) / 100.0) * n as f64).ceil() as usize;
            Ok(sorted[rank.clamp(1, n) - 1])
        }
    }
}

/// Activation threshold for a freshly built profile, in percent.
pub fn initial_threshold(_profile: &CalibrationProfile) -> f64 {
    INITIAL_THRESHOLD
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapturePhase {
    Rest,
    Mvc,
}

/// Accumulates a capture window on the tick thread.
#[derive(Debug, Clone)]
pub struct Capture {
    phase: CapturePhase,
    started_at: u64,
    target: usize,
    samples: Vec<u16>,
}

impl Capture {
    pub fn new(phase: CapturePhase, started_at: u64, target: usize) -> Self {
        Self {
            phase,
            started_at,
            target,
            samples: Vec::with_capacity(target),
        }
    }

    pub fn phase(&self) -> CapturePhase {
        self.phase
    }

    pub fn started_at(&self) -> u64 {
        self.started_at
    }

    /// Returns `true` once the window is full.
    pub fn push(&mut self, raw: u16) -> bool {
        if self.samples.len() < self.target {
            self.samples.push(raw);
        }
        self.is_complete()
    }

    pub fn is_complete(&self) -> bool {
        self.samples.len() >= self.target
    }

    pub fn samples(&self) -> &[u16] {
        &self.samples
    }
}

/// Builds a profile from captured rest and MVC windows.
pub fn build_profile(
    rest_samples: &[u16],
    mvc_samples: &[u16],
    settings: &CalibrationSettings,
    captured_at: u64,
) -> Result<CalibrationProfile, CalibrationError> {
    let rest = capture_rest_with(rest_samples, settings.min_window, settings.rest_estimator)?;
    let mvc = capture_mvc_with(mvc_samples, settings.min_window, settings.mvc_estimator)?;
    CalibrationProfile::new(
        rest,
        mvc,
        captured_at,
        rest_samples.len() as u64,
        mvc_samples.len() as u64,
    )
}
