//! Conditioned envelope to control input: quantize, normalize, smooth.
//!
//! The electrode delivers a rectified envelope in volts. Each tick the
//! sample is quantized by the 12-bit ADC, mapped onto the calibrated
//! dynamic range as a percentage, then smoothed by a moving average.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationProfile;
use crate::error::CalibrationError;

/// Full-scale input of the ADC.
pub const FULL_SCALE_VOLTS: f64 = 5.0;
/// Largest 12-bit count.
pub const ADC_MAX: u16 = 4095;
/// Default moving-average length in samples.
pub const DEFAULT_WINDOW: usize = 50;

/// One electrode reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmgSample {
    pub t_ms: u64,
    pub volts: f64,
    pub raw: u16,
}

impl EmgSample {
    pub fn new(t_ms: u64, volts: f64) -> Self {
        Self {
            t_ms,
            volts,
            raw: quantize(volts),
        }
    }
}

/// Smoothed control input, percent of the calibrated dynamic range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothedSignal {
    pub t_ms: u64,
    pub value: f64,
}

/// 12-bit quantization, rounding half up.
///
/// Inputs must already lie in `[0, 5]` V; the source clamps. Violations are a
/// contract bug and trip a debug assertion; release builds saturate.
pub fn quantize(volts: f64) -> u16 {
    debug_assert!(
        (0.0..=FULL_SCALE_VOLTS).contains(&volts),
        "quantize: {volts} V outside [0, 5]"
    );
    let scaled = (volts / FULL_SCALE_VOLTS * f64::from(ADC_MAX) + 0.5).floor();
    scaled.clamp(0.0, f64::from(ADC_MAX)) as u16
}

/// Center voltage of an ADC bin.
pub fn dequantize(raw: u16) -> f64 {
    f64::from(raw) * FULL_SCALE_VOLTS / f64::from(ADC_MAX)
}

/// Maps a raw count onto `[0, 100]` percent of the calibrated range.
pub fn normalize(raw: u16, profile: &CalibrationProfile) -> Result<f64, CalibrationError> {
    profile.validate()?;
    Ok(normalize_unchecked(raw, profile.rest_raw, profile.mvc_raw))
}

#[inline]
pub(crate) fn normalize_unchecked(raw: u16, rest_raw: u16, mvc_raw: u16) -> f64 {
    let span = f64::from(mvc_raw) - f64::from(rest_raw);
    let frac = (f64::from(raw) - f64::from(rest_raw)) / span;
    frac.clamp(0.0, 1.0) * 100.0
}

/// Causal moving average over the last `window` inputs.
///
/// Before the window fills, the mean is taken over what has been seen so far.
/// The sum is recomputed oldest-to-newest every step so the result does not
/// depend on how long the filter has been running.
#[derive(Debug, Clone, PartialEq)]
pub struct MovingAverage {
    window: usize,
    buf: VecDeque<f64>,
}

impl MovingAverage {
    pub fn new(window: usize) -> Self {
        let window = window.max(1);
        Self {
            window,
            buf: VecDeque::with_capacity(window),
        }
    }

    /// Filter whose window is already full of `value`, as after a long
    /// steady input.
    pub fn prefilled(window: usize, value: f64) -> Self {
        let mut ma = Self::new(window);
        ma.buf.extend(std::iter::repeat_n(value, ma.window));
        ma
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn step(&mut self, value: f64) -> f64 {
        if self.buf.len() == self.window {
            self.buf.pop_front();
        }
        self.buf.push_back(value);
        let sum: f64 = self.buf.iter().sum();
        sum / self.buf.len() as f64
    }

    pub fn reset(&mut self) {
        self.buf.clear();
    }
}

impl Default for MovingAverage {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW)
    }
}

/// Output of one pipeline tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineOutput {
    pub raw: u16,
    /// Smoothed percent, or `None` while no calibration profile is active.
    pub emg_percent: Option<f64>,
}

/// Stateful quantize -> normalize -> smooth chain.
///
/// Without a profile the ADC still runs (calibration needs the counts) but no
/// control input is produced and the smoother is left untouched.
#[derive(Debug, Clone)]
pub struct SignalPipeline {
    profile: Option<CalibrationProfile>,
    smoother: MovingAverage,
}

impl SignalPipeline {
    pub fn new(window: usize) -> Self {
        Self {
            profile: None,
            smoother: MovingAverage::new(window),
        }
    }

    pub fn with_profile(window: usize, profile: CalibrationProfile) -> Result<Self, CalibrationError> {
        profile.validate()?;
        Ok(Self {
            profile: Some(profile),
            smoother: MovingAverage::new(window),
        })
    }

    pub fn profile(&self) -> Option<&CalibrationProfile> {
        self.profile.as_ref()
    }

    /// Swaps in a new profile. Smoother history is kept: it already lives in
    /// percent space, which is what thresholds are expressed in.
    pub fn set_profile(&mut self, profile: CalibrationProfile) -> Result<(), CalibrationError> {
        profile.validate()?;
        self.profile = Some(profile);
        Ok(())
    }

    pub fn window(&self) -> usize {
        self.smoother.window()
    }

    pub fn step(&mut self, volts: f64) -> PipelineOutput {
        let raw = quantize(volts);
        let emg_percent = self.profile.as_ref().map(|p| {
            let pct = normalize_unchecked(raw, p.rest_raw, p.mvc_raw);
            self.smoother.step(pct)
        });
        PipelineOutput { raw, emg_percent }
    }
}
