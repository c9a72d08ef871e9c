//! Stability metrics over session records.

use serde::{Deserialize, Serialize};

use crate::error::ValidationError;
use crate::record::SessionRecord;
use crate::source::IntentScript;

/// Interval `[start_ms, end_ms)` during which the patient is meant to hold a
/// steady aperture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoldSegment {
    pub start_ms: u64,
    pub end_ms: u64,
}

impl HoldSegment {
    pub fn new(start_ms: u64, end_ms: u64) -> Self {
        Self { start_ms, end_ms }
    }

    /// Holds from a script's non-zero effort segments, skipping `settle_ms`
    /// at the start of each for the contraction to build up.
    pub fn from_script(script: &IntentScript, settle_ms: u64) -> Vec<HoldSegment> {
        script
            .segments()
            .iter()
            .filter(|s| s.effort > 0.0 && s.start_ms + settle_ms < s.end_ms)
            .map(|s| HoldSegment::new(s.start_ms + settle_ms, s.end_ms))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    /// A hold fails when the aperture drops below this fraction of the
    /// segment's peak.
    pub hold_failure_fraction: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            hold_failure_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    /// Number of tick-to-tick changes of the reference.
    pub reference_transition_count: u64,
    /// RMS of tick-to-tick reference increments inside the hold segments
    /// (whole record when none are given).
    pub aperture_ripple_rms: f64,
    /// Ticks with a non-zero (opening) reference.
    pub time_open_ms: u64,
    /// Drops of the measured aperture below the failure fraction of the
    /// segment peak, summed over holds.
    pub hold_failures: u64,
    pub mean_emg_during_hold: f64,
}

pub fn compute_metrics(
    record: &SessionRecord,
    holds: &[HoldSegment],
    opts: &AnalysisOptions,
) -> Result<SessionMetrics, ValidationError> {
    let rows = &record.rows;
    let Some(first) = rows.first() else {
        return Ok(SessionMetrics::default());
    };
    let t0 = first.t_ms;
    let t_end = t0 + rows.len() as u64;
    for (i, h) in holds.iter().enumerate() {
        if h.start_ms >= h.end_ms || h.start_ms < t0 || h.end_ms > t_end {
            return Err(ValidationError::new(
                format!("hold[{i}]"),
                format!(
                    "[{}, {}) is empty or outside the record span [{t0}, {t_end})",
                    h.start_ms, h.end_ms
                ),
            ));
        }
    }

    let reference_transition_count = rows
        .windows(2)
        .filter(|w| w[0].reference != w[1].reference)
        .count() as u64;
    let time_open_ms = rows.iter().filter(|r| r.reference > 0.0).count() as u64;

    let whole = [HoldSegment::new(t0, t_end)];
    let ripple_spans: &[HoldSegment] = if holds.is_empty() { &whole } else { holds };
    let (mut sq, mut n) = (0.0, 0u64);
    for h in ripple_spans {
        let seg = &rows[(h.start_ms - t0) as usize..(h.end_ms - t0) as usize];
        for w in seg.windows(2) {
            let d = w[1].reference - w[0].reference;
            sq += d * d;
            n += 1;
        }
    }
    let aperture_ripple_rms = if n == 0 { 0.0 } else { (sq / n as f64).sqrt() };

    let mut hold_failures = 0;
    let (mut emg_sum, mut emg_n) = (0.0, 0u64);
    for h in holds {
        let seg = &rows[(h.start_ms - t0) as usize..(h.end_ms - t0) as usize];
        emg_sum += seg.iter().map(|r| r.emg_percent).sum::<f64>();
        emg_n += seg.len() as u64;
        let peak = seg.iter().map(|r| r.position).fold(0.0, f64::max);
        if peak <= 0.0 {
            continue;
        }
        let floor = opts.hold_failure_fraction * peak;
        let mut reached = false;
        let mut below = false;
        for r in seg {
            if r.position >= floor {
                reached = true;
                below = false;
            } else if reached && !below {
                hold_failures += 1;
                below = true;
            }
        }
    }
    let mean_emg_during_hold = if emg_n == 0 { 0.0 } else { emg_sum / emg_n as f64 };

    Ok(SessionMetrics {
        reference_transition_count,
        aperture_ripple_rms,
        time_open_ms,
        hold_failures,
        mean_emg_during_hold,
    })
}

/// Holds file: `[[hold]]` tables, or `[[segment]]` tables as in a script
/// file (used as-is).
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoldsFile {
    #[serde(default)]
    pub hold: Vec<HoldSegment>,
    #[serde(default)]
    segment: Vec<crate::source::Segment>,
}

impl HoldsFile {
    pub fn parse(text: &str) -> Result<Vec<HoldSegment>, toml::de::Error> {
        let f: HoldsFile = toml::from_str(text)?;
        let mut out = f.hold;
        out.extend(f.segment.iter().map(|s| HoldSegment::new(s.start_ms, s.end_ms)));
        out.sort_by_key(|h| h.start_ms);
        Ok(out)
    }
}
