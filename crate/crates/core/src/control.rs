//! EMG-to-reference control strategies.
//!
//! Two strategies map the smoothed input (percent) to the aperture
//! reference in `[0, 1]`:
//!
//! * **On-off**: the hand opens fully while the input is above a threshold,
//!   optionally with a hysteresis band centered on the threshold.
//! * **Proportional**: the input between a lower and an upper threshold is
//!   mapped linearly onto `[0, 100]`, passed through a friction-style
//!   deadband follower that ignores fluctuations smaller than `delta`, and
//!   rescaled so the follower's settled span `[delta, 100 - delta]` covers
//!   the full aperture.
//!
//! Everything upstream of [`Reference`] is in percent.

use serde::{Deserialize, Serialize};

use crate::error::ValidationError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    OnOff,
    Proportional,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::OnOff => "on_off",
            Strategy::Proportional => "proportional",
        })
    }
}

impl std::str::FromStr for Strategy {
    type Err = ValidationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "on_off" | "onoff" => Ok(Strategy::OnOff),
            "proportional" => Ok(Strategy::Proportional),
            other => Err(ValidationError::new(
                "strategy",
                format!("unknown strategy {other:?}"),
            )),
        }
    }
}

/// Tunable control parameters. All thresholds are percent of the calibrated
/// dynamic range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    pub strategy: Strategy,
    pub th: f64,
    pub th1: f64,
    pub th2: f64,
    pub delta: f64,
    pub hysteresis_gap: f64,
    /// Use `x = p * emg` instead of the clamped linear map.
    pub literal_eq2: bool,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::OnOff,
            th: 50.0,
            th1: 20.0,
            th2: 80.0,
            delta: 5.0,
            hysteresis_gap: 0.0,
            literal_eq2: false,
        }
    }
}

fn finite(field: &str, v: f64) -> Result<(), ValidationError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(ValidationError::new(field, "must be a finite number"))
    }
}

impl ControlConfig {
    pub fn validate(&self) -> Result<(), ValidationError> {
        for (name, v) in [
            ("th", self.th),
            ("th1", self.th1),
            ("th2", self.th2),
            ("delta", self.delta),
            ("hysteresis_gap", self.hysteresis_gap),
        ] {
            finite(name, v)?;
        }
        if !(0.0..=100.0).contains(&self.th) {
            return Err(ValidationError::new("th", format!("{} outside [0, 100]", self.th)));
        }
        if !(0.0..=100.0).contains(&self.th1) {
            return Err(ValidationError::new("th1", format!("{} outside [0, 100]", self.th1)));
        }
        if !(0.0..=100.0).contains(&self.th2) {
            return Err(ValidationError::new("th2", format!("{} outside [0, 100]", self.th2)));
        }
        if self.th1 >= self.th2 {
            return Err(ValidationError::new(
                "th1",
                format!("th1 ({}) must be below th2 ({})", self.th1, self.th2),
            ));
        }
        if !(0.0..50.0).contains(&self.delta) {
            return Err(ValidationError::new(
                "delta",
                format!("{} outside [0, 50)", self.delta),
            ));
        }
        if self.hysteresis_gap < 0.0 {
            return Err(ValidationError::new("hysteresis_gap", "must be >= 0"));
        }
        if self.hysteresis_gap > 0.0 {
            let half = self.hysteresis_gap / 2.0;
            if self.th - half <= 0.0 || self.th + half >= 100.0 {
                return Err(ValidationError::new(
                    "hysteresis_gap",
                    format!(
                        "band th ± gap/2 = [{}, {}] must lie strictly inside (0, 100)",
                        self.th - half,
                        self.th + half
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Returns a copy with the patch applied, validated.
    pub fn patched(&self, patch: &ConfigPatch) -> Result<ControlConfig, ValidationError> {
        let mut next = *self;
        if let Some(s) = patch.strategy {
            next.strategy = s;
        }
        if let Some(v) = patch.th {
            next.th = v;
        }
        if let Some(v) = patch.th1 {
            next.th1 = v;
        }
        if let Some(v) = patch.th2 {
            next.th2 = v;
        }
        if let Some(v) = patch.delta {
            next.delta = v;
        }
        if let Some(v) = patch.hysteresis_gap {
            next.hysteresis_gap = v;
        }
        if let Some(v) = patch.literal_eq2 {
            next.literal_eq2 = v;
        }
        next.validate()?;
        Ok(next)
    }
}

/// Partial update carried by `set_config`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigPatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<Strategy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub th: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub th1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub th2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hysteresis_gap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub literal_eq2: Option<bool>,
}

/// Normalized aperture command: 0 fully closed, 1 fully open.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Reference(f64);

impl Reference {
    pub const CLOSED: Reference = Reference(0.0);
    pub const OPEN: Reference = Reference(1.0);

    /// Clamps into `[0, 1]`.
    pub fn new(r: f64) -> Self {
        Reference(r.clamp(0.0, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_open(self) -> bool {
        self.0 > 0.0
    }
}

/// On-off: open iff `emg > th` (strict).
pub fn onoff_step(emg: f64, th: f64) -> Reference {
    if emg > th {
        Reference::OPEN
    } else {
        Reference::CLOSED
    }
}

/// On-off with a hysteresis band `th ± gap/2`. A closed hand opens above the
/// upper edge, an open hand closes below the lower edge. `gap = 0` is plain
/// on-off.
pub fn onoff_hysteresis_step(emg: f64, th: f64, gap: f64, prev: Reference) -> Reference {
    if gap <= 0.0 {
        return onoff_step(emg, th);
    }
    let half = gap / 2.0;
    if prev.is_open() {
        if emg < th - half {
            Reference::CLOSED
        } else {
            Reference::OPEN
        }
    } else if emg > th + half {
        Reference::OPEN
    } else {
        Reference::CLOSED
    }
}

/// Proportional map from EMG percent to the driven point `x` in `[0, 100]`.
///
/// Canonical: linear between `th1` (closed) and `th2` (fully open), clamped.
/// Literal: `x = p * emg` with `p = (emg - th1) / (th2 - th1)`, clamped; it
/// reaches only `th2` percent at `emg = th2`.
pub fn proportional_map(emg: f64, th1: f64, th2: f64, literal: bool) -> f64 {
    let p = (emg - th1) / (th2 - th1);
    if literal {
        (p * emg).clamp(0.0, 100.0)
    } else {
        p.clamp(0.0, 1.0) * 100.0
    }
}

/// Deadband follower state: `r` trails the driven point `last_x` by at most
/// `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DeadbandState {
    pub r: f64,
    pub last_x: f64,
}

impl DeadbandState {
    /// Hand fully closed at rest.
    pub const REST: DeadbandState = DeadbandState { r: 0.0, last_x: 0.0 };

    /// Follower already settled on `level`.
    pub fn settled_at(level: f64) -> Self {
        Self { r: level, last_x: level }
    }
}

/// One follower update. The follower stays put while `x` is within `delta`
/// of it and is dragged along at distance `delta` otherwise.
pub fn deadband_step(state: DeadbandState, x: f64, delta: f64) -> DeadbandState {
    let z = x - state.r;
    let r = if z < -delta {
        x + delta
    } else if z > delta {
        x - delta
    } else {
        state.r
    };
    DeadbandState { r, last_x: x }
}

/// Maps the follower's span `[delta, 100 - delta]` onto `[0, 1]`.
pub fn rescale(r: f64, delta: f64) -> Reference {
    Reference::new((r - delta) / (100.0 - 2.0 * delta))
}

/// Result of one controller tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    /// Driven point in percent. For on-off this is the reference scaled to
    /// percent.
    pub x_percent: f64,
    pub reference: Reference,
}

/// Stateful controller. Both strategies keep their own state across
/// configuration changes and strategy switches.
#[derive(Debug, Clone)]
pub struct Controller {
    config: ControlConfig,
    deadband: DeadbandState,
    onoff_prev: Reference,
}

impl Controller {
    pub fn new(config: ControlConfig) -> Result<Self, ValidationError> {
        config.validate()?;
        Ok(Self {
            config,
            deadband: DeadbandState::REST,
            onoff_prev: Reference::CLOSED,
        })
    }

    pub fn config(&self) -> &ControlConfig {
        &self.config
    }

    pub fn deadband(&self) -> DeadbandState {
        self.deadband
    }

    /// Replaces the parameters; internal state is untouched. Invalid
    /// configurations are rejected and the current one stays active.
    pub fn apply_config(&mut self, config: ControlConfig) -> Result<(), ValidationError> {
        config.validate()?;
        self.config = config;
        Ok(())
    }

    /// Drives the output to closed and resets the follower to rest.
    pub fn reset(&mut self) {
        self.deadband = DeadbandState::REST;
        self.onoff_prev = Reference::CLOSED;
    }

    pub fn step(&mut self, emg: f64) -> ControlOutput {
        let c = &self.config;
        match c.strategy {
            Strategy::OnOff => {
                let r = onoff_hysteresis_step(emg, c.th, c.hysteresis_gap, self.onoff_prev);
                self.onoff_prev = r;
                ControlOutput {
                    x_percent: r.value() * 100.0,
                    reference: r,
                }
            }
            Strategy::Proportional => {
                let x = proportional_map(emg, c.th1, c.th2, c.literal_eq2);
                self.deadband = deadband_step(self.deadband, x, c.delta);
                ControlOutput {
                    x_percent: x,
                    reference: rescale(self.deadband.r, c.delta),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::Strategy;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn onoff_examples() {
        assert_eq!(onoff_step(60.0, 50.0), Reference::OPEN);
        assert_eq!(onoff_step(50.0, 50.0), Reference::CLOSED);
        assert_eq!(onoff_step(0.0, 1.0), Reference::CLOSED);
    }

    #[test]
    fn hysteresis_band_edges() {
        assert_eq!(onoff_hysteresis_step(46.0, 50.0, 10.0, Reference::OPEN), Reference::OPEN);
        assert_eq!(onoff_hysteresis_step(44.0, 50.0, 10.0, Reference::OPEN), Reference::CLOSED);
        assert_eq!(onoff_hysteresis_step(54.0, 50.0, 10.0, Reference::CLOSED), Reference::CLOSED);
        assert_eq!(onoff_hysteresis_step(55.5, 50.0, 10.0, Reference::CLOSED), Reference::OPEN);
    }

    #[test]
    fn proportional_examples() {
        assert_eq!(proportional_map(20.0, 20.0, 80.0, false), 0.0);
        assert_eq!(proportional_map(80.0, 20.0, 80.0, false), 100.0);
        assert_eq!(proportional_map(50.0, 20.0, 80.0, false), 50.0);
        assert_eq!(proportional_map(80.0, 20.0, 80.0, true), 80.0);
        assert_eq!(proportional_map(5.0, 20.0, 80.0, false), 0.0);
        assert_eq!(proportional_map(95.0, 20.0, 80.0, false), 100.0);
    }

    #[test]
    fn deadband_step_through() {
        let mut s = DeadbandState::REST;
        let out: Vec<f64> = [0.0, 3.0, 6.0, 10.0, 8.0, 2.0]
            .iter()
            .map(|&x| {
                s = deadband_step(s, x, 5.0);
                s.r
            })
            .collect();
        assert_eq!(out, vec![0.0, 0.0, 1.0, 5.0, 5.0, 5.0]);
    }

    #[test]
    fn deadband_zero_delta_tracks() {
        let mut s = DeadbandState::REST;
        for x in [4.0, 90.0, 12.5, 12.5, 0.0] {
            s = deadband_step(s, x, 0.0);
            assert_eq!(s.r, x);
        }
    }

    #[test]
    fn rescale_examples() {
        assert_eq!(rescale(5.0, 5.0).value(), 0.0);
        assert_eq!(rescale(95.0, 5.0).value(), 1.0);
        assert_eq!(rescale(50.0, 5.0).value(), 0.5);
        assert_eq!(rescale(0.0, 5.0).value(), 0.0);
        assert_eq!(rescale(100.0, 5.0).value(), 1.0);
    }

    #[test]
    fn config_validation_fields() {
        let base = ControlConfig::default();
        let bad = base.patched(&ConfigPatch { th1: Some(60.0), th2: Some(40.0), ..Default::default() });
        assert_eq!(bad.unwrap_err().field, "th1");
        let bad = base.patched(&ConfigPatch { delta: Some(50.0), ..Default::default() });
        assert_eq!(bad.unwrap_err().field, "delta");
        let bad = base.patched(&ConfigPatch { th: Some(101.0), ..Default::default() });
        assert_eq!(bad.unwrap_err().field, "th");
        let bad = base.patched(&ConfigPatch { th: Some(3.0), hysteresis_gap: Some(10.0), ..Default::default() });
        assert_eq!(bad.unwrap_err().field, "hysteresis_gap");
        let bad = base.patched(&ConfigPatch { hysteresis_gap: Some(-1.0), ..Default::default() });
        assert_eq!(bad.unwrap_err().field, "hysteresis_gap");
        let bad = base.patched(&ConfigPatch { th2: Some(f64::NAN), ..Default::default() });
        assert_eq!(bad.unwrap_err().field, "th2");
        // gap = 0 places no constraint on th
        assert!(base.patched(&ConfigPatch { th: Some(0.0), ..Default::default() }).is_ok());
    }

    #[test]
    fn apply_config_preserves_state() {
        let mut c = Controller::new(ControlConfig {
            strategy: Strategy::Proportional,
            th1: 0.0,
            th2: 100.0,
            delta: 5.0,
            ..Default::default()
        })
        .unwrap();
        for _ in 0..10 {
            c.step(60.0);
        }
        let before = c.deadband();
        assert_eq!(before.r, 55.0);
        let cfg = ControlConfig { th: 30.0, ..*c.config() };
        c.apply_config(cfg).unwrap();
        assert_eq!(c.deadband(), before);
        assert_eq!(c.config().th, 30.0);

        let rejected = ControlConfig { delta: 60.0, ..*c.config() };
        assert!(c.apply_config(rejected).is_err());
        assert_eq!(c.config().delta, 5.0);
    }

    #[test]
    fn threshold_change_takes_effect_next_step() {
        let mut c = Controller::new(ControlConfig::default()).unwrap();
        assert_eq!(c.step(40.0).reference, Reference::CLOSED);
        c.apply_config(ControlConfig { th: 30.0, ..*c.config() }).unwrap();
        assert_eq!(c.step(40.0).reference, Reference::OPEN);
    }

    fn xs() -> impl proptest::strategy::Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..=100.0, 1..300)
    }

    proptest! {
        #[test]
        fn deadband_contraction(stream in xs(), delta in 0.0f64..49.0) {
            let mut s = DeadbandState::REST;
            for x in stream {
                s = deadband_step(s, x, delta);
                prop_assert!((x - s.r).abs() <= delta + 1e-12);
            }
        }

        #[test]
        fn deadband_monotone(mut stream in xs(), delta in 0.0f64..49.0, decreasing in any::<bool>()) {
            stream.sort_by(|a, b| a.partial_cmp(b).unwrap());
            if decreasing {
                stream.reverse();
            }
            let mut s = DeadbandState::settled_at(stream[0]);
            let mut prev = s.r;
            for x in stream {
                s = deadband_step(s, x, delta);
                if decreasing {
                    prop_assert!(s.r <= prev);
                } else {
                    prop_assert!(s.r >= prev);
                }
                prev = s.r;
            }
        }

        #[test]
        fn deadband_ripple_rejection(center in 10.0f64..90.0, delta in 0.5f64..10.0,
                                     offs in proptest::collection::vec(-1.0f64..=1.0, 1..200)) {
            // inputs confined to [center - delta, center + delta], r at center
            let r0 = center;
            let mut s = DeadbandState { r: r0, last_x: r0 };
            for o in offs {
                let x = (center + o * delta).clamp(center - delta, center + delta);
                s = deadband_step(s, x, delta);
                prop_assert_eq!(s.r, r0);
            }
        }

        #[test]
        fn hysteresis_gap_zero_reduces(stream in xs(), th in 0.0f64..=100.0) {
            let mut prev = Reference::CLOSED;
            for e in stream {
                let r = onoff_hysteresis_step(e, th, 0.0, prev);
                prop_assert_eq!(r, onoff_step(e, th));
                prev = r;
            }
        }

        #[test]
        fn hysteresis_chatter_bound(th in 20.0f64..80.0, gap in 2.0f64..20.0,
                                    frac in 0.0f64..0.99, phase in 0.0f64..std::f64::consts::TAU, start_open in any::<bool>()) {
            // oscillation strictly inside the band, peak-to-peak < gap
            let amp = frac * gap / 2.0;
            let mut prev = if start_open { Reference::OPEN } else { Reference::CLOSED };
            let mut transitions = 0;
            for k in 0..2000 {
                let e = th + amp * ((k as f64) * 0.05 + phase).sin();
                let r = onoff_hysteresis_step(e, th, gap, prev);
                if r != prev { transitions += 1; }
                prev = r;
            }
            prop_assert!(transitions <= 1);
        }

        #[test]
        fn outputs_bounded(stream in xs(), th1 in 0.0f64..50.0, span in 1.0f64..50.0,
                           delta in 0.0f64..49.0, literal in any::<bool>(), gap in 0.0f64..10.0) {
            let mut prop = Controller::new(ControlConfig {
                strategy: Strategy::Proportional, th1, th2: th1 + span, delta, literal_eq2: literal,
                ..Default::default()
            }).unwrap();
            let mut onoff = Controller::new(ControlConfig { hysteresis_gap: gap, ..Default::default() }).unwrap();
            for e in stream {
                let r = prop.step(e).reference.value();
                prop_assert!((0.0..=1.0).contains(&r));
                let o = onoff.step(e).reference.value();
                prop_assert!(o == 0.0 || o == 1.0);
            }
        }

        #[test]
        fn zero_delta_reduces_to_clamped_map(stream in xs(), th1 in 0.0f64..50.0, span in 1.0f64..50.0) {
            let th2 = th1 + span;
            let mut c = Controller::new(ControlConfig {
                strategy: Strategy::Proportional, th1, th2, delta: 0.0, ..Default::default()
            }).unwrap();
            for e in stream {
                let expected = proportional_map(e, th1, th2, false) / 100.0;
                prop_assert_eq!(c.step(e).reference.value(), expected);
            }
        }
    }
}
