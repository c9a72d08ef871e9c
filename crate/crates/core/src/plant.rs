//! Simulated single-actuator hand: position loop and encoder.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::control::Reference;
use crate::error::ValidationError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    /// Opening slew limit, aperture fraction per second.
    pub max_rate: f64,
    /// Closing slew limit; `None` uses `max_rate`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub close_max_rate: Option<f64>,
    /// First-order lag, milliseconds.
    pub time_constant: f64,
    pub encoder_noise_sd: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            max_rate: 1.0,
            close_max_rate: None,
            time_constant: 80.0,
            encoder_noise_sd: 0.0,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if !(self.max_rate.is_finite() && self.max_rate > 0.0) {
            return Err(ValidationError::new("max_rate", "must be > 0"));
        }
        if let Some(c) = self.close_max_rate {
            if !(c.is_finite() && c > 0.0) {
                return Err(ValidationError::new("close_max_rate", "must be > 0"));
            }
        }
        if !(self.time_constant.is_finite() && self.time_constant > 0.0) {
            return Err(ValidationError::new("time_constant", "must be > 0"));
        }
        if !(self.encoder_noise_sd.is_finite() && self.encoder_noise_sd >= 0.0) {
            return Err(ValidationError::new("encoder_noise_sd", "must be >= 0"));
        }
        Ok(())
    }

    fn closing_rate(&self) -> f64 {
        self.close_max_rate.unwrap_or(self.max_rate)
    }

    /// Worst-case time for a full stroke in either direction, ms.
    pub fn full_stroke_ms(&self) -> f64 {
        1000.0 / self.max_rate.min(self.closing_rate())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HandState {
    pub position: f64,
    /// Aperture fraction per second over the last step.
    pub velocity: f64,
    pub reference: f64,
}

impl HandState {
    /// Fully closed and at rest.
    pub const CLOSED: HandState = HandState {
        position: 0.0,
        velocity: 0.0,
        reference: 0.0,
    };
}

/// Advances the hand by `dt_ms`.
///
/// The lag is integrated exactly over the step, so the position never
/// passes the reference; the slew limit then caps the distance covered.
pub fn plant_step(state: HandState, reference: Reference, dt_ms: f64, params: &PlantParams) -> HandState {
    debug_assert!(dt_ms > 0.0);
    let target = reference.value();
    let err = target - state.position;
    let lag_step = err * (1.0 - (-dt_ms / params.time_constant).exp());
    let limit = if err >= 0.0 { params.max_rate } else { params.closing_rate() } * dt_ms / 1000.0;
    let step = lag_step.clamp(-limit, limit);
    let position = (state.position + step).clamp(0.0, 1.0);
    HandState {
        position,
        velocity: (position - state.position) * 1000.0 / dt_ms,
        reference: target,
    }
}

/// Position plus Gaussian noise, clamped to `[0, 1]`.
pub fn encoder_read<R: Rng + ?Sized>(state: &HandState, params: &PlantParams, rng: &mut R) -> f64 {
    if params.encoder_noise_sd <= 0.0 {
        return state.position;
    }
    let noise = Normal::new(0.0, params.encoder_noise_sd)
        .map(|n| n.sample(rng))
        .unwrap_or(0.0);
    (state.position + noise).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(mut s: HandState, r: f64, ms: usize, p: &PlantParams) -> HandState {
        for _ in 0..ms {
            s = plant_step(s, Reference::new(r), 1.0, p);
        }
        s
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let p = PlantParams::default();
        let s = HandState { position: 0.4, velocity: 0.0, reference: 0.4 };
        let next = plant_step(s, Reference::new(0.4), 1.0, &p);
        assert_eq!(next.position, 0.4);
        assert_eq!(next.velocity, 0.0);
    }

    #[test]
    fn saturated_slew_half_second() {
        let p = PlantParams::default();
        let s = run(HandState::CLOSED, 1.0, 500, &p);
        assert!((s.position - 0.5).abs() < 1e-9, "{}", s.position);
        assert!((s.velocity - 1.0).abs() < 1e-6);
    }

    #[test]
    fn settles_on_held_reference() {
        let p = PlantParams::default();
        // full-stroke slew plus well over five time constants
        let s = run(HandState::CLOSED, 1.0, 1000 + 10 * 80, &p);
        assert!((1.0 - s.position).abs() < 1e-3);
    }

    #[test]
    fn asymmetric_closing_rate() {
        let p = PlantParams { close_max_rate: Some(0.5), ..Default::default() };
        let open = HandState { position: 1.0, velocity: 0.0, reference: 1.0 };
        let s = run(open, 0.0, 500, &p);
        assert!((s.position - 0.75).abs() < 1e-9);
    }

    #[test]
    fn encoder_noiseless_and_clamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = HandState { position: 0.3, ..HandState::CLOSED };
        assert_eq!(encoder_read(&s, &PlantParams::default(), &mut rng), 0.3);

        let noisy = PlantParams { encoder_noise_sd: 0.5, ..Default::default() };
        let closed = HandState::CLOSED;
        for _ in 0..200 {
            let v = encoder_read(&closed, &noisy, &mut rng);
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn encoder_deterministic_for_seed() {
        let p = PlantParams { encoder_noise_sd: 0.01, ..Default::default() };
        let s = HandState { position: 0.5, ..HandState::CLOSED };
        let read = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..5).map(|_| encoder_read(&s, &p, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(read(9), read(9));
        assert_ne!(read(9), read(10));
    }

    #[test]
    fn validation() {
        assert_eq!(PlantParams { max_rate: 0.0, ..Default::default() }.validate().unwrap_err().field, "max_rate");
        assert_eq!(PlantParams { time_constant: -1.0, ..Default::default() }.validate().unwrap_err().field, "time_constant");
        assert_eq!(PlantParams { encoder_noise_sd: -0.1, ..Default::default() }.validate().unwrap_err().field, "encoder_noise_sd");
    }

    proptest! {
        #[test]
        fn position_stays_in_unit_interval(refs in proptest::collection::vec(0.0f64..=1.0, 1..500),
                                           dt in 0.1f64..50.0, tau in 1.0f64..500.0, rate in 0.1f64..20.0) {
            let p = PlantParams { max_rate: rate, time_constant: tau, ..Default::default() };
            let mut s = HandState::CLOSED;
            for r in refs {
                s = plant_step(s, Reference::new(r), dt, &p);
                prop_assert!((0.0..=1.0).contains(&s.position));
                prop_assert!(s.velocity.abs() <= rate + 1e-9);
            }
        }

        #[test]
        fn never_ahead_of_monotone_reference(mut refs in proptest::collection::vec(0.0f64..=1.0, 1..300)) {
            refs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let p = PlantParams::default();
            let mut s = HandState::CLOSED;
            for r in refs {
                s = plant_step(s, Reference::new(r), 1.0, &p);
                prop_assert!(s.position <= r);
            }
        }
    }
}
