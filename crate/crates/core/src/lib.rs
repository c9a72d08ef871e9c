//! Real-time control engine for a single-electrode sEMG-driven robotic hand.
//!
//! Signal path, one step per millisecond:
//!
//! ```text
//! source (volts) -> quantize -> normalize (percent) -> moving average
//!     -> controller (on-off | proportional + deadband) -> reference
//!     -> simulated hand -> encoder position
//! ```
//!
//! [`session::Engine`] runs the loop, records every tick, applies operator
//! commands at tick boundaries and publishes decimated telemetry.
//! [`server::Server`] exposes the command/telemetry protocol over TCP.

pub mod analysis;
pub mod calibration;
pub mod config;
pub mod control;
pub mod error;
pub mod pipeline;
pub mod plant;
pub mod protocol;
pub mod record;
pub mod server;
pub mod session;
pub mod source;
pub mod telemetry;

pub use analysis::{compute_metrics, AnalysisOptions, HoldSegment, SessionMetrics};
pub use calibration::{capture_mvc, capture_rest, initial_threshold, CalibrationProfile};
pub use control::{
    deadband_step, onoff_hysteresis_step, onoff_step, proportional_map, rescale, ConfigPatch,
    ControlConfig, Controller, DeadbandState, Reference, Strategy,
};
pub use pipeline::{dequantize, normalize, quantize, EmgSample, MovingAverage, SignalPipeline};
pub use plant::{encoder_read, plant_step, HandState, PlantParams};
pub use record::{export_csv, import_csv, SessionRecord};
pub use session::{replay_session, run_session, Command, Engine, EngineConfig, Phase};
pub use source::{open_replay, EmgSource, IntentScript, PatientModel, ReplaySource, SynthSource};
