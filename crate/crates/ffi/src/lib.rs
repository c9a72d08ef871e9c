//! C ABI over the `myoctl` engine.
//!
//! Engines are opaque heap handles created by `myo_engine_new_*` and released
//! with [`myo_engine_free`]. Fallible calls return a [`MyoStatus`]; the
//! message for the most recent failure on the calling thread is available
//! from [`myo_last_error`]. Handles are not thread-safe: drive each engine
//! from one thread at a time.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use myoctl::analysis::{compute_metrics, AnalysisOptions, HoldsFile};
use myoctl::calibration::CalibrationProfile;
use myoctl::config::ConfigFile;
use myoctl::control::{self, ControlConfig, DeadbandState, Reference, Strategy};
use myoctl::error::{CalibrationError, CommandError, ConfigError, RecordError, ValidationError};
use myoctl::plant::{HandState, PlantParams};
use myoctl::protocol::{decode_command, Outbound};
use myoctl::record::{export_csv, import_csv, Row};
use myoctl::session::{replay_schedule, Engine, EngineConfig, Phase};
use myoctl::source::{ReplaySource, SynthSource};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MyoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Malformed input: bad JSON, TOML or CSV.
    Parse = 3,
    /// A parameter is out of range; the message names the field.
    Validation = 4,
    /// Command not allowed in the current phase.
    State = 5,
    Calibration = 6,
    Io = 7,
    /// The source is exhausted; no more ticks can run.
    Finished = 8,
    /// Output buffer too small; the required size was reported.
    BufferTooSmall = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MyoPhase {
    Idle = 0,
    CalibratingRest = 1,
    CalibratingMvc = 2,
    Ready = 3,
    Running = 4,
    Finished = 5,
}

impl From<Phase> for MyoPhase {
    fn from(p: Phase) -> Self {
        match p {
            Phase::Idle => MyoPhase::Idle,
            Phase::CalibratingRest => MyoPhase::CalibratingRest,
            Phase::CalibratingMvc => MyoPhase::CalibratingMvc,
            Phase::Ready => MyoPhase::Ready,
            Phase::Running => MyoPhase::Running,
            Phase::Finished => MyoPhase::Finished,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MyoStrategy {
    OnOff = 0,
    Proportional = 1,
}

/// One recorded tick.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MyoFrame {
    pub t_ms: u64,
    pub volts: f64,
    pub raw: u16,
    pub emg_percent: f64,
    pub x_percent: f64,
    pub reference: f64,
    pub position: f64,
}

impl From<Row> for MyoFrame {
    fn from(r: Row) -> Self {
        Self {
            t_ms: r.t_ms,
            volts: r.volts,
            raw: r.raw,
            emg_percent: r.emg_percent,
            x_percent: r.x_percent,
            reference: r.reference,
            position: r.position,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MyoControlConfig {
    pub strategy: MyoStrategy,
    pub th: f64,
    pub th1: f64,
    pub th2: f64,
    pub delta: f64,
    pub hysteresis_gap: f64,
    pub literal_eq2: bool,
}

impl From<ControlConfig> for MyoControlConfig {
    fn from(c: ControlConfig) -> Self {
        Self {
            strategy: match c.strategy {
                Strategy::OnOff => MyoStrategy::OnOff,
                Strategy::Proportional => MyoStrategy::Proportional,
            },
            th: c.th,
            th1: c.th1,
            th2: c.th2,
            delta: c.delta,
            hysteresis_gap: c.hysteresis_gap,
            literal_eq2: c.literal_eq2,
        }
    }
}

impl From<MyoControlConfig> for ControlConfig {
    fn from(c: MyoControlConfig) -> Self {
        Self {
            strategy: match c.strategy {
                MyoStrategy::OnOff => Strategy::OnOff,
                MyoStrategy::Proportional => Strategy::Proportional,
            },
            th: c.th,
            th1: c.th1,
            th2: c.th2,
            delta: c.delta,
            hysteresis_gap: c.hysteresis_gap,
            literal_eq2: c.literal_eq2,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MyoDeadbandState {
    pub r: f64,
    pub last_x: f64,
}

/// Plant parameters. A `close_max_rate` of 0 or less means "same as
/// `max_rate`".
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MyoPlantParams {
    pub max_rate: f64,
    pub close_max_rate: f64,
    pub time_constant: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MyoHandState {
    pub position: f64,
    pub velocity: f64,
    pub reference: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MyoMetrics {
    pub reference_transition_count: u64,
    pub aperture_ripple_rms: f64,
    pub time_open_ms: u64,
    pub hold_failures: u64,
    pub mean_emg_during_hold: f64,
}

/// Opaque engine handle.
pub struct MyoEngine {
    engine: Engine,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(MyoStatus, String);

impl Failure {
    fn new(status: MyoStatus, msg: impl Into<String>) -> Self {
        Self(status, msg.into())
    }
}

impl From<ValidationError> for Failure {
    fn from(e: ValidationError) -> Self {
        Failure(MyoStatus::Validation, e.to_string())
    }
}

impl From<CalibrationError> for Failure {
    fn from(e: CalibrationError) -> Self {
        Failure(MyoStatus::Calibration, e.to_string())
    }
}

impl From<CommandError> for Failure {
    fn from(e: CommandError) -> Self {
        let status = match e {
            CommandError::Validation(_) => MyoStatus::Validation,
            CommandError::Calibration(_) => MyoStatus::Calibration,
            CommandError::State(_) | CommandError::Disconnected => MyoStatus::State,
        };
        Failure(status, e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let status = match e {
            ConfigError::Io { .. } => MyoStatus::Io,
            ConfigError::Syntax { .. } => MyoStatus::Parse,
            ConfigError::Validation(_) | ConfigError::UnknownPreset(_) => MyoStatus::Validation,
            ConfigError::Calibration(_) => MyoStatus::Calibration,
        };
        Failure(status, e.to_string())
    }
}

impl From<RecordError> for Failure {
    fn from(e: RecordError) -> Self {
        let status = match e {
            RecordError::Io { .. } | RecordError::Stream(_) => MyoStatus::Io,
            _ => MyoStatus::Parse,
        };
        Failure(status, e.to_string())
    }
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, converting failures and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MyoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MyoStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            MyoStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(MyoStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(MyoStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn engine_arg<'a>(p: *mut MyoEngine) -> Result<&'a mut MyoEngine, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure::new(MyoStatus::NullPointer, "engine is null"))
}

fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    unsafe { p.as_mut() }.ok_or_else(|| Failure::new(MyoStatus::NullPointer, format!("{name} is null")))
}

fn boxed(engine: Engine, out: *mut *mut MyoEngine) -> Result<(), Failure> {
    let out = out_arg(out, "out")?;
    *out = Box::into_raw(Box::new(MyoEngine { engine }));
    Ok(())
}

fn sim_engine(file: ConfigFile) -> Result<Engine, Failure> {
    let cfg = file.engine_config()?;
    let (model, label) = file.patient_model()?;
    let src = SynthSource::new(model, file.script()?, cfg.seed)?.with_label(label);
    let mut engine = Engine::new(cfg, Box::new(src))?;
    engine.schedule(file.schedule());
    Ok(engine)
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn myo_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn myo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a simulated-patient engine from a TOML config file. Relative
/// paths inside resolve against the file's directory.
#[no_mangle]
pub unsafe extern "C" fn myo_engine_new_sim(config_path: *const c_char, out: *mut *mut MyoEngine) -> MyoStatus {
    guard(|| {
        let path = str_arg(config_path, "config_path")?;
        boxed(sim_engine(ConfigFile::load(path)?)?, out)
    })
}

/// As [`myo_engine_new_sim`] but from TOML text.
#[no_mangle]
pub unsafe extern "C" fn myo_engine_new_sim_toml(config_toml: *const c_char, out: *mut *mut MyoEngine) -> MyoStatus {
    guard(|| {
        let text = str_arg(config_toml, "config_toml")?;
        boxed(sim_engine(ConfigFile::parse(text)?)?, out)
    })
}

/// Creates an engine that re-runs a recorded session: parameters come from
/// the record header and its commands are rescheduled at their recorded
/// times.
#[no_mangle]
pub unsafe extern "C" fn myo_engine_new_replay(record_path: *const c_char, out: *mut *mut MyoEngine) -> MyoStatus {
    guard(|| {
        let path = str_arg(record_path, "record_path")?;
        let rec = import_csv(path)?;
        let volts = rec.rows.iter().map(|r| r.volts).collect();
        let src = ReplaySource::from_volts(volts, rec.header.source.clone());
        let mut engine = Engine::new(EngineConfig::from_header(&rec.header), Box::new(src))?;
        engine.schedule(replay_schedule(&rec)?);
        boxed(engine, out)
    })
}

/// Releases an engine. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn myo_engine_free(engine: *mut MyoEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Streams the record to `path` from now on (events logged so far are
/// written first).
#[no_mangle]
pub unsafe extern "C" fn myo_engine_record_to(engine: *mut MyoEngine, path: *const c_char) -> MyoStatus {
    guard(|| {
        let e = engine_arg(engine)?;
        let path = str_arg(path, "path")?;
        Ok(e.engine.record_to(path)?)
    })
}

/// Runs up to `n` ticks. `ticks_run` (may be NULL) receives the number
/// actually run. Returns `Finished` once the source is exhausted.
#[no_mangle]
pub unsafe extern "C" fn myo_engine_step(engine: *mut MyoEngine, n: u64, ticks_run: *mut u64) -> MyoStatus {
    guard(|| {
        let e = engine_arg(engine)?;
        let summary = e.engine.run(n, false);
        if let Some(out) = ticks_run.as_mut() {
            *out = summary.ticks;
        }
        if summary.source_exhausted {
            return Err(Failure::new(MyoStatus::Finished, "source exhausted"));
        }
        Ok(())
    })
}

/// Applies a wire-format command (JSON object with a `type` field).
///
/// The JSON reply (`ack` or `error`) is written NUL-terminated into `reply`
/// when `reply_len` allows; `reply_needed` (may be NULL) receives the
/// size including the NUL. A refused command returns its error status with
/// the reply still written.
#[no_mangle]
pub unsafe extern "C" fn myo_engine_command(
    engine: *mut MyoEngine,
    json: *const c_char,
    reply: *mut c_char,
    reply_len: usize,
    reply_needed: *mut usize,
) -> MyoStatus {
    guard(|| {
        let e = engine_arg(engine)?;
        let text = str_arg(json, "json")?;
        let (outbound, failure) = match decode_command(text.as_bytes()) {
            Ok(cmd) => match e.engine.handle_command(cmd) {
                Ok(ack) => (Outbound::from(ack), None),
                Err(err) => {
                    let out = Outbound::from(&err);
                    (out, Some(Failure::from(err)))
                }
            },
            Err(out) => {
                let msg = match &out {
                    Outbound::Error { msg, .. } => msg.clone(),
                    _ => String::new(),
                };
                (out, Some(Failure::new(MyoStatus::Parse, msg)))
            }
        };
        let body = serde_json::to_string(&outbound).expect("outbound serializes");
        write_string(&body, reply, reply_len, reply_needed)?;
        match failure {
            Some(f) => Err(f),
            None => Ok(()),
        }
    })
}

fn write_string(s: &str, buf: *mut c_char, len: usize, needed: *mut usize) -> Result<(), Failure> {
    let need = s.len() + 1;
    if let Some(n) = unsafe { needed.as_mut() } {
        *n = need;
    }
    if buf.is_null() {
        return Ok(());
    }
    if len < need {
        return Err(Failure::new(
            MyoStatus::BufferTooSmall,
            format!("reply needs {need} bytes, buffer has {len}"),
        ));
    }
    unsafe {
        ptr::copy_nonoverlapping(s.as_ptr(), buf.cast::<u8>(), s.len());
        *buf.add(s.len()) = 0;
    }
    Ok(())
}

/// Most recent tick. Returns `State` before the first tick.
#[no_mangle]
pub unsafe extern "C" fn myo_engine_last_frame(engine: *mut MyoEngine, out: *mut MyoFrame) -> MyoStatus {
    guard(|| {
        let e = engine_arg(engine)?;
        let out = out_arg(out, "out")?;
        let row = e
            .engine
            .last_row()
            .ok_or_else(|| Failure::new(MyoStatus::State, "no tick has run yet"))?;
        *out = (*row).into();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn myo_engine_phase(engine: *mut MyoEngine, out: *mut MyoPhase) -> MyoStatus {
    guard(|| {
        let e = engine_arg(engine)?;
        *out_arg(out, "out")? = e.engine.phase().into();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn myo_engine_config(engine: *mut MyoEngine, out: *mut MyoControlConfig) -> MyoStatus {
    guard(|| {
        let e = engine_arg(engine)?;
        *out_arg(out, "out")? = (*e.engine.config()).into();
        Ok(())
    })
}

/// Writes the in-memory session record as CSV.
#[no_mangle]
pub unsafe extern "C" fn myo_engine_export_csv(engine: *mut MyoEngine, path: *const c_char) -> MyoStatus {
    guard(|| {
        let e = engine_arg(engine)?;
        let path = str_arg(path, "path")?;
        Ok(export_csv(e.engine.record(), path)?)
    })
}

/// Checks a control configuration; on failure the message names the field.
#[no_mangle]
pub unsafe extern "C" fn myo_config_validate(config: *const MyoControlConfig) -> MyoStatus {
    guard(|| {
        let c = config
            .as_ref()
            .ok_or_else(|| Failure::new(MyoStatus::NullPointer, "config is null"))?;
        Ok(ControlConfig::from(*c).validate()?)
    })
}

/// Default control configuration.
#[no_mangle]
pub extern "C" fn myo_config_default() -> MyoControlConfig {
    ControlConfig::default().into()
}

/// Stability metrics of a recorded session. `holds_toml` may be NULL (no
/// holds) or TOML text with `[[hold]]` or `[[segment]]` tables.
#[no_mangle]
pub unsafe extern "C" fn myo_analyze_csv(
    record_path: *const c_char,
    holds_toml: *const c_char,
    hold_failure_fraction: f64,
    out: *mut MyoMetrics,
) -> MyoStatus {
    guard(|| {
        let path = str_arg(record_path, "record_path")?;
        let out = out_arg(out, "out")?;
        let holds = if holds_toml.is_null() {
            Vec::new()
        } else {
            HoldsFile::parse(str_arg(holds_toml, "holds_toml")?)
                .map_err(|e| Failure::new(MyoStatus::Parse, e.to_string()))?
        };
        let rec = import_csv(Path::new(path))?;
        let m = compute_metrics(&rec, &holds, &AnalysisOptions { hold_failure_fraction })?;
        *out = MyoMetrics {
            reference_transition_count: m.reference_transition_count,
            aperture_ripple_rms: m.aperture_ripple_rms,
            time_open_ms: m.time_open_ms,
            hold_failures: m.hold_failures,
            mean_emg_during_hold: m.mean_emg_during_hold,
        };
        Ok(())
    })
}

/// 12-bit ADC count for a voltage in [0, 5].
#[no_mangle]
pub extern "C" fn myo_quantize(volts: f64) -> u16 {
    myoctl::quantize(volts.clamp(0.0, myoctl::pipeline::FULL_SCALE_VOLTS))
}

/// Percent of the rest..MVC range for an ADC count.
#[no_mangle]
pub unsafe extern "C" fn myo_normalize(raw: u16, rest_raw: u16, mvc_raw: u16, out: *mut f64) -> MyoStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let p = CalibrationProfile::new(rest_raw, mvc_raw, 0, 0, 0)?;
        *out = myoctl::normalize(raw, &p)?;
        Ok(())
    })
}

/// On-off reference: 1 when `emg > th`, else 0.
#[no_mangle]
pub extern "C" fn myo_onoff(emg: f64, th: f64) -> f64 {
    control::onoff_step(emg, th).value()
}

/// On-off with a hysteresis band of width `gap` centred on `th`.
#[no_mangle]
pub extern "C" fn myo_onoff_hysteresis(emg: f64, th: f64, gap: f64, prev: f64) -> f64 {
    control::onoff_hysteresis_step(emg, th, gap, Reference::new(prev)).value()
}

/// Driven point in percent for the proportional strategy.
#[no_mangle]
pub extern "C" fn myo_proportional_map(emg: f64, th1: f64, th2: f64, literal: bool) -> f64 {
    control::proportional_map(emg, th1, th2, literal)
}

#[no_mangle]
pub extern "C" fn myo_deadband_step(state: MyoDeadbandState, x: f64, delta: f64) -> MyoDeadbandState {
    let s = control::deadband_step(
        DeadbandState {
            r: state.r,
            last_x: state.last_x,
        },
        x,
        delta,
    );
    MyoDeadbandState { r: s.r, last_x: s.last_x }
}

/// Follower output in percent mapped onto the [0, 1] aperture reference.
#[no_mangle]
pub extern "C" fn myo_rescale(r: f64, delta: f64) -> f64 {
    control::rescale(r, delta).value()
}

/// Advances the hand model by `dt_ms` toward `reference`.
#[no_mangle]
pub unsafe extern "C" fn myo_plant_step(
    state: MyoHandState,
    reference: f64,
    dt_ms: f64,
    params: *const MyoPlantParams,
    out: *mut MyoHandState,
) -> MyoStatus {
    guard(|| {
        let p = params
            .as_ref()
            .ok_or_else(|| Failure::new(MyoStatus::NullPointer, "params is null"))?;
        let out = out_arg(out, "out")?;
        let params = PlantParams {
            max_rate: p.max_rate,
            close_max_rate: (p.close_max_rate > 0.0).then_some(p.close_max_rate),
            time_constant: p.time_constant,
            encoder_noise_sd: 0.0,
        };
        params.validate()?;
        let s = myoctl::plant_step(
            HandState {
                position: state.position,
                velocity: state.velocity,
                reference: state.reference,
            },
            Reference::new(reference),
            dt_ms,
            &params,
        );
        *out = MyoHandState {
            position: s.position,
            velocity: s.velocity,
            reference: s.reference,
        };
        Ok(())
    })
}
