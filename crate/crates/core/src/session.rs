//! The 1 kHz session engine.
//!
//! One [`Engine`] owns the source, pipeline, controller and plant and is
//! advanced one tick (1 ms of simulated time) at a time. Operator commands
//! arrive either directly from the owning thread or through a
//! [`CommandHandle`] from any thread; both latch at the next tick boundary
//! and are written to the event log with the time of the first row they
//! affect. Replaying a record feeds its volts column back in and re-applies
//! its command events at the same ticks.

use std::collections::VecDeque;
use std::io::BufWriter;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, Sender};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::calibration::{build_profile, Capture, CapturePhase, CalibrationProfile, CalibrationSettings};
use crate::control::{ConfigPatch, ControlConfig, Controller, Reference, Strategy};
use crate::error::{CommandError, RecordError, ValidationError};
use crate::pipeline::{SignalPipeline, DEFAULT_WINDOW, FULL_SCALE_VOLTS};
use crate::plant::{encoder_read, plant_step, HandState, PlantParams};
use crate::record::{CsvWriter, Event, EventKind, Row, SessionHeader, SessionRecord, FORMAT_VERSION};
use crate::source::{EmgSource, ReplaySource};
use crate::telemetry::{Published, TelemetryFrame, TelemetryHub, DEFAULT_DECIMATION};

/// RNG stream of the session seed used by the encoder.
pub const ENCODER_STREAM: u64 = 2;

const LATE_TICK: Duration = Duration::from_millis(2);
const REPLY_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// No profile yet.
    Idle,
    CalibratingRest,
    CalibratingMvc,
    /// Calibrated, hand held closed.
    Ready,
    Running,
    Finished,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Phase::Idle => "idle",
            Phase::CalibratingRest => "calibrating_rest",
            Phase::CalibratingMvc => "calibrating_mvc",
            Phase::Ready => "ready",
            Phase::Running => "running",
            Phase::Finished => "finished",
        };
        f.write_str(s)
    }
}

/// Operator commands. The serialized form is the inbound wire message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    SetConfig { patch: ConfigPatch },
    SetStrategy { strategy: Strategy },
    CalibrateRest,
    CalibrateMvc,
    Start,
    Stop,
}

impl Command {
    pub fn kind(&self) -> EventKind {
        match self {
            Command::SetConfig { .. } => EventKind::SetConfig,
            Command::SetStrategy { .. } => EventKind::SetStrategy,
            Command::CalibrateRest => EventKind::CalibrateRest,
            Command::CalibrateMvc => EventKind::CalibrateMvc,
            Command::Start => EventKind::Start,
            Command::Stop => EventKind::Stop,
        }
    }

    /// Event payload: the wire form without its `type` field.
    pub fn payload(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("commands serialize");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("type");
        }
        v
    }

    /// Rebuilds a command from a logged event; `None` for derived events.
    pub fn from_event(e: &Event) -> Option<Result<Command, serde_json::Error>> {
        if !e.kind.is_command() {
            return None;
        }
        let mut v = e.payload.clone();
        if !v.is_object() {
            v = json!({});
        }
        v.as_object_mut()
            .expect("object")
            .insert("type".into(), json!(e.kind.as_str()));
        Some(serde_json::from_value(v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub config: ControlConfig,
    pub phase: Phase,
}

/// Engine parameters fixed at construction (control parameters can change
/// later through commands).
#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub control: ControlConfig,
    pub plant: PlantParams,
    pub calibration: CalibrationSettings,
    pub profile: Option<CalibrationProfile>,
    pub window: usize,
    pub decimation: u32,
    pub seed: u64,
    /// Issue `start` on the first tick.
    pub autostart: bool,
    /// Keep rows in memory (disable for long live sessions that stream to
    /// disk).
    pub keep_rows: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            control: ControlConfig::default(),
            plant: PlantParams::default(),
            calibration: CalibrationSettings::default(),
            profile: None,
            window: DEFAULT_WINDOW,
            decimation: DEFAULT_DECIMATION,
            seed: 0,
            autostart: false,
            keep_rows: true,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), ValidationError> {
        self.control.validate()?;
        self.plant.validate()?;
        if let Some(p) = &self.profile {
            p.validate()
                .map_err(|e| ValidationError::new("profile", e.to_string()))?;
        }
        if self.window == 0 {
            return Err(ValidationError::new("window", "must be >= 1"));
        }
        if self.decimation == 0 {
            return Err(ValidationError::new("decimation", "must be >= 1"));
        }
        let c = &self.calibration;
        if c.rest_window < c.min_window || c.mvc_window < c.min_window {
            return Err(ValidationError::new(
                "calibration",
                "capture windows must be at least min_window samples",
            ));
        }
        Ok(())
    }

    /// Configuration that reproduces a recorded session.
    pub fn from_header(h: &SessionHeader) -> Self {
        Self {
            control: h.config,
            plant: h.plant,
            calibration: h.calibration,
            profile: h.profile,
            window: h.window,
            decimation: h.decimation,
            seed: h.seed,
            autostart: false,
            keep_rows: true,
        }
    }
}

/// Snapshot readable from other threads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Status {
    pub phase: Phase,
    pub config: ControlConfig,
    pub t_ms: u64,
}

struct Pending {
    cmd: Command,
    reply: Option<Sender<Result<Ack, CommandError>>>,
}

/// Thread-safe entry point for commands.
#[derive(Clone)]
pub struct CommandHandle {
    tx: Sender<Pending>,
    status: Arc<Mutex<Status>>,
}

impl CommandHandle {
    /// Enqueues a command and waits for the tick thread's verdict.
    pub fn send(&self, cmd: Command) -> Result<Ack, CommandError> {
        let (tx, rx) = crossbeam_channel::bounded(1);
        self.tx
            .send(Pending { cmd, reply: Some(tx) })
            .map_err(|_| CommandError::Disconnected)?;
        rx.recv_timeout(REPLY_TIMEOUT)
            .map_err(|_| CommandError::Disconnected)?
    }

    /// Enqueues without waiting.
    pub fn submit(&self, cmd: Command) -> Result<(), CommandError> {
        self.tx
            .send(Pending { cmd, reply: None })
            .map_err(|_| CommandError::Disconnected)
    }

    pub fn status(&self) -> Status {
        *self.status.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// Wall-clock pacing statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct TickStats {
    pub ticks: u64,
    /// Ticks that started more than 2 ms after their deadline.
    pub late_ticks: u64,
    pub max_lateness_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub ticks: u64,
    pub source_exhausted: bool,
    pub stats: TickStats,
}

enum RecordItem {
    Row(Row),
    Event(Event),
}

/// Streams the record to disk on a background thread.
struct RecordStream {
    tx: Sender<RecordItem>,
    join: JoinHandle<std::io::Result<()>>,
}

impl RecordStream {
    fn open(path: &Path, header: &SessionHeader) -> Result<Self, RecordError> {
        let file = std::fs::File::create(path).map_err(|source| RecordError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut w = CsvWriter::new(BufWriter::with_capacity(1 << 20, file));
        w.write_header(header)?;
        let (tx, rx) = crossbeam_channel::unbounded::<RecordItem>();
        let join = std::thread::Builder::new()
            .name("record-writer".into())
            .spawn(move || {
                for item in rx {
                    match item {
                        RecordItem::Row(r) => w.write_row(&r)?,
                        RecordItem::Event(e) => w.write_event(&e)?,
                    }
                }
                w.flush()
            })?;
        Ok(Self { tx, join })
    }

    fn finish(self) -> std::io::Result<()> {
        drop(self.tx);
        self.join
            .join()
            .unwrap_or_else(|_| Err(std::io::Error::other("record writer panicked")))
    }
}

pub struct Engine {
    source: Box<dyn EmgSource>,
    pipeline: SignalPipeline,
    controller: Controller,
    plant_params: PlantParams,
    hand: HandState,
    encoder_rng: ChaCha8Rng,
    calibration: CalibrationSettings,
    capture: Option<Capture>,
    rest_samples: Option<Vec<u16>>,
    running: bool,
    finished: bool,
    t: u64,
    decimation: u32,
    keep_rows: bool,
    record: SessionRecord,
    stream: Option<RecordStream>,
    schedule: VecDeque<(u64, Command)>,
    cmd_tx: Sender<Pending>,
    cmd_rx: Receiver<Pending>,
    hub: TelemetryHub,
    status: Arc<Mutex<Status>>,
    status_dirty: bool,
    published_phase: Phase,
    last_row: Option<Row>,
    stats: TickStats,
}

impl Engine {
    pub fn new(config: EngineConfig, source: Box<dyn EmgSource>) -> Result<Self, ValidationError> {
        config.validate()?;
        let pipeline = match config.profile {
            Some(p) => SignalPipeline::with_profile(config.window, p)
                .map_err(|e| ValidationError::new("profile", e.to_string()))?,
            None => SignalPipeline::new(config.window),
        };
        let controller = Controller::new(config.control)?;
        let mut encoder_rng = ChaCha8Rng::seed_from_u64(config.seed);
        encoder_rng.set_stream(ENCODER_STREAM);
        let header = SessionHeader {
            format_version: FORMAT_VERSION,
            seed: config.seed,
            source: source.descriptor(),
            window: config.window,
            decimation: config.decimation,
            profile: config.profile,
            config: config.control,
            plant: config.plant,
            calibration: config.calibration,
        };
        let (cmd_tx, cmd_rx) = crossbeam_channel::unbounded();
        let phase = if config.profile.is_some() { Phase::Ready } else { Phase::Idle };
        let mut schedule = VecDeque::new();
        if config.autostart {
            schedule.push_back((0, Command::Start));
        }
        Ok(Self {
            source,
            pipeline,
            controller,
            plant_params: config.plant,
            hand: HandState::CLOSED,
            encoder_rng,
            calibration: config.calibration,
            capture: None,
            rest_samples: None,
            running: false,
            finished: false,
            t: 0,
            decimation: config.decimation,
            keep_rows: config.keep_rows,
            record: SessionRecord::new(header),
            stream: None,
            schedule,
            cmd_tx,
            cmd_rx,
            hub: TelemetryHub::new(),
            status: Arc::new(Mutex::new(Status {
                phase,
                config: config.control,
                t_ms: 0,
            })),
            status_dirty: false,
            published_phase: phase,
            last_row: None,
            stats: TickStats::default(),
        })
    }

    /// Also stream the record to `path` as it is produced.
    pub fn record_to(&mut self, path: impl AsRef<Path>) -> Result<(), RecordError> {
        let stream = RecordStream::open(path.as_ref(), &self.record.header)?;
        for e in &self.record.events {
            let _ = stream.tx.send(RecordItem::Event(e.clone()));
        }
        self.stream = Some(stream);
        Ok(())
    }

    pub fn command_handle(&self) -> CommandHandle {
        CommandHandle {
            tx: self.cmd_tx.clone(),
            status: Arc::clone(&self.status),
        }
    }

    pub fn telemetry(&self) -> TelemetryHub {
        self.hub.clone()
    }

    /// Commands to apply at given ticks (used for scripted and replayed
    /// sessions). Merged into any existing schedule in time order.
    pub fn schedule(&mut self, commands: impl IntoIterator<Item = (u64, Command)>) {
        let mut all: Vec<_> = self.schedule.drain(..).collect();
        all.extend(commands);
        all.sort_by_key(|(t, _)| *t);
        self.schedule = all.into();
    }

    pub fn t_ms(&self) -> u64 {
        self.t
    }

    pub fn config(&self) -> &ControlConfig {
        self.controller.config()
    }

    pub fn profile(&self) -> Option<&CalibrationProfile> {
        self.pipeline.profile()
    }

    pub fn hand(&self) -> HandState {
        self.hand
    }

    pub fn last_row(&self) -> Option<&Row> {
        self.last_row.as_ref()
    }

    pub fn record(&self) -> &SessionRecord {
        &self.record
    }

    pub fn stats(&self) -> TickStats {
        self.stats
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn phase(&self) -> Phase {
        if self.finished {
            Phase::Finished
        } else if let Some(c) = &self.capture {
            match c.phase() {
                CapturePhase::Rest => Phase::CalibratingRest,
                CapturePhase::Mvc => Phase::CalibratingMvc,
            }
        } else if self.running {
            Phase::Running
        } else if self.pipeline.profile().is_some() {
            Phase::Ready
        } else {
            Phase::Idle
        }
    }

    fn ack(&self) -> Ack {
        Ack {
            config: *self.controller.config(),
            phase: self.phase(),
        }
    }

    fn log(&mut self, event: Event) {
        if let Some(s) = &self.stream {
            let _ = s.tx.send(RecordItem::Event(event.clone()));
        }
        self.record.events.push(event);
    }

    /// Applies a command between ticks; it governs the next row produced.
    /// Accepted commands are logged under their own type, refused ones as
    /// `rejected`.
    pub fn handle_command(&mut self, cmd: Command) -> Result<Ack, CommandError> {
        let result = self.apply(&cmd);
        let t = self.t;
        match &result {
            Ok(_) => self.log(Event::new(t, cmd.kind(), cmd.payload())),
            Err(e) => {
                let payload = json!({
                    "command": serde_json::to_value(&cmd).unwrap_or_default(),
                    "field": e.field(),
                    "error": e.to_string(),
                });
                self.log(Event::new(t, EventKind::Rejected, payload));
            }
        }
        self.status_dirty = true;
        result
    }

    fn apply(&mut self, cmd: &Command) -> Result<Ack, CommandError> {
        if self.finished {
            return Err(CommandError::State("session finished".into()));
        }
        match cmd {
            Command::SetConfig { patch } => {
                let next = self.controller.config().patched(patch)?;
                self.controller.apply_config(next)?;
            }
            Command::SetStrategy { strategy } => {
                let patch = ConfigPatch {
                    strategy: Some(*strategy),
                    ..Default::default()
                };
                let next = self.controller.config().patched(&patch)?;
                self.controller.apply_config(next)?;
            }
            Command::CalibrateRest => {
                if self.capture.is_some() {
                    return Err(CommandError::State("calibration capture already in progress".into()));
                }
                self.capture = Some(Capture::new(CapturePhase::Rest, self.t, self.calibration.rest_window));
            }
            Command::CalibrateMvc => {
                if self.capture.is_some() {
                    return Err(CommandError::State("calibration capture already in progress".into()));
                }
                if self.rest_samples.is_none() {
                    return Err(CommandError::State("rest capture required before MVC capture".into()));
                }
                self.capture = Some(Capture::new(CapturePhase::Mvc, self.t, self.calibration.mvc_window));
            }
            Command::Start => {
                if self.running {
                    return Err(CommandError::State("already running".into()));
                }
                if self.capture.is_some() {
                    return Err(CommandError::State("calibration capture in progress".into()));
                }
                if self.pipeline.profile().is_none() {
                    return Err(CommandError::State("calibration required".into()));
                }
                self.controller.reset();
                self.running = true;
            }
            Command::Stop => {
                if !self.running {
                    return Err(CommandError::State("not running".into()));
                }
                self.running = false;
            }
        }
        Ok(self.ack())
    }

    fn complete_capture(&mut self, capture: Capture) {
        // a profile built now governs the next row
        let t = self.t + 1;
        match capture.phase() {
            CapturePhase::Rest => {
                self.rest_samples = Some(capture.samples().to_vec());
            }
            CapturePhase::Mvc => {
                let rest = self.rest_samples.as_deref().unwrap_or(&[]);
                match build_profile(rest, capture.samples(), &self.calibration, t) {
                    Ok(profile) => {
                        self.pipeline
                            .set_profile(profile)
                            .expect("build_profile returns valid profiles");
                        let payload = serde_json::to_value(profile).unwrap_or_default();
                        self.log(Event::new(t, EventKind::Calibrated, payload));
                    }
                    Err(e) => {
                        self.log(Event::new(
                            t,
                            EventKind::CalibrationFailed,
                            json!({ "error": e.to_string() }),
                        ));
                    }
                }
            }
        }
        self.status_dirty = true;
    }

    fn finish(&mut self, reason: &str) {
        if self.finished {
            return;
        }
        self.log(Event::new(self.t, EventKind::End, json!({ "reason": reason })));
        self.finished = true;
        self.running = false;
        self.status_dirty = true;
        self.publish_status();
    }

    fn publish_status(&mut self) {
        let phase = self.phase();
        if phase != self.published_phase {
            self.hub.publish(Published::Phase(phase));
            self.published_phase = phase;
        }
        if self.status_dirty {
            if let Ok(mut s) = self.status.try_lock() {
                s.phase = phase;
                s.config = *self.controller.config();
                s.t_ms = self.t;
                self.status_dirty = false;
            }
        }
    }

    /// Advances one millisecond. Returns `None` once the source is exhausted
    /// (the end is logged and the session is finished).
    pub fn tick(&mut self) -> Option<Row> {
        if self.finished {
            return None;
        }
        let t = self.t;

        while self.schedule.front().is_some_and(|(at, _)| *at <= t) {
            let (_, cmd) = self.schedule.pop_front().expect("checked");
            let _ = self.handle_command(cmd);
        }
        while let Ok(p) = self.cmd_rx.try_recv() {
            let res = self.handle_command(p.cmd);
            if let Some(reply) = p.reply {
                let _ = reply.send(res);
            }
        }

        let Some(volts) = self.source.next_volts() else {
            self.finish("source_exhausted");
            return None;
        };
        let volts = volts.clamp(0.0, FULL_SCALE_VOLTS);
        let out = self.pipeline.step(volts);

        let full = self.capture.as_mut().is_some_and(|c| c.push(out.raw));
        let captured = if full { self.capture.take() } else { None };

        let (x_percent, reference) = match (self.running, out.emg_percent) {
            (true, Some(emg)) => {
                let o = self.controller.step(emg);
                (o.x_percent, o.reference)
            }
            _ => (0.0, Reference::CLOSED),
        };
        self.hand = plant_step(self.hand, reference, 1.0, &self.plant_params);
        let position = encoder_read(&self.hand, &self.plant_params, &mut self.encoder_rng);

        let row = Row {
            t_ms: t,
            volts,
            raw: out.raw,
            emg_percent: out.emg_percent.unwrap_or(0.0),
            x_percent,
            reference: reference.value(),
            position,
        };
        if let Some(s) = &self.stream {
            let _ = s.tx.send(RecordItem::Row(row));
        }
        if self.keep_rows {
            self.record.rows.push(row);
        }
        self.last_row = Some(row);
        if let Some(done) = captured {
            self.complete_capture(done);
        }

        if t.is_multiple_of(u64::from(self.decimation)) {
            self.hub.publish(Published::Frame(TelemetryFrame {
                t_ms: t,
                emg_percent: row.emg_percent,
                reference: row.reference,
                position: row.position,
                config: *self.controller.config(),
            }));
        }
        self.t += 1;
        self.stats.ticks += 1;
        self.publish_status();
        Some(row)
    }

    /// Runs up to `duration_ms` ticks. Paced runs hold each tick to its
    /// 1 ms wall-clock slot; unpaced runs go as fast as possible.
    pub fn run(&mut self, duration_ms: u64, paced: bool) -> RunSummary {
        let start = Instant::now();
        let mut ticks = 0;
        for i in 0..duration_ms {
            if paced {
                let deadline = start + Duration::from_millis(i);
                let now = Instant::now();
                if now < deadline {
                    std::thread::sleep(deadline - now);
                } else {
                    let late = now - deadline;
                    if late > LATE_TICK {
                        self.stats.late_ticks += 1;
                    }
                    self.stats.max_lateness_us = self.stats.max_lateness_us.max(late.as_micros() as u64);
                }
            }
            if self.tick().is_none() {
                break;
            }
            ticks += 1;
        }
        RunSummary {
            ticks,
            source_exhausted: self.finished,
            stats: self.stats,
        }
    }

    /// Ends the session and returns the record, flushing any disk stream.
    pub fn into_record(mut self) -> Result<SessionRecord, RecordError> {
        self.running = false;
        if let Some(s) = self.stream.take() {
            s.finish()?;
        }
        Ok(self.record)
    }
}

/// Runs a session to completion and returns its record.
pub fn run_session(
    config: EngineConfig,
    source: Box<dyn EmgSource>,
    duration_ms: u64,
    schedule: Vec<(u64, Command)>,
) -> Result<SessionRecord, CommandError> {
    let mut engine = Engine::new(config, source)?;
    engine.schedule(schedule);
    engine.run(duration_ms, false);
    engine
        .into_record()
        .map_err(|e| CommandError::State(format!("record: {e}")))
}

/// Command events of a record, as a replay schedule.
pub fn replay_schedule(record: &SessionRecord) -> Result<Vec<(u64, Command)>, RecordError> {
    let mut out = Vec::new();
    for e in &record.events {
        // refused commands are resubmitted so the replay logs the same refusal
        let parsed = if e.kind == EventKind::Rejected {
            e.payload.get("command").map(|c| serde_json::from_value(c.clone()))
        } else {
            Command::from_event(e)
        };
        if let Some(cmd) = parsed {
            let cmd = cmd.map_err(|err| RecordError::Schema(format!("event at {}: {err}", e.t_ms)))?;
            out.push((e.t_ms, cmd));
        }
    }
    Ok(out)
}

/// Re-runs a recorded session from its header, volts column and command
/// events.
pub fn replay_session(record: &SessionRecord) -> Result<SessionRecord, RecordError> {
    let volts: Vec<f64> = record.rows.iter().map(|r| r.volts).collect();
    let n = volts.len() as u64;
    let source = ReplaySource::from_volts(volts, record.header.source.clone());
    let engine_cfg = EngineConfig::from_header(&record.header);
    let mut engine = Engine::new(engine_cfg, Box::new(source))
        .map_err(|e| RecordError::Schema(format!("header: {e}")))?;
    engine.schedule(replay_schedule(record)?);
    engine.run(n, false);
    engine.into_record()
}
