//! The 30 Hz control loop: landmark frames in, setpoints to the simulator,
//! telemetry out.
//!
//! Each tick consumes at most one frame (the newest one available), runs
//! pose estimation, gesture classification, debouncing and the command state
//! machine, turns the result into a setpoint and advances the simulator by
//! one tick. The same [`Pipeline`] is driven by the live server and by
//! replay files, so a recorded log reproduces a live run exactly.

mod operator;
mod replay;

pub use operator::{fly_with_hand, synth_hand, HandOperator, OperatorConfig, ScriptedFlight, HAND_SCALE};
pub use replay::{read_replay, record_stream, replay_session, replay_session_with, ReplayWriter};

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::command_fsm::{
    debounce, make_setpoint, CommandFsm, CommandTable, ControlSetpoint, DebounceConfig, FlightMode, FsmError,
    PilotCommand, PilotState, SetpointConfig,
};
use crate::drone_sim::{
    DroneState, DynamicsConfig, GateEvent, RaceScorer, RecordHeader, RunRecord, SimError, Simulator, Track,
    TrajectorySample, TICK_HZ,
};
use crate::gesture_net::{load_model, write_model, FeatureVector, GestureClassifier, GestureLabel};
use crate::handpose::{
    estimate_pose, ControlFrame, DepthCalibration, HandFrame, HandPose, Handedness, PoseError, Vec3, NUM_LANDMARKS,
};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("replay line {line}: {msg}")]
    ReplayFormat { line: usize, msg: String },
    #[error("bad ingest message: {0}")]
    BadMessage(String),
    #[error("model: {0}")]
    ModelLoad(String),
    #[error("track: {0}")]
    TrackLoad(String),
    #[error("command table: {0}")]
    CommandTable(#[from] FsmError),
    #[error("calibration: {0}")]
    Calibration(#[from] PoseError),
    #[error("simulator: {0}")]
    Sim(#[from] SimError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One hand observation on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestMessage {
    pub v: u32,
    /// Capture time, seconds.
    pub t: f64,
    pub hand: Handedness,
    pub landmarks: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
}

impl IngestMessage {
    pub fn from_frame(frame: &HandFrame, id: Option<u64>) -> Self {
        IngestMessage {
            v: PROTOCOL_VERSION,
            t: frame.timestamp,
            hand: frame.handedness,
            landmarks: frame.landmarks.iter().map(|p| [p.x, p.y, p.z]).collect(),
            id,
        }
    }

    pub fn parse(text: &str) -> Result<Self, SessionError> {
        let msg: IngestMessage = serde_json::from_str(text).map_err(|e| SessionError::BadMessage(e.to_string()))?;
        msg.validate()?;
        Ok(msg)
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        if self.v != PROTOCOL_VERSION {
            return Err(SessionError::BadMessage(format!("unsupported version {}", self.v)));
        }
        if !self.t.is_finite() {
            return Err(SessionError::BadMessage("timestamp is not finite".into()));
        }
        if self.landmarks.len() != NUM_LANDMARKS {
            return Err(SessionError::BadMessage(format!(
                "expected {NUM_LANDMARKS} landmarks, got {}",
                self.landmarks.len()
            )));
        }
        self.to_frame().map(|_| ())
    }

    pub fn to_frame(&self) -> Result<HandFrame, SessionError> {
        let pts: Vec<Vec3> = self.landmarks.iter().map(|&p| Vec3::from(p)).collect();
        HandFrame::new(self.t, &pts, self.hand).map_err(|e| SessionError::BadMessage(e.to_string()))
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("ingest message serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DroneSnapshot {
    pub p: [f64; 3],
    pub v: [f64; 3],
    /// `w, x, y, z`
    pub q: [f64; 4],
    pub yaw: f64,
    pub armed: bool,
}

impl From<&DroneState> for DroneSnapshot {
    fn from(s: &DroneState) -> Self {
        let q = s.attitude;
        DroneSnapshot {
            p: [s.position.x, s.position.y, s.position.z],
            v: [s.velocity.x, s.velocity.y, s.velocity.z],
            q: [q.w, q.x, q.y, q.z],
            yaw: s.yaw,
            armed: s.armed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GestureReading {
    /// Raw classifier output for this tick's frame.
    pub label: Option<GestureLabel>,
    pub confidence: Option<f64>,
    /// Debounced gesture.
    pub stable: Option<GestureLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateProgress {
    pub passed: usize,
    pub total: usize,
    pub events: Vec<GateEvent>,
}

/// Per-tick state sent to clients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TelemetryMessage {
    pub v: u32,
    #[serde(rename = "type")]
    pub kind: &'static str,
    pub tick: u64,
    /// Simulation time, seconds.
    pub t: f64,
    pub drone: DroneSnapshot,
    pub gesture: GestureReading,
    pub mode: FlightMode,
    pub speed: f64,
    pub setpoint: ControlSetpoint,
    pub commands: Vec<String>,
    pub gates: GateProgress,
    pub finished: bool,
}

impl TelemetryMessage {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("telemetry serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    TrackComplete,
    Landed,
    IngestClosed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub calibration: DepthCalibration,
    pub control_frame: ControlFrame,
    pub debounce: DebounceConfig,
    pub setpoint: SetpointConfig,
    pub dynamics: DynamicsConfig,
    /// Altitude the drone climbs to after takeoff, m.
    pub takeoff_altitude: f64,
    /// Throttle held while landing.
    pub landing_throttle: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            calibration: DepthCalibration::default(),
            control_frame: ControlFrame::default(),
            debounce: DebounceConfig::default(),
            setpoint: SetpointConfig::default(),
            dynamics: DynamicsConfig::default(),
            takeoff_altitude: 1.5,
            landing_throttle: 0.2,
        }
    }
}

/// Start time of tick `n` for a stream whose first frame arrived at `t0`.
pub fn tick_time(t0: f64, n: u64) -> f64 {
    t0 + n as f64 / TICK_HZ as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionReport {
    pub record: RunRecord,
    pub end: EndReason,
    pub ticks: u64,
    pub frames_used: u64,
    pub frames_dropped: u64,
    pub final_mode: FlightMode,
    /// Longest time from frame arrival to setpoint application.
    pub max_latency: Duration,
}

pub struct Pipeline {
    classifier: GestureClassifier,
    fsm: CommandFsm,
    cfg: PipelineConfig,
    pilot: PilotState,
    sim: Simulator,
    scorer: RaceScorer,
    samples: Vec<TrajectorySample>,
    climb_target: Option<f64>,
    setpoint: ControlSetpoint,
    end: Option<EndReason>,
    frames_used: u64,
    frames_dropped: u64,
    max_latency: Duration,
}

impl Pipeline {
    pub fn new(classifier: GestureClassifier, fsm: CommandFsm, track: &Track, cfg: PipelineConfig) -> Self {
        let mut sim = Simulator::new(DroneState::at_rest(track.start, track.start_yaw));
        sim.config = cfg.dynamics;
        Pipeline {
            classifier,
            fsm,
            cfg,
            pilot: PilotState::default(),
            sim,
            scorer: RaceScorer::new(track),
            samples: Vec::new(),
            climb_target: None,
            setpoint: ControlSetpoint::hover(1.0),
            end: None,
            frames_used: 0,
            frames_dropped: 0,
            max_latency: Duration::ZERO,
        }
    }

    pub fn drone(&self) -> &DroneState {
        &self.sim.state
    }

    pub fn pilot(&self) -> &PilotState {
        &self.pilot
    }

    pub fn ticks(&self) -> u64 {
        self.sim.ticks()
    }

    pub fn ended(&self) -> Option<EndReason> {
        self.end
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    /// Counts frames that arrived but were superseded before a tick.
    pub fn note_dropped(&mut self, n: u64) {
        self.frames_dropped += n;
    }

    /// Runs one control tick on the newest frame, if any. `received` is when
    /// the frame arrived, for latency accounting.
    pub fn tick(&mut self, frame: Option<&HandFrame>, received: Option<Instant>) -> Result<TelemetryMessage, SessionError> {
        if self.samples.is_empty() {
            self.samples.push(self.sim.sample());
            self.scorer.push(self.sim.state.time, self.sim.state.position);
        }
        if frame.is_some() {
            self.frames_used += 1;
        }
        let pose = frame.and_then(|f| self.pose(f));
        let prediction = frame.and_then(|f| {
            self.classifier
                .classify(&FeatureVector::from_frame(&f.canonical()))
                .ok()
        });
        let stable = debounce(&mut self.pilot, prediction, &self.cfg.debounce);
        let commands = self.fsm.step(&mut self.pilot, stable, pose.as_ref());
        for cmd in &commands {
            self.apply(*cmd);
        }

        self.setpoint = self.choose_setpoint(pose.as_ref());
        let state = *self.sim.tick(&self.setpoint)?;
        if let Some(at) = received {
            let latency = at.elapsed();
            self.max_latency = self.max_latency.max(latency);
            tracing::trace!(latency_us = latency.as_micros() as u64, "frame to setpoint");
        }
        self.samples.push(self.sim.sample());
        let new_gates = self.scorer.push(state.time, state.position);
        if new_gates > 0 {
            tracing::info!(passed = self.scorer.events().len(), t = state.time, "gate passed");
        }

        if self.pilot.mode == FlightMode::Landing && state.on_ground() {
            self.fsm.on_landed(&mut self.pilot);
            self.end.get_or_insert(EndReason::Landed);
        }
        if self.scorer.finished() && !self.scorer.track().gates.is_empty() {
            self.end.get_or_insert(EndReason::TrackComplete);
        }

        Ok(TelemetryMessage {
            v: PROTOCOL_VERSION,
            kind: "telemetry",
            tick: self.sim.ticks(),
            t: state.time,
            drone: DroneSnapshot::from(&state),
            gesture: GestureReading {
                label: prediction.map(|p| p.0),
                confidence: prediction.map(|p| p.1),
                stable,
            },
            mode: self.pilot.mode,
            speed: self.pilot.speed_coefficient(),
            setpoint: self.setpoint,
            commands: commands.iter().map(|c| c.to_string()).collect(),
            gates: GateProgress {
                passed: self.scorer.events().len(),
                total: self.scorer.track().gates.len(),
                events: self.scorer.events().to_vec(),
            },
            finished: self.scorer.finished(),
        })
    }

    fn pose(&self, frame: &HandFrame) -> Option<HandPose> {
        estimate_pose(frame, &self.cfg.calibration)
            .and_then(|p| p.in_control_frame(&self.cfg.control_frame))
            .ok()
    }

    fn apply(&mut self, cmd: PilotCommand) {
        tracing::info!(%cmd, mode = %self.pilot.mode, "command");
        match cmd {
            PilotCommand::Arm => self.sim.state.armed = true,
            PilotCommand::Disarm => {
                self.sim.state.armed = false;
                self.climb_target = None;
            }
            PilotCommand::Takeoff => self.climb_target = Some(self.cfg.takeoff_altitude),
            PilotCommand::Land | PilotCommand::EnterOrientationControl => self.climb_target = None,
            PilotCommand::SetSpeed(_) | PilotCommand::Hover => {}
        }
    }

    fn choose_setpoint(&mut self, pose: Option<&HandPose>) -> ControlSetpoint {
        let c = self.pilot.speed_coefficient();
        let mut sp = ControlSetpoint::hover(c);
        match self.pilot.mode {
            FlightMode::OrientationControl => {
                if let Some(p) = pose {
                    sp = make_setpoint(p, &self.pilot, &self.cfg.setpoint).unwrap_or(sp);
                }
            }
            FlightMode::Hovering => {
                if let Some(target) = self.climb_target {
                    let err = target - self.sim.state.position.z;
                    if err <= 0.05 {
                        self.climb_target = None;
                    } else {
                        sp.throttle = 0.5 + (0.3 * err).clamp(0.1, 0.4);
                    }
                }
            }
            FlightMode::Landing => sp.throttle = self.cfg.landing_throttle,
            FlightMode::Disarmed | FlightMode::Armed => {}
        }
        sp
    }

    /// Closes the run. `reason` applies unless the pipeline already ended on
    /// its own.
    pub fn finish(self, reason: EndReason) -> SessionReport {
        let end = self.end.unwrap_or(reason);
        let record = RunRecord {
            gate_events: self.scorer.events().to_vec(),
            metrics: self.scorer.metrics(),
            samples: self.samples,
        };
        tracing::info!(
            ?end,
            ticks = self.sim.ticks(),
            max_latency_us = self.max_latency.as_micros() as u64,
            "session ended"
        );
        SessionReport {
            record,
            end,
            ticks: self.sim.ticks(),
            frames_used: self.frames_used,
            frames_dropped: self.frames_dropped,
            final_mode: self.pilot.mode,
            max_latency: self.max_latency,
        }
    }
}

/// Single-slot mailbox holding the newest value; writers replace, the reader
/// takes.
#[derive(Debug, Default)]
pub struct LatestSlot<T> {
    inner: Mutex<SlotInner<T>>,
}

#[derive(Debug)]
struct SlotInner<T> {
    value: Option<T>,
    replaced: u64,
    closed: bool,
}

impl<T> Default for SlotInner<T> {
    fn default() -> Self {
        SlotInner {
            value: None,
            replaced: 0,
            closed: false,
        }
    }
}

impl<T> LatestSlot<T> {
    pub fn new() -> Self {
        LatestSlot {
            inner: Mutex::new(SlotInner::default()),
        }
    }

    /// Stores `value`, returning true if it overwrote an unread one.
    pub fn put(&self, value: T) -> bool {
        let mut g = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let replaced = g.value.replace(value).is_some();
        if replaced {
            g.replaced += 1;
        }
        replaced
    }

    /// The newest unread value and how many were overwritten since the last
    /// take.
    pub fn take(&self) -> (Option<T>, u64) {
        let mut g = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let dropped = std::mem::take(&mut g.replaced);
        (g.value.take(), dropped)
    }

    pub fn close(&self) {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).closed = true;
    }

    pub fn is_closed(&self) -> bool {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).closed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum IngestSource {
    Socket(String),
    Replay(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub source: IngestSource,
    pub model: PathBuf,
    /// Built-in track when unset.
    pub track: Option<PathBuf>,
    pub calibration: DepthCalibration,
    /// Built-in command table when unset.
    pub commands: Option<PathBuf>,
    pub record: Option<PathBuf>,
}

pub fn load_classifier(path: &Path) -> Result<GestureClassifier, SessionError> {
    let model = load_model(path).map_err(|e| SessionError::ModelLoad(format!("{}: {e}", path.display())))?;
    if model.input_dim() != crate::gesture_net::NUM_FEATURES || model.output_dim() != crate::gesture_net::NUM_CLASSES {
        return Err(SessionError::ModelLoad(format!(
            "{}: layer sizes {:?} do not fit 42 inputs and 8 classes",
            path.display(),
            model.layer_sizes()
        )));
    }
    Ok(GestureClassifier::new(model, true))
}

pub fn load_track(path: Option<&Path>) -> Result<Track, SessionError> {
    match path {
        Some(p) => Track::load(p).map_err(|e| SessionError::TrackLoad(format!("{}: {e}", p.display()))),
        None => Ok(Track::default()),
    }
}

pub fn load_command_table(path: Option<&Path>) -> Result<CommandTable, SessionError> {
    Ok(match path {
        Some(p) => CommandTable::load(p)?,
        None => CommandTable::default(),
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Header for a session's run record: track hash plus everything that
/// shapes the run.
pub fn record_header(track: &Track, classifier: &GestureClassifier, table: &CommandTable, cfg: &PipelineConfig) -> RecordHeader {
    let mut model = Vec::new();
    write_model(&classifier.model, &mut model).expect("in-memory write");
    let table_text: Vec<String> = table.rules.iter().map(|r| format!("{r:?}")).collect();
    RecordHeader {
        track_sha256: track.sha256(),
        config: serde_json::json!({
            "model_sha256": sha256_hex(&model),
            "commands_sha256": sha256_hex(table_text.join("\n").as_bytes()),
            "pipeline": cfg,
        }),
    }
}

/// Loads everything named in `config` and replays its log. Socket sources
/// are served by the network front end.
pub fn run_session(config: &SessionConfig) -> Result<SessionReport, SessionError> {
    config.calibration.validate()?;
    let classifier = load_classifier(&config.model)?;
    let track = load_track(config.track.as_deref())?;
    let table = load_command_table(config.commands.as_deref())?;
    let IngestSource::Replay(log) = &config.source else {
        return Err(SessionError::BadMessage("run_session replays files; serve sockets with the server".into()));
    };
    let frames = read_replay(std::fs::File::open(log).map(std::io::BufReader::new)?)?;
    let cfg = PipelineConfig {
        calibration: config.calibration,
        ..PipelineConfig::default()
    };
    let header = record_header(&track, &classifier, &table, &cfg);
    let pipeline = Pipeline::new(classifier, CommandFsm::new(table), &track, cfg);
    let report = replay_session(&frames, pipeline)?;
    if let Some(path) = &config.record {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        crate::drone_sim::write_record(&report.record, &header, f)?;
    }
    Ok(report)
}
