//! Gesture debouncing, the pilot command state machine, and setpoint
//! assembly.
//!
//! Commands fire on the edge where a new stable gesture appears. A rule table
//! maps `(mode, recent stable gestures)` to a command; commands the current
//! mode does not allow are dropped with a log line so the control loop never
//! fails mid-flight.
//!
//! While in orientation control the stable gesture must stay `five` and the
//! hand must stay tracked; anything else drops the vehicle to hover before
//! any other command is considered.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gesture_net::GestureLabel;
use crate::handpose::HandPose;

/// Longest gesture sequence a rule may match.
pub const MAX_SEQUENCE: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FsmError {
    #[error("setpoints are only produced in orientation control, not {0}")]
    WrongMode(FlightMode),
    #[error("command table line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("command table: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlightMode {
    Disarmed,
    Armed,
    Hovering,
    OrientationControl,
    Landing,
}

impl FlightMode {
    pub const ALL: [FlightMode; 5] = [
        FlightMode::Disarmed,
        FlightMode::Armed,
        FlightMode::Hovering,
        FlightMode::OrientationControl,
        FlightMode::Landing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FlightMode::Disarmed => "disarmed",
            FlightMode::Armed => "armed",
            FlightMode::Hovering => "hovering",
            FlightMode::OrientationControl => "orientation_control",
            FlightMode::Landing => "landing",
        }
    }

    pub fn airborne(self) -> bool {
        matches!(
            self,
            FlightMode::Hovering | FlightMode::OrientationControl | FlightMode::Landing
        )
    }
}

impl fmt::Display for FlightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FlightMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "disarmed" => Ok(FlightMode::Disarmed),
            "armed" => Ok(FlightMode::Armed),
            "hovering" | "hover" => Ok(FlightMode::Hovering),
            "orientation_control" | "orientation" => Ok(FlightMode::OrientationControl),
            "landing" => Ok(FlightMode::Landing),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

/// Operator-selectable authority scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedLevel {
    Slow,
    Normal,
    Fast,
}

impl SpeedLevel {
    pub fn coefficient(self) -> f64 {
        match self {
            SpeedLevel::Slow => 0.5,
            SpeedLevel::Normal => 1.0,
            SpeedLevel::Fast => 1.5,
        }
    }

    pub fn from_coefficient(c: f64) -> Option<SpeedLevel> {
        [SpeedLevel::Slow, SpeedLevel::Normal, SpeedLevel::Fast]
            .into_iter()
            .find(|l| l.coefficient() == c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "command", content = "coefficient")]
pub enum PilotCommand {
    Arm,
    Disarm,
    Takeoff,
    Land,
    SetSpeed(SpeedLevel),
    EnterOrientationControl,
    Hover,
}

impl fmt::Display for PilotCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PilotCommand::Arm => f.write_str("arm"),
            PilotCommand::Disarm => f.write_str("disarm"),
            PilotCommand::Takeoff => f.write_str("takeoff"),
            PilotCommand::Land => f.write_str("land"),
            PilotCommand::SetSpeed(l) => write!(f, "speed {}", l.coefficient()),
            PilotCommand::EnterOrientationControl => f.write_str("orientation"),
            PilotCommand::Hover => f.write_str("hover"),
        }
    }
}

impl FromStr for PilotCommand {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        if let Some(rest) = s.strip_prefix("speed") {
            let c: f64 = rest
                .trim_start_matches([':', ' ', '='])
                .trim()
                .parse()
                .map_err(|_| format!("bad speed coefficient in {s:?}"))?;
            return SpeedLevel::from_coefficient(c)
                .map(PilotCommand::SetSpeed)
                .ok_or_else(|| format!("speed coefficient must be 0.5, 1.0 or 1.5, got {c}"));
        }
        match s.as_str() {
            "arm" => Ok(PilotCommand::Arm),
            "disarm" => Ok(PilotCommand::Disarm),
            "takeoff" => Ok(PilotCommand::Takeoff),
            "land" => Ok(PilotCommand::Land),
            "orientation" | "orientation_control" | "enter_orientation_control" => {
                Ok(PilotCommand::EnterOrientationControl)
            }
            "hover" => Ok(PilotCommand::Hover),
            other => Err(format!("unknown command {other:?}")),
        }
    }
}

/// The last few stable gestures, oldest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GestureHistory {
    len: u8,
    items: [GestureLabel; MAX_SEQUENCE],
}

impl Default for GestureHistory {
    fn default() -> Self {
        GestureHistory {
            len: 0,
            items: [GestureLabel::One; MAX_SEQUENCE],
        }
    }
}

impl GestureHistory {
    pub fn push(&mut self, g: GestureLabel) {
        if (self.len as usize) < MAX_SEQUENCE {
            self.items[self.len as usize] = g;
            self.len += 1;
        } else {
            self.items.rotate_left(1);
            self.items[MAX_SEQUENCE - 1] = g;
        }
    }

    pub fn as_slice(&self) -> &[GestureLabel] {
        &self.items[..self.len as usize]
    }
}

impl Serialize for GestureHistory {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.as_slice().serialize(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct PilotState {
    pub mode: FlightMode,
    pub speed: SpeedLevel,
    /// Output of the debouncer for the latest frame.
    pub stable_gesture: Option<GestureLabel>,
    /// Consecutive confident frames agreeing with `candidate`.
    pub stability_counter: u32,
    pub candidate: Option<GestureLabel>,
    /// Stable gesture the state machine last reacted to.
    pub acted_gesture: Option<GestureLabel>,
    pub history: GestureHistory,
}

impl Default for PilotState {
    fn default() -> Self {
        PilotState {
            mode: FlightMode::Disarmed,
            speed: SpeedLevel::Normal,
            stable_gesture: None,
            stability_counter: 0,
            candidate: None,
            acted_gesture: None,
            history: GestureHistory::default(),
        }
    }
}

impl PilotState {
    pub fn speed_coefficient(&self) -> f64 {
        self.speed.coefficient()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DebounceConfig {
    pub frames: u32,
    pub min_confidence: f64,
}

impl Default for DebounceConfig {
    fn default() -> Self {
        DebounceConfig {
            frames: 8,
            min_confidence: 0.8,
        }
    }
}

/// Feeds one classifier output (or `None` when no hand was seen) and returns
/// the gesture once it has been seen confidently for `frames` frames in a
/// row. Low-confidence frames and missing hands reset the count.
pub fn debounce(
    state: &mut PilotState,
    prediction: Option<(GestureLabel, f64)>,
    cfg: &DebounceConfig,
) -> Option<GestureLabel> {
    match prediction {
        Some((label, conf)) if conf >= cfg.min_confidence => {
            if state.candidate == Some(label) {
                state.stability_counter = state.stability_counter.saturating_add(1);
            } else {
                state.candidate = Some(label);
                state.stability_counter = 1;
            }
        }
        _ => {
            state.candidate = None;
            state.stability_counter = 0;
        }
    }
    state.stable_gesture = if state.stability_counter >= cfg.frames {
        state.candidate
    } else {
        None
    };
    state.stable_gesture
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandRule {
    /// Empty means any mode.
    pub modes: Vec<FlightMode>,
    pub sequence: Vec<GestureLabel>,
    pub command: PilotCommand,
}

impl CommandRule {
    fn matches(&self, mode: FlightMode, history: &[GestureLabel]) -> bool {
        (self.modes.is_empty() || self.modes.contains(&mode)) && history.ends_with(&self.sequence)
    }
}

/// Default gesture-to-command rules.
pub const DEFAULT_COMMAND_TABLE: &str = "\
# mode(s), gesture sequence, command
disarmed,                    thumbs_up, arm
armed,                       thumbs_up, disarm
landing,                     thumbs_up, disarm
armed,                       rock,      takeoff
hovering|orientation,        okay,      land
disarmed|armed|hovering,     one,       speed 0.5
disarmed|armed|hovering,     two,       speed 1.0
disarmed|armed|hovering,     three,     speed 1.5
hovering,                    five,      orientation
hovering|orientation,        four,      hover
";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandTable {
    pub rules: Vec<CommandRule>,
}

impl Default for CommandTable {
    fn default() -> Self {
        DEFAULT_COMMAND_TABLE.parse().expect("built-in command table parses")
    }
}

impl FromStr for CommandTable {
    type Err = FsmError;

    /// One rule per line: `modes, gestures, command`. Modes are separated by
    /// `|` (`*` for any), gestures in a sequence by `+`.
    fn from_str(text: &str) -> Result<Self, FsmError> {
        let mut rules = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| FsmError::Config { line: i + 1, msg };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let [modes, gestures, command] = fields[..] else {
                return Err(bad(format!("expected 3 comma-separated fields, got {}", fields.len())));
            };
            let modes = if modes == "*" {
                Vec::new()
            } else {
                modes
                    .split('|')
                    .map(str::parse)
                    .collect::<Result<Vec<FlightMode>, _>>()
                    .map_err(bad)?
            };
            let sequence = gestures
                .split('+')
                .map(str::parse)
                .collect::<Result<Vec<GestureLabel>, _>>()
                .map_err(bad)?;
            if sequence.is_empty() || sequence.len() > MAX_SEQUENCE {
                return Err(bad(format!("sequences hold 1 to {MAX_SEQUENCE} gestures")));
            }
            let command = command.parse().map_err(bad)?;
            rules.push(CommandRule {
                modes,
                sequence,
                command,
            });
        }
        Ok(CommandTable { rules })
    }
}

impl CommandTable {
    pub fn load(path: &Path) -> Result<Self, FsmError> {
        std::fs::read_to_string(path)
            .map_err(|e| FsmError::Io(format!("{}: {e}", path.display())))?
            .parse()
    }

    /// Longest matching sequence wins; among equals, the first listed.
    pub fn lookup(&self, mode: FlightMode, history: &[GestureLabel]) -> Option<PilotCommand> {
        let mut best: Option<&CommandRule> = None;
        for rule in self.rules.iter().filter(|r| r.matches(mode, history)) {
            if best.is_none_or(|b| rule.sequence.len() > b.sequence.len()) {
                best = Some(rule);
            }
        }
        best.map(|r| r.command)
    }
}

/// Applies a command's mode transition; returns false when the current mode
/// does not allow it.
fn apply(state: &mut PilotState, cmd: PilotCommand) -> bool {
    use FlightMode::*;
    let next = match (cmd, state.mode) {
        (PilotCommand::Arm, Disarmed) => Armed,
        (PilotCommand::Disarm, m) if m != Disarmed => Disarmed,
        (PilotCommand::Takeoff, Armed) => Hovering,
        (PilotCommand::Land, Hovering | OrientationControl) => Landing,
        (PilotCommand::SetSpeed(level), m @ (Disarmed | Armed | Hovering)) => {
            state.speed = level;
            m
        }
        (PilotCommand::EnterOrientationControl, Armed | Hovering) => OrientationControl,
        (PilotCommand::Hover, Hovering | OrientationControl | Landing) => Hovering,
        _ => return false,
    };
    state.mode = next;
    true
}

#[derive(Debug, Clone, Default)]
pub struct CommandFsm {
    pub table: CommandTable,
}

impl CommandFsm {
    pub fn new(table: CommandTable) -> Self {
        CommandFsm { table }
    }

    /// Advances the machine by one tick and returns the commands emitted, in
    /// order.
    pub fn step(
        &self,
        state: &mut PilotState,
        stable: Option<GestureLabel>,
        pose: Option<&HandPose>,
    ) -> Vec<PilotCommand> {
        let mut out = Vec::new();
        if state.mode == FlightMode::OrientationControl
            && (stable != Some(GestureLabel::Five) || pose.is_none())
        {
            state.mode = FlightMode::Hovering;
            out.push(PilotCommand::Hover);
        }

        if stable != state.acted_gesture {
            state.acted_gesture = stable;
            if let Some(g) = stable {
                state.history.push(g);
                if let Some(cmd) = self.table.lookup(state.mode, state.history.as_slice()) {
                    let mode = state.mode;
                    let blind = cmd == PilotCommand::EnterOrientationControl && pose.is_none();
                    if !blind && apply(state, cmd) {
                        if out.last() != Some(&cmd) {
                            out.push(cmd);
                        }
                    } else {
                        tracing::debug!(%cmd, %mode, gesture = %g, "command not allowed in this mode; ignored");
                    }
                }
            }
        }
        out
    }

    /// Touchdown at the end of a landing.
    pub fn on_landed(&self, state: &mut PilotState) {
        if state.mode == FlightMode::Landing {
            state.mode = FlightMode::Armed;
        }
    }
}

/// Pure form of [`CommandFsm::step`].
pub fn step_fsm(
    fsm: &CommandFsm,
    state: &PilotState,
    stable: Option<GestureLabel>,
    pose: Option<&HandPose>,
) -> (PilotState, Vec<PilotCommand>) {
    let mut next = *state;
    let out = fsm.step(&mut next, stable, pose);
    (next, out)
}

/// Attitude and throttle command handed to the vehicle each tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlSetpoint {
    pub roll: f64,
    pub pitch: f64,
    pub yaw_rate: f64,
    pub throttle: f64,
    pub speed_coefficient: f64,
}

impl ControlSetpoint {
    pub fn hover(speed_coefficient: f64) -> Self {
        ControlSetpoint {
            roll: 0.0,
            pitch: 0.0,
            yaw_rate: 0.0,
            throttle: 0.5,
            speed_coefficient,
        }
    }

    pub fn is_hover(&self) -> bool {
        self.roll == 0.0 && self.pitch == 0.0 && self.yaw_rate == 0.0 && self.throttle == 0.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetpointConfig {
    /// Hand angle to lean angle gain.
    pub gain: f64,
    /// Hand yaw (rad) to yaw rate (rad/s) gain.
    pub yaw_gain: f64,
    pub max_lean: f64,
    pub max_yaw_rate: f64,
    /// Hand angles within this band read as zero.
    pub deadband: f64,
}

impl Default for SetpointConfig {
    fn default() -> Self {
        SetpointConfig {
            gain: 1.0,
            yaw_gain: 1.0,
            max_lean: 0.6,
            max_yaw_rate: 1.5,
            deadband: 0.05,
        }
    }
}

fn dead(v: f64, band: f64) -> f64 {
    if v.abs() <= band {
        0.0
    } else {
        v
    }
}

/// Linear map from hand attitude (already in the vehicle control frame) to
/// a setpoint. The speed coefficient rides along and scales acceleration in
/// the vehicle model.
pub fn make_setpoint(pose: &HandPose, state: &PilotState, cfg: &SetpointConfig) -> Result<ControlSetpoint, FsmError> {
    if state.mode != FlightMode::OrientationControl {
        return Err(FsmError::WrongMode(state.mode));
    }
    let e = pose.euler;
    let lean = |a: f64| (cfg.gain * dead(a, cfg.deadband)).clamp(-cfg.max_lean, cfg.max_lean);
    Ok(ControlSetpoint {
        roll: lean(e.roll),
        pitch: lean(e.pitch),
        yaw_rate: (cfg.yaw_gain * dead(e.yaw, cfg.deadband)).clamp(-cfg.max_yaw_rate, cfg.max_yaw_rate),
        throttle: pose.throttle.clamp(0.0, 1.0),
        speed_coefficient: state.speed_coefficient(),
    })
}
