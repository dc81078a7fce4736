//! A synthetic operator: renders gesture templates as 3D hands posed to
//! command the attitude a scripted pilot wants, closing the loop through the
//! full pipeline.

use std::time::Instant;

use serde::Serialize;

use super::{tick_time, EndReason, IngestMessage, Pipeline, PipelineConfig, SessionError, SessionReport};
use crate::command_fsm::{CommandFsm, FlightMode, PilotState};
use crate::drone_sim::{DroneState, PilotConfig, ScriptedPilot, Track};
use crate::gesture_net::{template, GestureClassifier, GestureLabel};
use crate::handpose::{Euler, HandFrame, Handedness, Vec3, NUM_LANDMARKS};

/// Meters per template unit; the template hand is about two units tall.
pub const HAND_SCALE: f64 = 0.045;

/// A right hand showing `gesture`, oriented to command `attitude` and held
/// at the depth that reads as `throttle`.
pub fn synth_hand(gesture: GestureLabel, attitude: Euler, throttle: f64, cfg: &PipelineConfig, t: f64) -> HandFrame {
    let tpl = template(gesture);
    let local: Vec<Vec3> = tpl.iter().map(|&(x, y)| Vec3::new(x, y, 0.0) * HAND_SCALE).collect();
    let m = (local[0] + local[5] + local[17]) / 3.0;
    let c = cfg.calibration;
    let depth = c.d_far - throttle.clamp(0.0, 1.0) * (c.d_far - c.d_near);
    let rot = cfg.control_frame.hand_motion_for(attitude);
    let pts: Vec<Vec3> = local.iter().map(|p| rot.rotate(p - m) + Vec3::new(0.0, 0.0, depth)).collect();
    debug_assert_eq!(pts.len(), NUM_LANDMARKS);
    HandFrame::new(t, &pts, Handedness::Right).expect("template hand is finite")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OperatorConfig {
    pub pilot: PilotConfig,
    /// Speed gesture shown before takeoff.
    pub speed_gesture: GestureLabel,
    /// Extra frames each preamble gesture is held beyond what it needs.
    pub hold: u32,
    /// Frames to show Four after the last gate.
    pub outro: u32,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        OperatorConfig {
            pilot: PilotConfig {
                max_lean: 0.3,
                max_yaw_rate: 0.4,
                ..PilotConfig::default()
            },
            speed_gesture: GestureLabel::Two,
            hold: 12,
            outro: 15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Arm,
    Speed,
    Takeoff,
    Climb,
    Engage,
    Fly,
    Stop,
    Done,
}

/// Shows thumbs up, a speed gesture, rock, then an open palm and flies the
/// track with it; ends with four.
#[derive(Debug, Clone)]
pub struct HandOperator {
    pilot: ScriptedPilot,
    cfg: OperatorConfig,
    phase: Phase,
    held: u32,
}

impl HandOperator {
    pub fn new(track: &Track, cfg: OperatorConfig) -> Self {
        HandOperator {
            pilot: ScriptedPilot::with_config(track, cfg.pilot),
            cfg,
            phase: Phase::Arm,
            held: 0,
        }
    }

    pub fn done(&self) -> bool {
        self.phase == Phase::Done
    }

    fn advance(&mut self, to: Phase) {
        self.phase = to;
        self.held = 0;
    }

    /// Hand to show for the next tick given what the pipeline reports, or
    /// `None` once finished.
    pub fn next_frame(&mut self, t: f64, drone: &DroneState, pilot: &PilotState, cfg: &PipelineConfig) -> Option<HandFrame> {
        let level = Euler::default();
        let show = |g| Some(synth_hand(g, level, 0.5, cfg, t));
        loop {
            match self.phase {
                // keep showing it a little longer so a dropped frame cannot
                // undo the command
                Phase::Arm if pilot.mode == FlightMode::Armed && self.held >= self.cfg.hold => {
                    self.advance(Phase::Speed)
                }
                Phase::Arm => {
                    if pilot.mode == FlightMode::Armed {
                        self.held += 1;
                    }
                    return show(GestureLabel::ThumbsUp);
                }
                Phase::Speed if self.held >= self.cfg.hold + cfg.debounce.frames => self.advance(Phase::Takeoff),
                Phase::Speed => {
                    self.held += 1;
                    return show(self.cfg.speed_gesture);
                }
                Phase::Takeoff if pilot.mode == FlightMode::Hovering => self.advance(Phase::Climb),
                Phase::Takeoff | Phase::Climb if pilot.mode == FlightMode::Disarmed => self.advance(Phase::Done),
                Phase::Takeoff => return show(GestureLabel::Rock),
                Phase::Climb if drone.position.z >= cfg.takeoff_altitude - 0.1 => self.advance(Phase::Engage),
                Phase::Climb => return show(GestureLabel::Rock),
                Phase::Engage if pilot.mode == FlightMode::OrientationControl => self.advance(Phase::Fly),
                Phase::Engage => return show(GestureLabel::Five),
                Phase::Fly => match self.pilot.setpoint(drone, pilot.speed_coefficient()) {
                    Some(sp) => {
                        let s = &cfg.setpoint;
                        let attitude = Euler::new(sp.roll / s.gain, sp.pitch / s.gain, sp.yaw_rate / s.yaw_gain);
                        return Some(synth_hand(GestureLabel::Five, attitude, sp.throttle, cfg, t));
                    }
                    None => self.advance(Phase::Stop),
                },
                Phase::Stop if self.held >= self.cfg.outro => self.advance(Phase::Done),
                Phase::Stop => {
                    self.held += 1;
                    return show(GestureLabel::Four);
                }
                Phase::Done => return None,
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedFlight {
    /// Every frame the operator showed, stamped with its tick time.
    pub frames: Vec<IngestMessage>,
    pub report: SessionReport,
}

/// Runs the operator live against `pipeline`, recording the frames. The
/// stream ends when the pipeline ends, the operator is done, or after
/// `max_time` seconds.
pub fn fly_with_hand(
    classifier: GestureClassifier,
    track: &Track,
    cfg: PipelineConfig,
    op: OperatorConfig,
    max_time: f64,
) -> Result<ScriptedFlight, SessionError> {
    let mut pipeline = Pipeline::new(classifier, CommandFsm::default(), track, cfg);
    let mut operator = HandOperator::new(track, op);
    let mut frames = Vec::new();
    let mut n = 0u64;
    loop {
        let t = tick_time(0.0, n);
        let frame = if t <= max_time {
            operator.next_frame(t, pipeline.drone(), pipeline.pilot(), &cfg)
        } else {
            None
        };
        let stream_over = frame.is_none() && (operator.done() || t > max_time);
        if stream_over {
            // same closing tick the replay driver runs
            pipeline.tick(None, None)?;
            break;
        }
        if let Some(f) = &frame {
            frames.push(IngestMessage::from_frame(f, Some(n)));
        }
        pipeline.tick(frame.as_ref(), frame.as_ref().map(|_| Instant::now()))?;
        n += 1;
        if pipeline.ended().is_some() {
            break;
        }
    }
    Ok(ScriptedFlight {
        frames,
        report: pipeline.finish(EndReason::IngestClosed),
    })
}
