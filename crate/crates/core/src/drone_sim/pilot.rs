//! Deterministic pilot that flies a track by proportional guidance.

use serde::Serialize;

use super::{check_gate_pass, score_run, DroneState, RunRecord, SimError, Simulator, Track, GRAVITY};
use crate::command_fsm::ControlSetpoint;
use crate::handpose::{wrap_angle, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PilotConfig {
    /// Horizontal speed the pilot aims for, m/s.
    pub cruise_speed: f64,
    /// Velocity error to acceleration, 1/s.
    pub velocity_gain: f64,
    pub max_lean: f64,
    pub yaw_gain: f64,
    pub max_yaw_rate: f64,
    /// Throttle deflection per meter of altitude error.
    pub climb_gain: f64,
    /// Aim point distance behind the gate as a fraction of the remaining
    /// distance to the gate plane.
    pub lead: f64,
    /// Drag the pilot compensates for, 1/s.
    pub drag: f64,
}

impl Default for PilotConfig {
    fn default() -> Self {
        PilotConfig {
            cruise_speed: 1.5,
            velocity_gain: 1.2,
            max_lean: 0.45,
            yaw_gain: 1.5,
            max_yaw_rate: 1.0,
            climb_gain: 0.3,
            lead: 0.5,
            drag: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedPilot {
    track: Track,
    cfg: PilotConfig,
    next: usize,
    last: Option<Vec3>,
}

impl ScriptedPilot {
    pub fn new(track: &Track) -> Self {
        Self::with_config(track, PilotConfig::default())
    }

    pub fn with_config(track: &Track, cfg: PilotConfig) -> Self {
        ScriptedPilot {
            track: track.clone(),
            cfg,
            next: 0,
            last: None,
        }
    }

    pub fn gates_passed(&self) -> usize {
        self.next
    }

    pub fn done(&self) -> bool {
        self.next >= self.track.gates.len()
    }

    /// Next setpoint for the observed state, or `None` once every gate has
    /// been passed.
    pub fn setpoint(&mut self, state: &DroneState, speed_coefficient: f64) -> Option<ControlSetpoint> {
        let p = state.position;
        if let Some(prev) = self.last.replace(p) {
            while let Some(g) = self.track.gates.get(self.next) {
                if check_gate_pass(&prev, &p, g).is_none() {
                    break;
                }
                self.next += 1;
            }
        }
        let gate = self.track.gates.get(self.next)?;
        let cfg = &self.cfg;

        let flat = |v: Vec3| Vec3::new(v.x, v.y, 0.0);
        let mut n = flat(gate.normal);
        let to_gate = flat(gate.center - p);
        n = if n.norm() > 1e-6 { n.normalize() } else { to_gate.try_normalize(1e-9).unwrap_or(Vec3::x()) };
        let along = to_gate.dot(&n);
        let c = flat(gate.center);
        let aim = if along > 0.3 {
            c - n * (cfg.lead * along)
        } else if along > -0.2 {
            c + n
        } else {
            // overshot without passing: go back around
            c - n * 1.5
        };
        let dir = flat(aim - p).try_normalize(1e-9).unwrap_or(n);
        let v = flat(state.velocity);
        let accel = (dir * cfg.cruise_speed - v) * cfg.velocity_gain + v * cfg.drag;

        let (s, co) = state.yaw.sin_cos();
        let forward = accel.x * co + accel.y * s;
        let left = -accel.x * s + accel.y * co;
        let k = GRAVITY * speed_coefficient;
        let pitch = (forward / k).atan().clamp(-cfg.max_lean, cfg.max_lean);
        let roll = (-left / k).atan().clamp(-cfg.max_lean, cfg.max_lean);
        let heading = dir.y.atan2(dir.x);
        let yaw_rate = (cfg.yaw_gain * wrap_angle(heading - state.yaw)).clamp(-cfg.max_yaw_rate, cfg.max_yaw_rate);
        let throttle = 0.5 + (cfg.climb_gain * (gate.center.z - p.z)).clamp(-0.4, 0.4);

        Some(ControlSetpoint {
            roll,
            pitch,
            yaw_rate,
            throttle,
            speed_coefficient,
        })
    }
}

/// Flies the track from its start pose at the default rates and scores the
/// 30 Hz trajectory. Stops when the pilot is done or after `max_time`.
pub fn fly_scripted(track: &Track, max_time: f64) -> Result<RunRecord, SimError> {
    let mut start = DroneState::at_rest(track.start, track.start_yaw);
    start.armed = true;
    let mut sim = Simulator::new(start);
    let mut pilot = ScriptedPilot::new(track);
    let mut samples = vec![sim.sample()];
    while sim.state.time < max_time {
        let Some(sp) = pilot.setpoint(&sim.state, 1.0) else {
            break;
        };
        sim.tick(&sp)?;
        samples.push(sim.sample());
    }
    Ok(score_run(samples, track))
}
