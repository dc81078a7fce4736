//! Point-mass quadrotor in a position-hold style flight mode, the race track,
//! and race scoring.
//!
//! World frame is ENU (z up), body frame is forward-left-up. Roll and pitch
//! setpoints are tracked instantly; a positive pitch tilts the nose down and
//! accelerates forward, a positive roll accelerates to the right. The
//! horizontal and vertical channels are linear between setpoint changes, so a
//! step integrates them in closed form and the result does not depend on the
//! step size.

mod pilot;
mod score;
mod track;

pub use pilot::{fly_scripted, PilotConfig, ScriptedPilot};
pub use score::{
    check_gate_pass, mean_metrics, score_run, write_record, GateEvent, RaceScorer, RecordHeader, RunMetrics,
    RunRecord, TrajectorySample,
};
pub use track::{Gate, Track, DEFAULT_TRACK};

use serde::Serialize;
use thiserror::Error;

use crate::command_fsm::ControlSetpoint;
use crate::handpose::{wrap_angle, Euler, Quat, Vec3};

pub const GRAVITY: f64 = 9.81;
pub const MAX_DT: f64 = 0.02;
pub const PHYSICS_HZ: u32 = 100;
pub const TICK_HZ: u32 = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("drone is not armed")]
    NotArmed,
    #[error("timestep {0} s outside (0, {MAX_DT}]")]
    BadTimestep(f64),
    #[error("track line {line}: {msg}")]
    TrackFormat { line: usize, msg: String },
    #[error("gate {index}: {msg}")]
    InvalidGate { index: usize, msg: String },
    #[error("track file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DynamicsConfig {
    /// Linear drag, 1/s.
    pub drag: f64,
    /// Extra drag applied while both lean setpoints are zero.
    pub brake: f64,
    /// Vertical speed at full throttle deflection, m/s.
    pub max_climb: f64,
    /// Time constant of the vertical speed loop, s.
    pub climb_tau: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            drag: 0.5,
            brake: 2.0,
            max_climb: 2.0,
            climb_tau: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DroneState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub attitude: Quat,
    /// Heading, kept alongside `attitude` so it integrates without
    /// round-tripping through Euler angles.
    pub yaw: f64,
    pub armed: bool,
    pub time: f64,
}

impl DroneState {
    pub fn at_rest(position: Vec3, yaw: f64) -> Self {
        DroneState {
            position,
            velocity: Vec3::zeros(),
            attitude: Quat::from_euler(Euler::new(0.0, 0.0, yaw)),
            yaw: wrap_angle(yaw),
            armed: false,
            time: 0.0,
        }
    }

    pub fn on_ground(&self) -> bool {
        self.position.z <= 0.0 && self.velocity.z <= 0.0
    }

    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.velocity.norm_squared()
    }
}

/// `x' = u - k x` over `dt` with `u` held: returns the new `x` and the
/// integral of `x` over the step.
fn first_order(x: f64, u: f64, k: f64, dt: f64) -> (f64, f64) {
    let steady = u / k;
    let decay = (-k * dt).exp();
    let x1 = steady + (x - steady) * decay;
    let integral = steady * dt + (x - steady) * (-(-k * dt).exp_m1()) / k;
    (x1, integral)
}

pub fn step_dynamics(state: &DroneState, sp: &ControlSetpoint, dt: f64) -> Result<DroneState, SimError> {
    step_dynamics_with(state, sp, dt, &DynamicsConfig::default())
}

pub fn step_dynamics_with(
    state: &DroneState,
    sp: &ControlSetpoint,
    dt: f64,
    cfg: &DynamicsConfig,
) -> Result<DroneState, SimError> {
    if !(dt > 0.0 && dt <= MAX_DT) {
        return Err(SimError::BadTimestep(dt));
    }
    let mut next = *state;
    next.time = state.time + dt;

    if !state.armed {
        if !sp.is_hover() {
            return Err(SimError::NotArmed);
        }
        // no thrust: ballistic fall, drag on the horizontal
        for i in 0..2 {
            let (v, dx) = first_order(state.velocity[i], 0.0, cfg.drag, dt);
            next.velocity[i] = v;
            next.position[i] += dx;
        }
        next.velocity.z = state.velocity.z - GRAVITY * dt;
        next.position.z = state.position.z + state.velocity.z * dt - 0.5 * GRAVITY * dt * dt;
        next.attitude = Quat::from_euler(Euler::new(0.0, 0.0, state.yaw));
        ground_contact(state, &mut next);
        return Ok(next);
    }

    let yaw_mid = state.yaw + 0.5 * sp.yaw_rate * dt;
    next.yaw = wrap_angle(state.yaw + sp.yaw_rate * dt);

    let forward = GRAVITY * sp.pitch.tan() * sp.speed_coefficient;
    let left = -GRAVITY * sp.roll.tan() * sp.speed_coefficient;
    let (s, c) = yaw_mid.sin_cos();
    let accel = [forward * c - left * s, forward * s + left * c];
    let k = if sp.roll == 0.0 && sp.pitch == 0.0 {
        cfg.drag + cfg.brake
    } else {
        cfg.drag
    };
    for i in 0..2 {
        let (v, dx) = first_order(state.velocity[i], accel[i], k, dt);
        next.velocity[i] = v;
        next.position[i] += dx;
    }

    let climb = ((sp.throttle - 0.5) / 0.5).clamp(-1.0, 1.0) * cfg.max_climb;
    let kz = 1.0 / cfg.climb_tau;
    let (vz, dz) = first_order(state.velocity.z, climb * kz, kz, dt);
    next.velocity.z = vz;
    next.position.z += dz;

    next.attitude = Quat::from_euler(Euler::new(sp.roll, sp.pitch, next.yaw)).normalized();
    ground_contact(state, &mut next);
    Ok(next)
}

fn ground_contact(prev: &DroneState, next: &mut DroneState) {
    if next.position.z <= 0.0 {
        next.position.z = 0.0;
        next.velocity.z = next.velocity.z.max(0.0);
    }
    if next.on_ground() {
        next.position.x = prev.position.x;
        next.position.y = prev.position.y;
        next.velocity.x = 0.0;
        next.velocity.y = 0.0;
    }
}

/// Runs physics at a fixed rate under setpoints that change at a slower tick
/// rate, holding each setpoint until the next tick.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub state: DroneState,
    pub config: DynamicsConfig,
    physics_hz: u32,
    tick_hz: u32,
    steps: u64,
    ticks: u64,
}

impl Simulator {
    pub fn new(state: DroneState) -> Self {
        Simulator {
            state,
            config: DynamicsConfig::default(),
            physics_hz: PHYSICS_HZ,
            tick_hz: TICK_HZ,
            steps: 0,
            ticks: 0,
        }
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    /// Advances to the physics step at or just after the next tick.
    pub fn tick(&mut self, sp: &ControlSetpoint) -> Result<&DroneState, SimError> {
        let target = ((self.ticks + 1) * self.physics_hz as u64).div_ceil(self.tick_hz as u64);
        let dt = 1.0 / self.physics_hz as f64;
        let start = self.state.time - self.steps as f64 * dt;
        let mut state = self.state;
        for step in self.steps..target {
            state = step_dynamics_with(&state, sp, dt, &self.config)?;
            // avoid accumulating rounding in the clock
            state.time = start + (step + 1) as f64 * dt;
        }
        self.state = state;
        self.steps = target;
        self.ticks += 1;
        Ok(&self.state)
    }

    pub fn sample(&self) -> TrajectorySample {
        TrajectorySample {
            time: self.state.time,
            position: self.state.position,
            attitude: self.state.attitude,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flying(z: f64) -> DroneState {
        DroneState {
            armed: true,
            ..DroneState::at_rest(Vec3::new(1.0, 2.0, z), 0.3)
        }
    }

    fn sp(roll: f64, pitch: f64, yaw_rate: f64, throttle: f64) -> ControlSetpoint {
        ControlSetpoint {
            roll,
            pitch,
            yaw_rate,
            throttle,
            speed_coefficient: 1.0,
        }
    }

    #[test]
    fn first_order_matches_fine_euler() {
        let (x, int) = first_order(0.3, 2.0, 0.5, 1.0);
        let (mut xe, mut ie) = (0.3, 0.0);
        let h = 1e-6;
        for _ in 0..1_000_000 {
            ie += xe * h;
            xe += (2.0 - 0.5 * xe) * h;
        }
        assert!((x - xe).abs() < 1e-5 && (int - ie).abs() < 1e-5);
    }

    #[test]
    fn unarmed_drone_refuses_commands() {
        let s = DroneState::at_rest(Vec3::zeros(), 0.0);
        assert_eq!(step_dynamics(&s, &sp(0.0, 0.1, 0.0, 0.5), 0.01), Err(SimError::NotArmed));
        let next = step_dynamics(&s, &ControlSetpoint::hover(1.0), 0.01).unwrap();
        assert_eq!(next.position, s.position);
    }

    #[test]
    fn timestep_bounds() {
        let s = flying(1.0);
        for dt in [0.0, -0.01, 0.021, f64::NAN] {
            assert!(matches!(step_dynamics(&s, &ControlSetpoint::hover(1.0), dt), Err(SimError::BadTimestep(_))));
        }
        assert!(step_dynamics(&s, &ControlSetpoint::hover(1.0), 0.02).is_ok());
    }

    #[test]
    fn positive_pitch_flies_forward_and_positive_roll_right() {
        let mut s = DroneState {
            armed: true,
            ..DroneState::at_rest(Vec3::new(0.0, 0.0, 1.0), 0.0)
        };
        let start = s.position;
        for _ in 0..100 {
            s = step_dynamics(&s, &sp(0.0, 0.2, 0.0, 0.5), 0.01).unwrap();
        }
        assert!(s.position.x - start.x > 0.5 && (s.position.y - start.y).abs() < 1e-12);
        let start = s.position;
        for _ in 0..100 {
            s = step_dynamics(&s, &sp(0.2, 0.0, 0.0, 0.5), 0.01).unwrap();
        }
        assert!(s.position.y - start.y < -0.5);
    }

    #[test]
    fn full_throttle_climbs_at_the_limit() {
        let mut s = flying(0.0);
        for _ in 0..500 {
            s = step_dynamics(&s, &sp(0.0, 0.0, 0.0, 1.0), 0.01).unwrap();
        }
        assert!((s.velocity.z - 2.0).abs() < 1e-6);
    }

    #[test]
    fn ground_stops_descent() {
        let mut s = flying(0.2);
        for _ in 0..300 {
            s = step_dynamics(&s, &sp(0.0, 0.0, 0.0, 0.0), 0.01).unwrap();
            assert!(s.position.z >= 0.0);
        }
        assert!(s.on_ground());
        assert_eq!(s.velocity.z, 0.0);
    }

    #[test]
    fn yaw_rate_integrates() {
        let mut s = flying(1.0);
        for _ in 0..100 {
            s = step_dynamics(&s, &sp(0.0, 0.0, 0.5, 0.5), 0.01).unwrap();
        }
        assert!((s.yaw - 0.8).abs() < 1e-12);
        let e = s.attitude.to_euler().unwrap();
        assert!((e.yaw - 0.8).abs() < 1e-9);
    }

    #[test]
    fn simulator_lands_ticks_on_the_physics_grid() {
        let mut sim = Simulator::new(flying(1.0));
        let mut last = 0.0;
        for n in 1..=90u64 {
            let t = sim.tick(&ControlSetpoint::hover(1.0)).unwrap().time;
            assert!(t >= n as f64 / 30.0 - 1e-12 && t - last <= 0.04 + 1e-12);
            last = t;
        }
        assert!((last - 3.0).abs() < 1e-12);
    }
}
