use handpilot::command_fsm::ControlSetpoint;
use handpilot::drone_sim::*;
use handpilot::handpose::{Quat, Vec3};
use nalgebra::{Rotation3, Unit};
use proptest::prelude::*;

fn sp(roll: f64, pitch: f64, yaw_rate: f64, throttle: f64, c: f64) -> ControlSetpoint {
    ControlSetpoint {
        roll,
        pitch,
        yaw_rate,
        throttle,
        speed_coefficient: c,
    }
}

fn armed_at(p: Vec3) -> DroneState {
    DroneState {
        armed: true,
        ..DroneState::at_rest(p, 0.0)
    }
}

fn run(state: DroneState, dt: f64, seconds: f64, f: impl Fn(f64) -> ControlSetpoint) -> DroneState {
    let steps = (seconds / dt).round() as usize;
    let mut s = state;
    for i in 0..steps {
        s = step_dynamics(&s, &f(i as f64 * dt), dt).unwrap();
    }
    s
}

#[test]
fn hover_from_rest_stays_put() {
    for z in [0.0, 1.5] {
        let s0 = armed_at(Vec3::new(0.3, -0.2, z));
        let s = run(s0, 0.01, 10.0, |_| ControlSetpoint::hover(1.0));
        assert!((s.position - s0.position).norm() < 1e-6);
    }
}

#[test]
fn terminal_speed_matches_drag_balance() {
    // g tan(theta) c = k v at equilibrium
    let expected = GRAVITY * 0.1f64.tan() / 0.5;
    assert!((expected - 1.967).abs() < 5e-3);
    let s = run(armed_at(Vec3::new(0.0, 0.0, 2.0)), 0.01, 30.0, |_| sp(0.0, 0.1, 0.0, 0.5, 1.0));
    let v = s.velocity.xy().norm();
    assert!((v - expected).abs() / expected < 0.01, "{v} vs {expected}");
}

#[test]
fn speed_coefficient_scales_terminal_speed() {
    for c in [0.5, 1.5] {
        let s = run(armed_at(Vec3::new(0.0, 0.0, 2.0)), 0.01, 30.0, |_| sp(0.0, 0.1, 0.0, 0.5, c));
        let expected = GRAVITY * 0.1f64.tan() * c / 0.5;
        assert!((s.velocity.xy().norm() - expected).abs() / expected < 0.01);
    }
}

/// Setpoints switch every 0.25 s, on both step grids.
fn schedule(t: f64) -> ControlSetpoint {
    let block = (t / 0.25 + 1e-9).floor() as i64;
    let a = (block as f64 * 0.7).sin();
    let b = (block as f64 * 1.3).cos();
    sp(0.3 * a, 0.25 * b, 0.6 * a * b, 0.5 + 0.4 * b, 1.0)
}

#[test]
fn halving_the_step_moves_the_endpoint_less_than_a_millimeter() {
    let s0 = armed_at(Vec3::new(0.0, 0.0, 1.0));
    let coarse = run(s0, 0.01, 10.0, schedule);
    let fine = run(s0, 0.005, 10.0, schedule);
    let drift = (coarse.position - fine.position).norm();
    assert!(drift < 1e-3, "drift {drift}");
    assert!(coarse.position.xy().norm() > 1.0, "schedule should actually move the drone");
}

#[test]
fn zero_setpoint_brakes_to_a_stop() {
    let mut s = run(armed_at(Vec3::new(0.0, 0.0, 2.0)), 0.01, 10.0, |_| sp(0.3, 0.4, 0.0, 0.9, 1.5));
    assert!(s.speed() > 2.0);
    s = run(s, 0.01, 5.0, |_| ControlSetpoint::hover(1.0));
    assert!(s.speed() < 0.01, "{}", s.speed());
}

/// Arc length of the trajectory up to `t_end`, interpolating the last
/// partial segment.
fn polyline_length_until(samples: &[TrajectorySample], t_end: f64) -> f64 {
    let mut total = 0.0;
    for w in samples.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if b.time <= t_end {
            total += (b.position - a.position).norm();
        } else {
            if a.time < t_end {
                let f = (t_end - a.time) / (b.time - a.time);
                total += (b.position - a.position).norm() * f;
            }
            break;
        }
    }
    total
}

#[test]
fn scripted_run_metrics_match_polyline_oracle() {
    let track = Track::default();
    let r = fly_scripted(&track, 300.0).unwrap();
    assert!(r.metrics.finished);
    assert_eq!(r.gate_events.len(), 10);
    for (i, e) in r.gate_events.iter().enumerate() {
        assert_eq!(e.index, i + 1);
    }
    let t_end = r.gate_events.last().unwrap().time;
    let t0 = r.samples[0].time;
    assert!((r.metrics.completion_time - (t_end - t0)).abs() < 1e-9);
    let oracle = polyline_length_until(&r.samples, t_end);
    assert!((r.metrics.path_length - oracle).abs() < 1e-9, "{} vs {oracle}", r.metrics.path_length);
    let m = r.metrics;
    assert!((m.average_velocity * m.completion_time - m.path_length).abs() < 1e-9);
    // sample times advance at the 30 Hz tick
    for w in r.samples.windows(2) {
        let dt = w[1].time - w[0].time;
        assert!(dt > 0.025 && dt < 0.045);
    }
}

#[test]
fn scripted_runs_are_deterministic() {
    let a = fly_scripted(&Track::default(), 300.0).unwrap();
    let b = fly_scripted(&Track::default(), 300.0).unwrap();
    assert_eq!(a, b);
}

fn arb_setpoint() -> impl Strategy<Value = ControlSetpoint> {
    (-0.6..0.6f64, -0.6..0.6f64, -1.5..1.5f64, 0.0..1.0f64, prop::sample::select(vec![0.5, 1.0, 1.5]))
        .prop_map(|(r, p, y, t, c)| sp(r, p, y, t, c))
}

fn arb_state() -> impl Strategy<Value = DroneState> {
    (
        prop::array::uniform3(-5.0..5.0f64),
        prop::array::uniform3(-3.0..3.0f64),
        -3.0..3.0f64,
    )
        .prop_map(|(p, v, yaw)| {
            let mut s = armed_at(Vec3::new(p[0], p[1], p[2].abs() + 0.5));
            s.velocity = Vec3::from(v);
            s.yaw = yaw;
            s
        })
}

proptest! {
    #[test]
    fn kinetic_energy_never_grows_under_hover(s in arb_state(), steps in 1usize..400) {
        let mut s = s;
        for _ in 0..steps {
            let next = step_dynamics(&s, &ControlSetpoint::hover(1.0), 0.01).unwrap();
            prop_assert!(next.kinetic_energy() <= s.kinetic_energy() + 1e-12);
            s = next;
        }
    }

    #[test]
    fn attitude_stays_unit(s in arb_state(), sps in prop::collection::vec(arb_setpoint(), 1..50)) {
        let mut s = s;
        for x in &sps {
            s = step_dynamics(&s, x, 0.01).unwrap();
            prop_assert!((s.attitude.norm() - 1.0).abs() < 1e-9);
            prop_assert!(s.position.z >= 0.0);
        }
    }

    #[test]
    fn same_inputs_same_bits(s in arb_state(), sps in prop::collection::vec(arb_setpoint(), 1..50)) {
        let go = || sps.iter().fold(s, |st, x| step_dynamics(&st, x, 0.01).unwrap());
        let (a, b) = (go(), go());
        prop_assert_eq!(a.position.map(f64::to_bits), b.position.map(f64::to_bits));
        prop_assert_eq!(a.velocity.map(f64::to_bits), b.velocity.map(f64::to_bits));
    }

    #[test]
    fn gate_detection_survives_rigid_motion(
        p0 in prop::array::uniform3(-3.0..3.0f64),
        p1 in prop::array::uniform3(-3.0..3.0f64),
        n in prop::array::uniform3(-1.0..1.0f64),
        radius in 0.3..2.0f64,
        axis in prop::array::uniform3(-1.0..1.0f64),
        angle in -3.0..3.0f64,
        shift in prop::array::uniform3(-20.0..20.0f64),
    ) {
        let n = Vec3::from(n);
        let axis = Vec3::from(axis);
        prop_assume!(n.norm() > 0.1 && axis.norm() > 0.1);
        let gate = Gate::new(1, Vec3::zeros(), n, radius).unwrap();
        let (p0, p1) = (Vec3::from(p0), Vec3::from(p1));
        let d0 = p0.dot(&gate.normal);
        let d1 = p1.dot(&gate.normal);
        prop_assume!(d0.abs() > 1e-6 && d1.abs() > 1e-6);
        if d0 * d1 < 0.0 {
            let hit = p0 + (p1 - p0) * (d0 / (d0 - d1));
            prop_assume!((hit.norm() - radius).abs() > 1e-6);
        }
        let before = check_gate_pass(&p0, &p1, &gate);

        let rot = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
        let t = Vec3::from(shift);
        let moved = Gate::new(1, rot * gate.center + t, rot * gate.normal, radius).unwrap();
        let after = check_gate_pass(&(rot * p0 + t), &(rot * p1 + t), &moved);
        prop_assert_eq!(before.is_some(), after.is_some());
        if let (Some(a), Some(b)) = (before, after) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn metrics_identity_holds(points in prop::collection::vec(prop::array::uniform3(-8.0..8.0f64), 2..200)) {
        let samples: Vec<TrajectorySample> = points
            .iter()
            .enumerate()
            .map(|(i, p)| TrajectorySample { time: i as f64 / 30.0, position: Vec3::from(*p), attitude: Quat::IDENTITY })
            .collect();
        let r = score_run(samples, &Track::default());
        let m = r.metrics;
        prop_assert!((m.average_velocity * m.completion_time - m.path_length).abs() < 1e-9);
        prop_assert!(r.gate_events.windows(2).all(|w| w[0].index < w[1].index && w[0].time <= w[1].time));
        prop_assert_eq!(m.gates_passed, r.gate_events.len());
    }
}
