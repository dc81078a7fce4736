//! Independent oracles shared by the integration tests and the acceptance
//! run.
#![allow(dead_code)]

use std::collections::{HashSet, VecDeque};

use handpilot::command_fsm::{CommandFsm, FlightMode, PilotCommand, PilotState};
use handpilot::gesture_net::{GestureLabel, Gradients, MlpModel};
use handpilot::handpose::{
    basis_to_quaternion, compute_basis, quaternion_to_euler, Euler, HandFrame, Handedness, HandPose, Quat, Vec3,
};
use nalgebra::{Matrix3, Rotation3, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

// ---------------------------------------------------------------- FSM

/// One FSM input: the stable gesture (if any) and whether a pose was
/// available.
pub type FsmInput = (Option<GestureLabel>, bool);

pub fn fsm_alphabet() -> Vec<FsmInput> {
    let mut out = vec![(None, false)];
    for g in GestureLabel::ALL {
        out.push((Some(g), true));
        out.push((Some(g), false));
    }
    out
}

#[derive(Debug, Default)]
pub struct FsmCheck {
    pub sequences: u64,
    pub transitions: u64,
    pub distinct_states: usize,
    pub hover_first_checks: u64,
    pub violations: Vec<String>,
}

fn dummy_pose() -> HandPose {
    HandPose {
        quaternion: Quat::IDENTITY,
        euler: Euler::default(),
        throttle: 0.5,
    }
}

fn step(fsm: &CommandFsm, s: &PilotState, input: FsmInput) -> (PilotState, Vec<PilotCommand>) {
    let pose = dummy_pose();
    let mut next = *s;
    let cmds = fsm.step(&mut next, input.0, input.1.then_some(&pose));
    (next, cmds)
}

fn check_transition(s: &PilotState, input: FsmInput, next: &PilotState, cmds: &[PilotCommand], out: &mut FsmCheck) {
    let holding_five = input.0 == Some(GestureLabel::Five) && input.1;
    if s.mode == FlightMode::OrientationControl {
        if holding_five {
            if !cmds.is_empty() || next.mode != FlightMode::OrientationControl {
                out.violations.push(format!("{s:?} + {input:?} changed state while five held: {cmds:?}"));
            }
        } else {
            out.hover_first_checks += 1;
            if cmds.first() != Some(&PilotCommand::Hover) {
                out.violations.push(format!("{s:?} + {input:?} emitted {cmds:?} without leading hover"));
            }
        }
    }
    if next.mode == FlightMode::OrientationControl {
        if !matches!(s.mode, FlightMode::Armed | FlightMode::Hovering | FlightMode::OrientationControl) {
            out.violations.push(format!("orientation control entered from {:?}", s.mode));
        }
        if !holding_five {
            out.violations.push(format!("in orientation control after {input:?}"));
        }
    }
}

/// Shortest number of inputs that brings `s` to `Disarmed`, searching up
/// to `limit`.
pub fn steps_to_disarm(fsm: &CommandFsm, s: &PilotState, alphabet: &[FsmInput], limit: usize) -> Option<usize> {
    let mut queue = VecDeque::from([(*s, 0usize)]);
    while let Some((st, d)) = queue.pop_front() {
        if st.mode == FlightMode::Disarmed {
            return Some(d);
        }
        if d == limit {
            continue;
        }
        for &i in alphabet {
            queue.push_back((step(fsm, &st, i).0, d + 1));
        }
    }
    None
}

fn start_states() -> Vec<PilotState> {
    FlightMode::ALL
        .into_iter()
        .map(|mode| PilotState {
            mode,
            // orientation control is only ever entered on a five
            acted_gesture: (mode == FlightMode::OrientationControl).then_some(GestureLabel::Five),
            ..PilotState::default()
        })
        .collect()
}

/// Depth-first walk over every input sequence of length `1..=max_len` from
/// each starting mode, checking every transition. Disarm reachability is
/// checked once per distinct state visited.
pub fn fsm_model_check(fsm: &CommandFsm, max_len: usize) -> FsmCheck {
    let alphabet = fsm_alphabet();
    let mut out = FsmCheck::default();

    fn walk(fsm: &CommandFsm, s: &PilotState, depth: usize, max_len: usize, alphabet: &[FsmInput], out: &mut FsmCheck) {
        if depth == max_len {
            return;
        }
        for &input in alphabet {
            let (next, cmds) = step(fsm, s, input);
            out.transitions += 1;
            out.sequences += 1;
            check_transition(s, input, &next, &cmds, out);
            walk(fsm, &next, depth + 1, max_len, alphabet, out);
        }
    }

    let starts = start_states();
    for s in &starts {
        walk(fsm, s, 0, max_len, &alphabet, &mut out);
    }

    // the states those sequences visit, level by level
    let mut seen: HashSet<PilotState> = starts.iter().copied().collect();
    let mut frontier = starts;
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for &i in &alphabet {
                let n = step(fsm, s, i).0;
                if seen.insert(n) {
                    next.push(n);
                }
            }
        }
        frontier = next;
    }
    for s in &seen {
        if s.mode != FlightMode::Disarmed && steps_to_disarm(fsm, s, &alphabet, 2).is_none() {
            out.violations.push(format!("cannot disarm within 2 inputs from {s:?}"));
        }
    }
    out.distinct_states = seen.len();
    out
}

// ---------------------------------------------------------------- pose

#[derive(Debug, Default)]
pub struct PoseCheck {
    pub hands: usize,
    /// Basis against a hand-written construction.
    pub basis_err: f64,
    /// Quaternion against nalgebra's matrix conversion.
    pub quat_err: f64,
    /// Rotating the hand rotates the basis.
    pub equivariance_err: f64,
    /// Translating and scaling the hand leaves the orientation alone.
    pub invariance_err: f64,
    /// quaternion -> Euler -> quaternion away from gimbal lock.
    pub roundtrip_err: f64,
    /// Same, within 1e-3 of gimbal lock.
    pub roundtrip_near_lock_err: f64,
    /// Euler angles against the rotation-matrix formulas.
    pub euler_err: f64,
}

pub fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation3<f64> {
    let v: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(v[0], v[1], v[2], v[3])).to_rotation_matrix()
}

pub fn random_hand(rng: &mut ChaCha8Rng) -> HandFrame {
    loop {
        let pts: Vec<Vec3> = (0..21)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.1..0.1),
                    rng.random_range(0.3..0.8),
                )
            })
            .collect();
        let (a, b, c) = (pts[0], pts[5], pts[17]);
        let area = (c - a).cross(&(b - a)).norm();
        let am = ((a + b + c) / 3.0 - a).norm();
        if area > 1e-3 && am > 1e-2 {
            return HandFrame::new(0.0, &pts, Handedness::Right).unwrap();
        }
    }
}

fn oracle_basis(f: &HandFrame) -> Matrix3<f64> {
    let (a, b, c) = (f.landmarks[0], f.landmarks[5], f.landmarks[17]);
    let z = (c - a).cross(&(b - a)).normalize();
    let x = ((a + b + c) / 3.0 - a).normalize();
    let y = z.cross(&x).normalize();
    Matrix3::from_columns(&[x, y, x.cross(&y)])
}

fn quat_dist(a: Quat, b: Quat) -> f64 {
    let d = |s: f64| {
        ((a.w - s * b.w).powi(2) + (a.x - s * b.x).powi(2) + (a.y - s * b.y).powi(2) + (a.z - s * b.z).powi(2)).sqrt()
    };
    d(1.0).min(d(-1.0))
}

fn oracle_euler(m: &Matrix3<f64>) -> Euler {
    Euler::new(m[(2, 1)].atan2(m[(2, 2)]), (-m[(2, 0)]).clamp(-1.0, 1.0).asin(), m[(1, 0)].atan2(m[(0, 0)]))
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    d.min(std::f64::consts::TAU - d)
}

pub fn pose_oracle(n: usize, seed: u64) -> PoseCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = PoseCheck {
        hands: n,
        ..PoseCheck::default()
    };
    let max = |slot: &mut f64, v: f64| *slot = slot.max(v);
    for _ in 0..n {
        let hand = random_hand(&mut rng);
        let basis = compute_basis(&hand).unwrap();
        let m = basis.matrix();
        max(&mut out.basis_err, (m - oracle_basis(&hand)).abs().max());

        let q = basis_to_quaternion(&basis);
        let nq = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m));
        max(&mut out.quat_err, quat_dist(q, Quat::new(nq.w, nq.i, nq.j, nq.k)));

        // rotation about an arbitrary pivot
        let r = random_rotation(&mut rng);
        let pivot = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0));
        let rotated = hand.map_landmarks(|p| r * (p - pivot) + pivot);
        let mr = compute_basis(&rotated).unwrap().matrix();
        max(&mut out.equivariance_err, (mr - r.matrix() * m).abs().max());
        let qr = basis_to_quaternion(&compute_basis(&rotated).unwrap());
        let rq = UnitQuaternion::from_rotation_matrix(&r);
        max(&mut out.equivariance_err, quat_dist(qr, Quat::new(rq.w, rq.i, rq.j, rq.k) * q));

        let shift = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let scale = rng.random_range(0.1..10.0);
        let moved = hand.map_landmarks(|p| p * scale + shift);
        let qm = basis_to_quaternion(&compute_basis(&moved).unwrap());
        max(&mut out.invariance_err, quat_dist(q, qm));

        let e = quaternion_to_euler(q).unwrap();
        let back = Quat::from_euler(e);
        let lock = (q.w * q.y - q.x * q.z).abs();
        if lock < 0.5 - 1e-3 {
            max(&mut out.roundtrip_err, quat_dist(q, back));
            let o = oracle_euler(&m);
            for (a, b) in [(e.roll, o.roll), (e.pitch, o.pitch), (e.yaw, o.yaw)] {
                max(&mut out.euler_err, angle_diff(a, b));
            }
        } else {
            max(&mut out.roundtrip_near_lock_err, quat_dist(q, back));
        }
    }
    out
}

// ---------------------------------------------------------------- gradients

#[derive(Debug)]
pub struct GradCheck {
    pub params: usize,
    pub max_rel_err: f64,
}

/// Central differences with step `h` on every parameter of a fixed-seed
/// network, against backpropagation.
pub fn gradient_check(sizes: &[usize], seed: u64, batch: usize, h: f64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = MlpModel::new(sizes, &mut rng);
    let x: Vec<f64> = (0..batch * sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
    let out_dim = *sizes.last().unwrap();
    let labels: Vec<usize> = (0..batch).map(|i| (i * 3 + 1) % out_dim).collect();

    let mut grads = Gradients::zeros_like(&model);
    model.loss_and_gradients(&x, &labels, &mut grads);

    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-7);
    let mut worst = 0.0f64;
    let mut params = 0;
    for l in 0..model.layers.len() {
        for i in 0..model.layers[l].weights.len() + model.layers[l].biases.len() {
            let nw = model.layers[l].weights.len();
            let perturbed = |delta: f64| {
                let mut m = model.clone();
                if i < nw {
                    m.layers[l].weights[i] += delta;
                } else {
                    m.layers[l].biases[i - nw] += delta;
                }
                m.loss(&x, &labels)
            };
            let fd = (perturbed(h) - perturbed(-h)) / (2.0 * h);
            let bp = if i < nw { grads.layers[l].weights[i] } else { grads.layers[l].biases[i - nw] };
            worst = worst.max(rel(fd, bp));
            params += 1;
        }
    }
    GradCheck {
        params,
        max_rel_err: worst,
    }
}

// ---------------------------------------------------------------- session

/// Small classifier trained on a reduced corpus; enough for clean synthetic
/// hands.
pub fn quick_classifier() -> handpilot::gesture_net::GestureClassifier {
    use handpilot::gesture_net::{generate_dataset_with, train, GeneratorConfig, TrainConfig};
    static CACHE: std::sync::OnceLock<handpilot::gesture_net::GestureClassifier> = std::sync::OnceLock::new();
    CACHE
        .get_or_init(|| {
            let ds = generate_dataset_with(
                3,
                &GeneratorConfig {
                    per_class: 400,
                    ..GeneratorConfig::default()
                },
            );
            let cfg = TrainConfig {
                hidden: vec![64],
                epochs: 40,
                learning_rate: 5e-3,
                seed: 1,
                ..TrainConfig::default()
            };
            train(&ds, &cfg).unwrap().classifier
        })
        .clone()
}

/// Completion time and path length recomputed from the raw samples: time
/// from the first sample to the last gate event, arc length up to that
/// instant with the final segment cut at the crossing.
pub fn polyline_metrics(samples: &[handpilot::drone_sim::TrajectorySample], t_end: f64) -> (f64, f64) {
    let mut total = 0.0;
    for w in samples.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if b.time <= t_end {
            total += (b.position - a.position).norm();
        } else {
            if a.time < t_end {
                total += (b.position - a.position).norm() * (t_end - a.time) / (b.time - a.time);
            }
            break;
        }
    }
    (t_end - samples[0].time, total)
}
