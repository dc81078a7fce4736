mod common;

use std::time::Instant;

use handpilot::handpose::*;
use proptest::prelude::*;

#[test]
fn thousand_random_hands_agree_with_oracles() {
    let t = Instant::now();
    let c = common::pose_oracle(1000, 11);
    assert!(c.basis_err < 1e-9, "{c:?}");
    assert!(c.quat_err < 1e-9, "{c:?}");
    assert!(c.equivariance_err < 1e-9, "{c:?}");
    assert!(c.invariance_err < 1e-9, "{c:?}");
    assert!(c.roundtrip_err < 1e-9, "{c:?}");
    assert!(c.roundtrip_near_lock_err < 1e-6, "{c:?}");
    assert!(c.euler_err < 1e-9, "{c:?}");
    assert!(t.elapsed().as_secs_f64() < 5.0);
}

/// Palm facing the camera, fingers up, hand centroid at depth `z`.
fn upright_hand(z: f64) -> HandFrame {
    let mut pts = vec![Vec3::new(0.0, 0.0, z); NUM_LANDMARKS];
    pts[5] = Vec3::new(0.03, -0.09, z);
    pts[17] = Vec3::new(-0.03, -0.08, z);
    for (i, p) in pts.iter_mut().enumerate() {
        if ![0, 5, 17].contains(&i) {
            *p = Vec3::new(0.001 * i as f64, -0.1, z);
        }
    }
    HandFrame::new(0.0, &pts, Handedness::Right).unwrap()
}

#[test]
fn upright_palm_is_level_flight() {
    let frame = upright_hand(0.55);
    let pose = estimate_pose(&frame, &DepthCalibration::default())
        .unwrap()
        .in_control_frame(&ControlFrame::default())
        .unwrap();
    let e = pose.euler;
    assert!(e.roll.abs() < 1e-12 && e.pitch.abs() < 1e-12 && e.yaw.abs() < 1e-12, "{e:?}");
    assert_eq!(pose.throttle, 0.5);
}

#[test]
fn degenerate_and_invalid_inputs() {
    let pts = vec![Vec3::new(0.1, 0.2, 0.5); NUM_LANDMARKS];
    let f = HandFrame::new(0.0, &pts, Handedness::Right).unwrap();
    assert_eq!(estimate_pose(&f, &DepthCalibration::default()), Err(PoseError::DegenerateHand));
    assert_eq!(HandFrame::new(0.0, &pts[..20], Handedness::Right).unwrap_err(), PoseError::LandmarkCount(20));
    let mut bad = pts.clone();
    bad[3].y = f64::NAN;
    assert_eq!(HandFrame::new(0.0, &bad, Handedness::Right).unwrap_err(), PoseError::NonFinite(3));
    let calib = DepthCalibration { d_near: 0.8, d_far: 0.3 };
    assert!(matches!(throttle_from_depth(0.5, &calib), Err(PoseError::BadCalibration { .. })));
}

fn arb_euler() -> impl Strategy<Value = Euler> {
    (-3.0..3.0f64, -1.4..1.4f64, -3.0..3.0f64).prop_map(|(r, p, y)| Euler::new(r, p, y))
}

proptest! {
    #[test]
    fn control_frame_inverts_hand_motion(e in arb_euler(), z in 0.35..0.75f64) {
        let frame = ControlFrame::default();
        let hand = upright_hand(z);
        let m = compute_basis(&hand).unwrap().m_point;
        let rot = frame.hand_motion_for(e);
        let base = estimate_pose(&hand, &DepthCalibration::default()).unwrap().in_control_frame(&frame).unwrap();
        let moved = hand.map_landmarks(|p| rot.rotate(p - m) + m);
        let pose = estimate_pose(&moved, &DepthCalibration::default()).unwrap().in_control_frame(&frame).unwrap();
        // the motion composes on top of whatever attitude the start hand had
        prop_assert!(pose.quaternion.angle_to(&(Quat::from_euler(e) * base.quaternion)) < 1e-6);
        prop_assert!(base.quaternion.angle_to(&Quat::IDENTITY) < 1e-12);
    }

    #[test]
    fn throttle_is_monotone_and_bounded(a in 0.0..1.2f64, b in 0.0..1.2f64) {
        let c = DepthCalibration::default();
        let (ta, tb) = (throttle_from_depth(a, &c).unwrap(), throttle_from_depth(b, &c).unwrap());
        prop_assert!((0.0..=1.0).contains(&ta));
        if a < b {
            prop_assert!(ta >= tb);
        }
    }

    #[test]
    fn left_hand_mirrors_right(seed in 0u64..1000) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let right = common::random_hand(&mut rng);
        let mut left = right.map_landmarks(|p| Vec3::new(-p.x, p.y, p.z));
        left.handedness = Handedness::Left;
        let c = DepthCalibration::default();
        let (pr, pl) = (estimate_pose(&right, &c).unwrap(), estimate_pose(&left, &c).unwrap());
        prop_assert!(pr.quaternion.angle_to(&pl.quaternion) < 1e-9);
        prop_assert_eq!(pr.throttle, pl.throttle);
    }

    #[test]
    fn euler_quaternion_round_trip(e in arb_euler()) {
        let back = Quat::from_euler(e).to_euler().unwrap();
        for (a, b) in [(e.roll, back.roll), (e.pitch, back.pitch), (e.yaw, back.yaw)] {
            prop_assert!(wrap_angle(a - b).abs() < 1e-9);
        }
    }
}
