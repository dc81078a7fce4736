//! 6-DoF hand pose from 21 hand landmarks.
//!
//! The palm triangle `A` (wrist), `B` (index MCP) and `C` (pinky MCP) defines
//! an orthonormal basis: `Z` is the palm normal `AC x AB`, `X` points from the
//! wrist to the triangle centroid `M`, and `Y = Z x X` completes a right-handed
//! frame. The basis is turned into a quaternion and then roll/pitch/yaw. The
//! depth of `M` sets the throttle.

mod quat;

pub use quat::{wrap_angle, Euler, Quat, GIMBAL_LOCK_EPS, UNIT_NORM_TOL};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

pub const NUM_LANDMARKS: usize = 21;

/// Below this length a cross product or edge is treated as degenerate.
const DEGENERATE_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseError {
    #[error("degenerate hand: palm triangle is collinear or coincident")]
    DegenerateHand,
    #[error("quaternion norm {0} is not 1")]
    NonUnitQuaternion(f64),
    #[error("bad depth calibration: d_near {d_near} must be below d_far {d_far}")]
    BadCalibration { d_near: f64, d_far: f64 },
    #[error("expected {NUM_LANDMARKS} landmarks, got {0}")]
    LandmarkCount(usize),
    #[error("landmark {0} has a non-finite coordinate")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Handedness {
    Left,
    Right,
}

/// One observation of a hand in camera coordinates (meters; x right, y down,
/// z away from the camera).
#[derive(Debug, Clone, PartialEq)]
pub struct HandFrame {
    pub timestamp: f64,
    pub landmarks: [Vec3; NUM_LANDMARKS],
    pub handedness: Handedness,
}

impl HandFrame {
    pub fn new(timestamp: f64, landmarks: &[Vec3], handedness: Handedness) -> Result<Self, PoseError> {
        let landmarks: [Vec3; NUM_LANDMARKS] = landmarks
            .try_into()
            .map_err(|_| PoseError::LandmarkCount(landmarks.len()))?;
        if let Some(i) = landmarks.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(PoseError::NonFinite(i));
        }
        Ok(HandFrame {
            timestamp,
            landmarks,
            handedness,
        })
    }

    /// Left hands are mirrored across the camera's vertical plane so both
    /// hands share the right-hand pose convention.
    pub fn canonical(&self) -> HandFrame {
        match self.handedness {
            Handedness::Right => self.clone(),
            Handedness::Left => {
                let mut out = self.clone();
                for p in out.landmarks.iter_mut() {
                    p.x = -p.x;
                }
                out.handedness = Handedness::Right;
                out
            }
        }
    }

    /// Applies `f` to every landmark.
    pub fn map_landmarks(&self, f: impl Fn(&Vec3) -> Vec3) -> HandFrame {
        let mut out = self.clone();
        for p in out.landmarks.iter_mut() {
            *p = f(p);
        }
        out
    }
}

/// Landmark indices of the palm triangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PalmTriangle {
    pub a: usize,
    pub b: usize,
    pub c: usize,
}

impl Default for PalmTriangle {
    fn default() -> Self {
        PalmTriangle { a: 0, b: 5, c: 17 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandBasis {
    pub x_axis: Vec3,
    pub y_axis: Vec3,
    pub z_axis: Vec3,
    pub m_point: Vec3,
}

impl HandBasis {
    /// Columns are the x, y, z axes.
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.x_axis, self.y_axis, self.z_axis])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthCalibration {
    pub d_near: f64,
    pub d_far: f64,
}

impl Default for DepthCalibration {
    fn default() -> Self {
        DepthCalibration {
            d_near: 0.3,
            d_far: 0.8,
        }
    }
}

impl DepthCalibration {
    pub fn validate(&self) -> Result<(), PoseError> {
        if self.d_near < self.d_far && self.d_near.is_finite() && self.d_far.is_finite() {
            Ok(())
        } else {
            Err(PoseError::BadCalibration {
                d_near: self.d_near,
                d_far: self.d_far,
            })
        }
    }
}

/// Throttle values this close to 0.5 are reported as exactly 0.5.
pub const HOVER_DEADBAND: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandPose {
    pub quaternion: Quat,
    pub euler: Euler,
    pub throttle: f64,
}

impl HandPose {
    /// Re-expresses the orientation in a control frame (see [`ControlFrame`]).
    pub fn in_control_frame(&self, frame: &ControlFrame) -> Result<HandPose, PoseError> {
        let q = frame.relative(self.quaternion);
        Ok(HandPose {
            quaternion: q,
            euler: q.to_euler()?,
            throttle: self.throttle,
        })
    }
}

pub fn compute_basis(frame: &HandFrame) -> Result<HandBasis, PoseError> {
    compute_basis_with(frame, PalmTriangle::default())
}

pub fn compute_basis_with(frame: &HandFrame, tri: PalmTriangle) -> Result<HandBasis, PoseError> {
    let a = frame.landmarks[tri.a];
    let b = frame.landmarks[tri.b];
    let c = frame.landmarks[tri.c];

    let normal = (c - a).cross(&(b - a));
    let normal_len = normal.norm();
    let m = (a + b + c) / 3.0;
    let am = m - a;
    let am_len = am.norm();
    if !(normal_len >= DEGENERATE_EPS) || !(am_len >= DEGENERATE_EPS) {
        return Err(PoseError::DegenerateHand);
    }

    let z = normal / normal_len;
    let x = am / am_len;
    let y = z.cross(&x).normalize();
    let z = x.cross(&y);
    Ok(HandBasis {
        x_axis: x,
        y_axis: y,
        z_axis: z,
        m_point: m,
    })
}

pub fn basis_to_quaternion(basis: &HandBasis) -> Quat {
    Quat::from_rotation_matrix(&basis.matrix())
}

pub fn quaternion_to_euler(q: Quat) -> Result<Euler, PoseError> {
    q.to_euler()
}

/// Hand nearer the camera gives more throttle; `d_near` maps to 1, `d_far` to 0.
pub fn throttle_from_depth(m_depth: f64, calib: &DepthCalibration) -> Result<f64, PoseError> {
    calib.validate()?;
    let raw = ((calib.d_far - m_depth) / (calib.d_far - calib.d_near)).clamp(0.0, 1.0);
    if (raw - 0.5).abs() <= HOVER_DEADBAND {
        Ok(0.5)
    } else {
        Ok(raw)
    }
}

pub fn estimate_pose(frame: &HandFrame, calib: &DepthCalibration) -> Result<HandPose, PoseError> {
    estimate_pose_with(frame, calib, PalmTriangle::default())
}

pub fn estimate_pose_with(
    frame: &HandFrame,
    calib: &DepthCalibration,
    tri: PalmTriangle,
) -> Result<HandPose, PoseError> {
    let frame = frame.canonical();
    let basis = compute_basis_with(&frame, tri)?;
    let quaternion = basis_to_quaternion(&basis);
    let euler = quaternion_to_euler(quaternion)?;
    let throttle = throttle_from_depth(basis.m_point.z, calib)?;
    Ok(HandPose {
        quaternion,
        euler,
        throttle,
    })
}

/// Maps hand orientation onto vehicle attitude.
///
/// `neutral` is the hand basis (in camera coordinates) that commands level
/// flight; `body` holds the vehicle's forward/left/up axes expressed in
/// camera coordinates while the pilot faces the camera. A hand rotation `R`
/// becomes the body-frame attitude `body^T * R * neutral^T * body`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlFrame {
    pub neutral: Quat,
    pub body: Quat,
}

impl ControlFrame {
    pub const IDENTITY: ControlFrame = ControlFrame {
        neutral: Quat::IDENTITY,
        body: Quat::IDENTITY,
    };

    /// Palm facing the camera with fingers up is level flight. Tipping the
    /// fingers away from the pilot (toward the camera) pitches forward,
    /// tilting them right rolls right, twisting the hand turns.
    pub fn upright_palm() -> ControlFrame {
        let neutral = Matrix3::from_columns(&[
            Vec3::new(0.0, -1.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ]);
        let body = Matrix3::from_columns(&[
            Vec3::new(0.0, 0.0, -1.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, -1.0, 0.0),
        ]);
        ControlFrame {
            neutral: Quat::from_rotation_matrix(&neutral),
            body: Quat::from_rotation_matrix(&body),
        }
    }

    pub fn relative(&self, hand: Quat) -> Quat {
        (self.body.conjugate() * hand * self.neutral.conjugate() * self.body)
            .normalized()
            .canonical()
    }

    /// Camera-frame rotation that carries the neutral hand to the pose
    /// commanding `attitude`.
    pub fn hand_motion_for(&self, attitude: Euler) -> Quat {
        let d = Quat::from_euler(attitude);
        (self.body * d * self.body.conjugate()).normalized()
    }
}

impl Default for ControlFrame {
    fn default() -> Self {
        ControlFrame::upright_palm()
    }
}
