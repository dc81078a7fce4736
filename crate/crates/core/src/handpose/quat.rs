//! Unit quaternions and ZYX (roll, pitch, yaw) Euler angles.
//!
//! Quaternions are stored scalar-first as `(w, x, y, z)` and act on column
//! vectors, so `q.to_matrix() * v` rotates `v` by `q`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Half-width of the band around `|Q| = 0.5` treated as gimbal lock.
pub const GIMBAL_LOCK_EPS: f64 = 1e-6;

/// Allowed deviation of `|q|` from 1 before Euler conversion refuses the input.
pub const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        let axis = axis.normalize();
        let (s, c) = (angle / 2.0).sin_cos();
        Quat::new(c, axis.x * s, axis.y * s, axis.z * s)
    }

    /// `Rz(yaw) * Ry(pitch) * Rx(roll)`.
    pub fn from_euler(euler: Euler) -> Self {
        let (sr, cr) = (euler.roll / 2.0).sin_cos();
        let (sp, cp) = (euler.pitch / 2.0).sin_cos();
        let (sy, cy) = (euler.yaw / 2.0).sin_cos();
        Quat::new(
            cr * cp * cy + sr * sp * sy,
            sr * cp * cy - cr * sp * sy,
            cr * sp * cy + sr * cp * sy,
            cr * cp * sy - sr * sp * cy,
        )
        .canonical()
    }

    /// Rotation-matrix to quaternion extraction.
    ///
    /// Branches on the largest of the trace and the three diagonal entries.
    /// The four candidate pivots sum to 4, so the chosen one is at least 1 and
    /// the divisor never approaches zero, half-turns included. The result has
    /// `w >= 0`.
    pub fn from_rotation_matrix(m: &Matrix3<f64>) -> Self {
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let q = if trace >= m[(0, 0)] && trace >= m[(1, 1)] && trace >= m[(2, 2)] {
            let s = 2.0 * (1.0 + trace).sqrt();
            Quat::new(
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        } else if m[(0, 0)] >= m[(1, 1)] && m[(0, 0)] >= m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt();
            Quat::new(
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        } else if m[(1, 1)] >= m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt();
            Quat::new(
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        } else {
            let s = 2.0 * (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt();
            Quat::new(
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        };
        q.normalized().canonical()
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Quat::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conjugate(&self) -> Self {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Picks the representative with `w >= 0` (ties broken on the first
    /// nonzero vector component being positive).
    pub fn canonical(self) -> Self {
        let flip = if self.w != 0.0 {
            self.w < 0.0
        } else if self.x != 0.0 {
            self.x < 0.0
        } else if self.y != 0.0 {
            self.y < 0.0
        } else {
            self.z < 0.0
        };
        if flip {
            Quat::new(-self.w, -self.x, -self.y, -self.z)
        } else {
            self
        }
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        let Quat { w, x, y, z } = *self;
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    pub fn rotate(&self, v: Vector3<f64>) -> Vector3<f64> {
        self.to_matrix() * v
    }

    /// Roll, pitch, yaw of this rotation (ZYX convention).
    ///
    /// Pitch is taken from `Q = w*y - x*z` as `-pi/2 + 2*atan2(sqrt(1+2Q), sqrt(1-2Q))`,
    /// which stays accurate near the poles where `asin(2Q)` loses precision.
    /// Inside the gimbal-lock band roll is fixed to zero and the whole
    /// heading is reported as yaw.
    pub fn to_euler(&self) -> Result<Euler, super::PoseError> {
        let n = self.norm();
        if !n.is_finite() || (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(super::PoseError::NonUnitQuaternion(n));
        }
        let Quat { w, x, y, z } = *self;
        let q_pitch = w * y - x * z;
        if q_pitch.abs() > 0.5 - GIMBAL_LOCK_EPS {
            let sign = q_pitch.signum();
            return Ok(Euler {
                roll: 0.0,
                pitch: sign * FRAC_PI_2,
                yaw: wrap_angle(-2.0 * sign * x.atan2(w)),
            });
        }
        let roll = (2.0 * (w * x + y * z)).atan2(1.0 - 2.0 * (x * x + y * y));
        let pitch = -FRAC_PI_2 + 2.0 * (1.0 + 2.0 * q_pitch).sqrt().atan2((1.0 - 2.0 * q_pitch).sqrt());
        let yaw = (2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z));
        Ok(Euler {
            roll: wrap_angle(roll),
            pitch: pitch.clamp(-FRAC_PI_2, FRAC_PI_2),
            yaw: wrap_angle(yaw),
        })
    }

    /// Angle of the rotation `self^-1 * other`, in `[0, pi]`.
    pub fn angle_to(&self, other: &Quat) -> f64 {
        let d = self.conjugate() * *other;
        let v = (d.x * d.x + d.y * d.y + d.z * d.z).sqrt();
        2.0 * v.atan2(d.w.abs())
    }
}

impl Mul for Quat {
    type Output = Quat;

    fn mul(self, r: Quat) -> Quat {
        Quat::new(
            self.w * r.w - self.x * r.x - self.y * r.y - self.z * r.z,
            self.w * r.x + self.x * r.w + self.y * r.z - self.z * r.y,
            self.w * r.y - self.x * r.z + self.y * r.w + self.z * r.x,
            self.w * r.z + self.x * r.y - self.y * r.x + self.z * r.w,
        )
    }
}

impl Default for Quat {
    fn default() -> Self {
        Quat::IDENTITY
    }
}

/// Roll about x, pitch about y, yaw about z, applied in the order
/// roll, then pitch, then yaw (`R = Rz * Ry * Rx`).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Euler {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl Euler {
    pub const fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Euler { roll, pitch, yaw }
    }
}

/// Maps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}
