//! Race gates and the track file.
//!
//! ```text
//! # comment
//! start, x, y, z, yaw          (optional; defaults to the origin facing +x)
//! index, cx, cy, cz, nx, ny, nz, radius
//! ```
//!
//! Gates must be listed in order with indices `1..=n`. Normals are
//! normalized on load.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::SimError;
use crate::handpose::Vec3;

pub const DEFAULT_TRACK: &str = include_str!("../../tracks/default.txt");

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gate {
    pub index: usize,
    pub center: Vec3,
    /// Direction the drone must cross in.
    pub normal: Vec3,
    pub radius: f64,
}

impl Gate {
    pub fn new(index: usize, center: Vec3, normal: Vec3, radius: f64) -> Result<Gate, SimError> {
        let bad = |msg: &str| {
            Err(SimError::InvalidGate {
                index,
                msg: msg.to_string(),
            })
        };
        if !center.iter().chain(normal.iter()).all(|v| v.is_finite()) || !radius.is_finite() {
            return bad("non-finite value");
        }
        if radius <= 0.0 {
            return bad("radius must be positive");
        }
        let len = normal.norm();
        if len < 1e-9 {
            return bad("normal has zero length");
        }
        // leave already-unit normals untouched so text round trips are exact
        let normal = if (len - 1.0).abs() > 1e-12 { normal / len } else { normal };
        Ok(Gate {
            index,
            center,
            normal,
            radius,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Track {
    pub gates: Vec<Gate>,
    pub start: Vec3,
    pub start_yaw: f64,
}

impl Default for Track {
    fn default() -> Self {
        DEFAULT_TRACK.parse().expect("built-in track parses")
    }
}

impl Track {
    pub fn new(gates: Vec<Gate>, start: Vec3, start_yaw: f64) -> Result<Track, SimError> {
        for (i, g) in gates.iter().enumerate() {
            if g.index != i + 1 {
                return Err(SimError::InvalidGate {
                    index: g.index,
                    msg: format!("expected index {}", i + 1),
                });
            }
        }
        Ok(Track {
            gates,
            start,
            start_yaw,
        })
    }

    pub fn empty() -> Track {
        Track {
            gates: Vec::new(),
            start: Vec3::zeros(),
            start_yaw: 0.0,
        }
    }

    pub fn load(path: &Path) -> Result<Track, SimError> {
        std::fs::read_to_string(path)
            .map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?
            .parse()
    }

    /// Canonical text form; parsing it gives back the same track.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let p = self.start;
        writeln!(s, "start, {}, {}, {}, {}", p.x, p.y, p.z, self.start_yaw).unwrap();
        for g in &self.gates {
            let (c, n) = (g.center, g.normal);
            writeln!(
                s,
                "{}, {}, {}, {}, {}, {}, {}, {}",
                g.index, c.x, c.y, c.z, n.x, n.y, n.z, g.radius
            )
            .unwrap();
        }
        s
    }

    /// Hex SHA-256 of [`Track::to_text`].
    pub fn sha256(&self) -> String {
        Sha256::digest(self.to_text().as_bytes())
            .iter()
            .fold(String::with_capacity(64), |mut s, b| {
                write!(s, "{b:02x}").unwrap();
                s
            })
    }
}

impl FromStr for Track {
    type Err = SimError;

    fn from_str(text: &str) -> Result<Track, SimError> {
        let mut gates = Vec::new();
        let mut start = Vec3::zeros();
        let mut start_yaw = 0.0;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| SimError::TrackFormat { line: i + 1, msg };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let nums = |fs: &[&str]| -> Result<Vec<f64>, SimError> {
                fs.iter()
                    .map(|f| f.parse::<f64>().map_err(|_| bad(format!("not a number: {f:?}"))))
                    .collect()
            };
            if fields[0].eq_ignore_ascii_case("start") {
                let [x, y, z, yaw] = nums(&fields[1..])?[..] else {
                    return Err(bad("start line needs x, y, z, yaw".into()));
                };
                start = Vec3::new(x, y, z);
                start_yaw = yaw;
                continue;
            }
            if fields.len() != 8 {
                return Err(bad(format!("expected 8 fields, got {}", fields.len())));
            }
            let index: usize = fields[0]
                .parse()
                .map_err(|_| bad(format!("bad gate index {:?}", fields[0])))?;
            let v = nums(&fields[1..])?;
            let gate = Gate::new(
                index,
                Vec3::new(v[0], v[1], v[2]),
                Vec3::new(v[3], v[4], v[5]),
                v[6],
            )
            .map_err(|e| bad(e.to_string()))?;
            if index != gates.len() + 1 {
                return Err(bad(format!("gate index {index} out of order")));
            }
            gates.push(gate);
        }
        Track::new(gates, start, start_yaw)
    }
}
