//! Procedural gesture corpus and its text file format.
//!
//! Each gesture has a canonical 2D landmark template (right hand, palm toward
//! the camera, fingers pointing up the image, wrist at the origin, wrist to
//! middle-finger knuckle about one unit). Samples are templates with
//! per-landmark Gaussian jitter, an in-plane rotation, a uniform scale and a
//! translation.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{FeatureVector, GestureError, GestureLabel, NUM_CLASSES, NUM_FEATURES};
use crate::handpose::NUM_LANDMARKS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: FeatureVector,
    pub label: GestureLabel,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GestureDataset {
    pub samples: Vec<Sample>,
}

impl GestureDataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for s in &self.samples {
            counts[s.label.index()] += 1;
        }
        counts
    }

    /// Builds a dataset from labelled features, assigning the first
    /// `train_fraction` of each class (in order of appearance) to training.
    pub fn stratified(items: Vec<(FeatureVector, GestureLabel)>, train_fraction: f64) -> Self {
        let counts = {
            let mut c = [0usize; NUM_CLASSES];
            for (_, l) in &items {
                c[l.index()] += 1;
            }
            c
        };
        let train_quota: Vec<usize> = counts
            .iter()
            .map(|&n| (n as f64 * train_fraction).round() as usize)
            .collect();
        let mut seen = [0usize; NUM_CLASSES];
        let samples = items
            .into_iter()
            .map(|(features, label)| {
                let i = label.index();
                let split = if seen[i] < train_quota[i] { Split::Train } else { Split::Test };
                seen[i] += 1;
                Sample { features, label, split }
            })
            .collect();
        GestureDataset { samples }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub per_class: usize,
    /// Jitter standard deviation as a fraction of hand size.
    pub jitter: f64,
    /// Maximum in-plane rotation, radians.
    pub max_rotation: f64,
    pub scale_range: (f64, f64),
    /// Wrist position range in both image axes.
    pub offset_range: (f64, f64),
    pub train_fraction: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            per_class: 1000,
            jitter: 0.02,
            max_rotation: 25f64.to_radians(),
            scale_range: (0.12, 0.3),
            offset_range: (0.3, 0.7),
            train_fraction: 0.8,
        }
    }
}

pub fn generate_dataset(seed: u64) -> GestureDataset {
    generate_dataset_with(seed, &GeneratorConfig::default())
}

/// Samples are interleaved by class (`one, two, ..., thumbs_up, one, ...`).
pub fn generate_dataset_with(seed: u64, cfg: &GeneratorConfig) -> GestureDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, cfg.jitter).expect("jitter must be finite and non-negative");
    let templates: Vec<[(f64, f64); NUM_LANDMARKS]> = GestureLabel::ALL.iter().map(|&g| template(g)).collect();

    let mut items = Vec::with_capacity(cfg.per_class * NUM_CLASSES);
    for _ in 0..cfg.per_class {
        for (label, tpl) in GestureLabel::ALL.iter().zip(&templates) {
            let angle = rng.random_range(-cfg.max_rotation..=cfg.max_rotation);
            let scale = rng.random_range(cfg.scale_range.0..=cfg.scale_range.1);
            let ox = rng.random_range(cfg.offset_range.0..=cfg.offset_range.1);
            let oy = rng.random_range(cfg.offset_range.0..=cfg.offset_range.1);
            let (s, c) = angle.sin_cos();
            let mut v = [0.0; NUM_FEATURES];
            for (i, &(tx, ty)) in tpl.iter().enumerate() {
                let x = tx + jitter.sample(&mut rng);
                let y = ty + jitter.sample(&mut rng);
                v[2 * i] = ox + scale * (c * x - s * y);
                v[2 * i + 1] = oy + scale * (s * x + c * y);
            }
            items.push((FeatureVector(v), *label));
        }
    }
    GestureDataset::stratified(items, cfg.train_fraction)
}

struct Finger {
    mcp: (f64, f64),
    /// Direction of the extended finger, radians from image-up toward +x.
    lean: f64,
    bones: [f64; 3],
}

const FINGERS: [Finger; 4] = [
    Finger {
        mcp: (0.30, -0.90),
        lean: 0.14,
        bones: [0.45, 0.27, 0.22],
    },
    Finger {
        mcp: (0.08, -0.95),
        lean: 0.02,
        bones: [0.50, 0.30, 0.24],
    },
    Finger {
        mcp: (-0.12, -0.90),
        lean: -0.10,
        bones: [0.46, 0.28, 0.22],
    },
    Finger {
        mcp: (-0.30, -0.80),
        lean: -0.24,
        bones: [0.36, 0.22, 0.20],
    },
];

fn dir(lean: f64) -> (f64, f64) {
    (lean.sin(), -lean.cos())
}

fn along(p: (f64, f64), d: (f64, f64), t: f64) -> (f64, f64) {
    (p.0 + d.0 * t, p.1 + d.1 * t)
}

fn extended(f: &Finger) -> [(f64, f64); 3] {
    let d = dir(f.lean);
    let pip = along(f.mcp, d, f.bones[0]);
    let dip = along(pip, d, f.bones[1]);
    let tip = along(dip, d, f.bones[2]);
    [pip, dip, tip]
}

/// Finger curled into the palm, as seen from the front.
fn folded(f: &Finger) -> [(f64, f64); 3] {
    let d = dir(f.lean);
    [along(f.mcp, d, 0.25), along(f.mcp, d, 0.05), along(f.mcp, d, -0.15)]
}

const THUMB_EXTENDED: [(f64, f64); 4] = [(0.25, -0.15), (0.45, -0.35), (0.62, -0.52), (0.76, -0.68)];
const THUMB_FOLDED: [(f64, f64); 4] = [(0.25, -0.15), (0.36, -0.38), (0.22, -0.56), (0.04, -0.62)];
const THUMB_UP: [(f64, f64); 4] = [(0.25, -0.15), (0.36, -0.42), (0.40, -0.74), (0.42, -1.04)];
const THUMB_PINCH: [(f64, f64); 4] = [(0.25, -0.15), (0.45, -0.36), (0.58, -0.64), (0.58, -0.96)];

/// Canonical landmarks of a gesture (wrist at the origin, image y down).
pub fn template(g: GestureLabel) -> [(f64, f64); NUM_LANDMARKS] {
    use GestureLabel::*;
    // index, middle, ring, pinky
    let (thumb, ext) = match g {
        One => (THUMB_FOLDED, [true, false, false, false]),
        Two => (THUMB_FOLDED, [true, true, false, false]),
        Three => (THUMB_FOLDED, [true, true, true, false]),
        Four => (THUMB_FOLDED, [true, true, true, true]),
        Five => (THUMB_EXTENDED, [true, true, true, true]),
        Okay => (THUMB_PINCH, [false, true, true, true]),
        Rock => (THUMB_FOLDED, [true, false, false, true]),
        ThumbsUp => (THUMB_UP, [false, false, false, false]),
    };
    let mut pts = [(0.0, 0.0); NUM_LANDMARKS];
    pts[1..5].copy_from_slice(&thumb);
    for (fi, finger) in FINGERS.iter().enumerate() {
        let base = 5 + 4 * fi;
        pts[base] = finger.mcp;
        let rest = if ext[fi] { extended(finger) } else { folded(finger) };
        pts[base + 1..base + 4].copy_from_slice(&rest);
    }
    if g == Okay {
        // index curls over to meet the thumb tip
        pts[6] = (0.42, -1.16);
        pts[7] = (0.56, -1.14);
        pts[8] = (0.58, -0.99);
    }
    pts
}

pub fn write_dataset<W: Write>(ds: &GestureDataset, mut w: W) -> std::io::Result<()> {
    for s in &ds.samples {
        let mut first = true;
        for v in s.features.as_slice() {
            if !first {
                w.write_all(b",")?;
            }
            first = false;
            write!(w, "{v}")?;
        }
        writeln!(w, ";{}", s.label.index())?;
    }
    Ok(())
}

pub fn save_dataset(ds: &GestureDataset, path: &Path) -> Result<(), GestureError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Parses the text format and re-derives the stratified split.
pub fn read_dataset<R: BufRead>(r: R, train_fraction: f64) -> Result<GestureDataset, GestureError> {
    let mut items = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: String| GestureError::DatasetFormat { line: lineno, msg };
        let (values, label) = line
            .split_once(';')
            .ok_or_else(|| bad("missing ';' before class index".into()))?;
        let label: usize = label.trim().parse().map_err(|e| bad(format!("class index: {e}")))?;
        let label = GestureLabel::from_index(label).ok_or_else(|| bad(format!("class index {label} out of range")))?;
        let values = values
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| bad(format!("value: {e}")))?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite value".into()));
        }
        let features = FeatureVector::from_slice(&values).map_err(|e| bad(e.to_string()))?;
        items.push((features, label));
    }
    Ok(GestureDataset::stratified(items, train_fraction))
}

pub fn load_dataset(path: &Path) -> Result<GestureDataset, GestureError> {
    read_dataset(BufReader::new(File::open(path)?), GeneratorConfig::default().train_fraction)
}
