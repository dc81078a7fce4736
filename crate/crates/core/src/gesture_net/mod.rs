//! Gesture classification from 2D hand landmarks.
//!
//! A dense network maps the 42 `(x, y)` landmark coordinates to one of eight
//! gestures. Training, evaluation, the procedural corpus and the model file
//! format live in the submodules.

mod dataset;
mod mlp;
mod model_io;
mod train;

pub use dataset::{
    generate_dataset, generate_dataset_with, load_dataset, read_dataset, save_dataset, template, write_dataset,
    GestureDataset, GeneratorConfig, Sample, Split,
};
pub use mlp::{Dense, Gradients, MlpModel};
pub use model_io::{load_model, read_model, save_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use train::{evaluate, train, EpochMetrics, Evaluation, Predictor, TrainConfig, TrainReport};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::handpose::{HandFrame, NUM_LANDMARKS};

pub const NUM_FEATURES: usize = 2 * NUM_LANDMARKS;
pub const NUM_CLASSES: usize = 8;

/// Hidden layer widths of the default network.
pub const DEFAULT_HIDDEN: [usize; 2] = [168, 546];

#[derive(Debug, Error)]
pub enum GestureError {
    #[error("all landmarks coincide; sample cannot be normalized")]
    DegenerateSample,
    #[error("dataset split is empty")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    DivergedTraining { epoch: usize, loss: f64 },
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("model file: {0}")]
    Format(String),
    #[error("dataset line {line}: {msg}")]
    DatasetFormat { line: usize, msg: String },
    #[error("feature vector has {0} values, expected {NUM_FEATURES}")]
    FeatureLength(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GestureLabel {
    One,
    Two,
    Three,
    Four,
    Five,
    Okay,
    Rock,
    ThumbsUp,
}

impl GestureLabel {
    pub const ALL: [GestureLabel; NUM_CLASSES] = [
        GestureLabel::One,
        GestureLabel::Two,
        GestureLabel::Three,
        GestureLabel::Four,
        GestureLabel::Five,
        GestureLabel::Okay,
        GestureLabel::Rock,
        GestureLabel::ThumbsUp,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<GestureLabel> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            GestureLabel::One => "one",
            GestureLabel::Two => "two",
            GestureLabel::Three => "three",
            GestureLabel::Four => "four",
            GestureLabel::Five => "five",
            GestureLabel::Okay => "okay",
            GestureLabel::Rock => "rock",
            GestureLabel::ThumbsUp => "thumbs_up",
        }
    }
}

impl fmt::Display for GestureLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GestureLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        Self::ALL
            .into_iter()
            .find(|g| g.name() == key || (key == "thumbsup" && *g == GestureLabel::ThumbsUp))
            .ok_or_else(|| format!("unknown gesture {s:?}"))
    }
}

/// `(x, y)` of the 21 landmarks, landmark-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub [f64; NUM_FEATURES]);

impl FeatureVector {
    pub fn from_slice(values: &[f64]) -> Result<Self, GestureError> {
        let arr: [f64; NUM_FEATURES] = values
            .try_into()
            .map_err(|_| GestureError::FeatureLength(values.len()))?;
        Ok(FeatureVector(arr))
    }

    /// Projects a hand frame onto the image plane.
    pub fn from_frame(frame: &HandFrame) -> Self {
        let mut v = [0.0; NUM_FEATURES];
        for (i, p) in frame.landmarks.iter().enumerate() {
            v[2 * i] = p.x;
            v[2 * i + 1] = p.y;
        }
        FeatureVector(v)
    }

    pub fn point(&self, i: usize) -> (f64, f64) {
        (self.0[2 * i], self.0[2 * i + 1])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Wrist at the origin, farthest landmark at distance 1.
    pub fn normalize(&self) -> Result<FeatureVector, GestureError> {
        let (wx, wy) = self.point(0);
        let mut out = [0.0; NUM_FEATURES];
        let mut max_r = 0.0f64;
        for i in 0..NUM_LANDMARKS {
            let (x, y) = self.point(i);
            out[2 * i] = x - wx;
            out[2 * i + 1] = y - wy;
            max_r = max_r.max(out[2 * i].hypot(out[2 * i + 1]));
        }
        if !(max_r > 0.0) || !max_r.is_finite() {
            return Err(GestureError::DegenerateSample);
        }
        for v in out.iter_mut() {
            *v /= max_r;
        }
        Ok(FeatureVector(out))
    }
}

/// Index of the largest probability; the lowest index wins ties.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Network plus the input preprocessing it was trained with.
#[derive(Debug, Clone)]
pub struct GestureClassifier {
    pub model: MlpModel,
    pub normalize: bool,
}

impl GestureClassifier {
    pub fn new(model: MlpModel, normalize: bool) -> Self {
        GestureClassifier { model, normalize }
    }

    pub fn probabilities(&self, features: &FeatureVector) -> Result<Vec<f64>, GestureError> {
        if self.normalize {
            Ok(self.model.forward(features.normalize()?.as_slice()))
        } else {
            Ok(self.model.forward(features.as_slice()))
        }
    }

    pub fn classify(&self, features: &FeatureVector) -> Result<(GestureLabel, f64), GestureError> {
        let probs = self.probabilities(features)?;
        let best = argmax(&probs);
        let label = GestureLabel::from_index(best).ok_or_else(|| {
            GestureError::Format(format!("model has {} outputs, expected {NUM_CLASSES}", probs.len()))
        })?;
        Ok((label, probs[best]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FeatureVector {
        let mut v = [0.0; NUM_FEATURES];
        for i in 0..NUM_LANDMARKS {
            let a = i as f64 * 0.7;
            v[2 * i] = 0.3 + 0.1 * a.cos() * (i as f64).sqrt();
            v[2 * i + 1] = 0.6 - 0.05 * i as f64 + 0.01 * a.sin();
        }
        FeatureVector(v)
    }

    fn max_diff(a: &FeatureVector, b: &FeatureVector) -> f64 {
        a.0.iter().zip(b.0.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn labels_encode_in_listed_order() {
        for (i, g) in GestureLabel::ALL.iter().enumerate() {
            assert_eq!(g.index(), i);
            assert_eq!(GestureLabel::from_index(i), Some(*g));
            assert_eq!(g.name().parse::<GestureLabel>().unwrap(), *g);
        }
        assert_eq!("Thumbs Up".parse::<GestureLabel>().unwrap(), GestureLabel::ThumbsUp);
        assert!("fist".parse::<GestureLabel>().is_err());
    }

    #[test]
    fn normalized_input_is_a_fixed_point() {
        let n = sample().normalize().unwrap();
        assert_eq!(n.point(0), (0.0, 0.0));
        assert!(max_diff(&n, &n.normalize().unwrap()) < 1e-9);
    }

    #[test]
    fn normalize_ignores_shift_and_scale() {
        let base = sample();
        let n = base.normalize().unwrap();
        let mut shifted = base.clone();
        for i in 0..NUM_LANDMARKS {
            shifted.0[2 * i] += 3.0;
            shifted.0[2 * i + 1] -= 7.0;
        }
        assert!(max_diff(&n, &shifted.normalize().unwrap()) < 1e-9);

        let (wx, wy) = base.point(0);
        let mut scaled = base.clone();
        for i in 0..NUM_LANDMARKS {
            scaled.0[2 * i] = wx + 2.5 * (base.0[2 * i] - wx);
            scaled.0[2 * i + 1] = wy + 2.5 * (base.0[2 * i + 1] - wy);
        }
        assert!(max_diff(&n, &scaled.normalize().unwrap()) < 1e-9);
    }

    #[test]
    fn coincident_points_cannot_be_normalized() {
        let v = FeatureVector([1.5; NUM_FEATURES]);
        assert!(matches!(v.normalize(), Err(GestureError::DegenerateSample)));
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.125; 8]), 0);
    }
}
