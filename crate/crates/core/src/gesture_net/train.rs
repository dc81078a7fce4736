use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{
    argmax, FeatureVector, GestureClassifier, GestureDataset, GestureError, Gradients, MlpModel, Sample, Split,
    DEFAULT_HIDDEN, NUM_CLASSES, NUM_FEATURES,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Wrist-center and radius-scale inputs before they reach the network.
    pub normalize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: DEFAULT_HIDDEN.to_vec(),
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            momentum: 0.9,
            seed: 0,
            normalize: true,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), GestureError> {
        let bad = |m: &str| Err(GestureError::BadConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden widths must be positive");
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![NUM_FEATURES];
        sizes.extend(&self.hidden);
        sizes.push(NUM_CLASSES);
        sizes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Running mean over the epoch's mini-batches.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub classifier: GestureClassifier,
    pub epochs: Vec<EpochMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub count: usize,
    pub accuracy: f64,
    pub mean_loss: f64,
    /// `confusion[true][predicted]`.
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
}

impl Evaluation {
    /// Every diagonal entry exceeds the rest of its row.
    pub fn diagonal_dominant(&self) -> bool {
        self.confusion.iter().enumerate().all(|(i, row)| {
            let off: usize = row.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v).sum();
            row[i] > off
        })
    }
}

/// Anything that maps feature vectors to class probabilities.
pub trait Predictor {
    fn probabilities_batch(&self, xs: &[&FeatureVector]) -> Result<Vec<f64>, GestureError>;
}

impl Predictor for GestureClassifier {
    fn probabilities_batch(&self, xs: &[&FeatureVector]) -> Result<Vec<f64>, GestureError> {
        let mut flat = Vec::with_capacity(xs.len() * NUM_FEATURES);
        for x in xs {
            if self.normalize {
                flat.extend_from_slice(x.normalize()?.as_slice());
            } else {
                flat.extend_from_slice(x.as_slice());
            }
        }
        Ok(self.model.forward_batch(&flat, xs.len()))
    }
}

const EVAL_CHUNK: usize = 256;

pub fn evaluate<'a, P, I>(predictor: &P, samples: I) -> Result<Evaluation, GestureError>
where
    P: Predictor + ?Sized,
    I: IntoIterator<Item = &'a Sample>,
{
    let samples: Vec<&Sample> = samples.into_iter().collect();
    if samples.is_empty() {
        return Err(GestureError::EmptyDataset);
    }
    let mut confusion = [[0usize; NUM_CLASSES]; NUM_CLASSES];
    let mut loss = 0.0;
    for chunk in samples.chunks(EVAL_CHUNK) {
        let xs: Vec<&FeatureVector> = chunk.iter().map(|s| &s.features).collect();
        let probs = predictor.probabilities_batch(&xs)?;
        for (s, p) in chunk.iter().zip(probs.chunks(NUM_CLASSES)) {
            let y = s.label.index();
            confusion[y][argmax(p)] += 1;
            loss -= p[y].max(f64::MIN_POSITIVE).ln();
        }
    }
    let correct: usize = (0..NUM_CLASSES).map(|i| confusion[i][i]).sum();
    Ok(Evaluation {
        count: samples.len(),
        accuracy: correct as f64 / samples.len() as f64,
        mean_loss: loss / samples.len() as f64,
        confusion,
    })
}

/// Mini-batch SGD with momentum on the training split; the test split, when
/// present, is evaluated after every epoch.
pub fn train(dataset: &GestureDataset, config: &TrainConfig) -> Result<TrainReport, GestureError> {
    config.validate()?;
    let train: Vec<&Sample> = dataset.split(Split::Train).collect();
    if train.is_empty() {
        return Err(GestureError::EmptyDataset);
    }
    let test: Vec<&Sample> = dataset.split(Split::Test).collect();

    let mut inputs = Vec::with_capacity(train.len() * NUM_FEATURES);
    for s in &train {
        if config.normalize {
            inputs.extend_from_slice(s.features.normalize()?.as_slice());
        } else {
            inputs.extend_from_slice(s.features.as_slice());
        }
    }
    let labels: Vec<usize> = train.iter().map(|s| s.label.index()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut classifier = GestureClassifier::new(MlpModel::new(&config.layer_sizes(), &mut rng), config.normalize);
    let mut grads = Gradients::zeros_like(&classifier.model);
    let mut velocity = Gradients::zeros_like(&classifier.model);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut batch_x = Vec::with_capacity(config.batch_size * NUM_FEATURES);
    let mut batch_y = Vec::with_capacity(config.batch_size);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for chunk in order.chunks(config.batch_size) {
            batch_x.clear();
            batch_y.clear();
            for &i in chunk {
                batch_x.extend_from_slice(&inputs[i * NUM_FEATURES..(i + 1) * NUM_FEATURES]);
                batch_y.push(labels[i]);
            }
            let (loss, ok) = classifier.model.loss_and_gradients(&batch_x, &batch_y, &mut grads);
            if !loss.is_finite() {
                return Err(GestureError::DivergedTraining { epoch, loss });
            }
            loss_sum += loss * chunk.len() as f64;
            correct += ok;
            sgd_step(&mut classifier.model, &grads, &mut velocity, config);
        }
        if !classifier.model.is_finite() {
            return Err(GestureError::DivergedTraining { epoch, loss: f64::NAN });
        }

        let (test_loss, test_accuracy) = if test.is_empty() {
            (None, None)
        } else {
            let e = evaluate(&classifier, test.iter().copied())?;
            (Some(e.mean_loss), Some(e.accuracy))
        };
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            test_loss,
            test_accuracy,
        };
        tracing::debug!(
            epoch,
            train_loss = m.train_loss,
            train_accuracy = m.train_accuracy,
            ?test_accuracy,
            "epoch done"
        );
        history.push(m);
    }

    Ok(TrainReport {
        classifier,
        epochs: history,
    })
}

fn sgd_step(model: &mut MlpModel, grads: &Gradients, velocity: &mut Gradients, cfg: &TrainConfig) {
    for ((layer, g), v) in model.layers.iter_mut().zip(&grads.layers).zip(velocity.layers.iter_mut()) {
        for ((p, gv), vv) in layer.weights.iter_mut().zip(&g.weights).zip(v.weights.iter_mut()) {
            *vv = cfg.momentum * *vv - cfg.learning_rate * gv;
            *p += *vv;
        }
        for ((p, gv), vv) in layer.biases.iter_mut().zip(&g.biases).zip(v.biases.iter_mut()) {
            *vv = cfg.momentum * *vv - cfg.learning_rate * gv;
            *p += *vv;
        }
    }
}
