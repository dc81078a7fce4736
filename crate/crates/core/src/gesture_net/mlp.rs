//! Dense feed-forward network: rectifier hidden layers, softmax output.
//!
//! Activations are stored batch-major (`batch x width`, row-major) and every
//! matrix product goes through `matrixmultiply::dgemm`, which is
//! single-threaded and therefore bit-reproducible on a given build.

use rand::Rng;

/// One fully connected layer, `out = W * in + b` with `W` stored row-major as
/// `rows = outputs` by `cols = inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Dense {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            biases: vec![0.0; rows],
        }
    }

    /// Weights uniform in `+-sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let weights = (0..rows * cols).map(|_| rng.random_range(-limit..=limit)).collect();
        Dense {
            rows,
            cols,
            weights,
            biases: vec![0.0; rows],
        }
    }

    pub fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights[out * self.cols + inp]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Dense>,
}

/// Parameter gradients, shaped like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Gradients {
            layers: model.layers.iter().map(|l| Dense::zeros(l.rows, l.cols)).collect(),
        }
    }
}

impl MlpModel {
    /// `sizes` lists every width from input to output, e.g. `[42, 168, 546, 8]`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need at least an input and an output width");
        MlpModel {
            layers: sizes.windows(2).map(|w| Dense::glorot(w[1], w[0], rng)).collect(),
        }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "need at least an input and an output width");
        MlpModel {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[1], w[0])).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(|l| l.rows));
        sizes
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    /// Class probabilities for one input.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_batch(x, 1)
    }

    /// Class probabilities for `batch` inputs laid out row-major.
    pub fn forward_batch(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let mut acts = self.activations(x, batch);
        let mut out = acts.pop().expect("at least one layer");
        softmax_rows(&mut out, self.output_dim());
        out
    }

    /// Pre-softmax activations of every layer; `result[0]` is the input and
    /// the last entry holds the output logits.
    fn activations(&self, x: &[f64], batch: usize) -> Vec<Vec<f64>> {
        assert_eq!(x.len(), batch * self.input_dim(), "input shape mismatch");
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let input = &acts[li];
            let mut z = Vec::with_capacity(batch * layer.rows);
            for _ in 0..batch {
                z.extend_from_slice(&layer.biases);
            }
            // z (batch x rows) += input (batch x cols) * W^T (cols x rows)
            gemm(
                batch,
                layer.cols,
                layer.rows,
                MatRef::row_major(input, layer.cols),
                MatRef::col_major(&layer.weights, layer.cols),
                1.0,
                &mut z,
            );
            if li != last {
                for v in z.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            acts.push(z);
        }
        acts
    }

    /// Mean cross-entropy over the batch and its gradient with respect to
    /// every parameter. Also returns how many rows the model already
    /// classifies correctly.
    pub fn loss_and_gradients(&self, x: &[f64], labels: &[usize], grads: &mut Gradients) -> (f64, usize) {
        let batch = labels.len();
        let classes = self.output_dim();
        let acts = self.activations(x, batch);
        let logits = &acts[acts.len() - 1];

        let mut delta = logits.clone();
        let mut loss = 0.0;
        let mut correct = 0;
        for (b, &y) in labels.iter().enumerate() {
            let row = &mut delta[b * classes..(b + 1) * classes];
            if super::argmax(row) == y {
                correct += 1;
            }
            let log_z = log_sum_exp(row);
            loss -= row[y] - log_z;
            for v in row.iter_mut() {
                *v = (*v - log_z).exp();
            }
            row[y] -= 1.0;
            for v in row.iter_mut() {
                *v /= batch as f64;
            }
        }
        loss /= batch as f64;

        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &acts[li];
            let g = &mut grads.layers[li];

            // dW (rows x cols) = delta^T (rows x batch) * input (batch x cols)
            gemm(
                layer.rows,
                batch,
                layer.cols,
                MatRef::col_major(&delta, layer.rows),
                MatRef::row_major(input, layer.cols),
                0.0,
                &mut g.weights,
            );
            g.biases.iter_mut().for_each(|v| *v = 0.0);
            for b in 0..batch {
                for (gb, d) in g.biases.iter_mut().zip(&delta[b * layer.rows..(b + 1) * layer.rows]) {
                    *gb += d;
                }
            }

            if li > 0 {
                // d_input (batch x cols) = delta (batch x rows) * W (rows x cols)
                let mut d_in = vec![0.0; batch * layer.cols];
                gemm(
                    batch,
                    layer.rows,
                    layer.cols,
                    MatRef::row_major(&delta, layer.rows),
                    MatRef::row_major(&layer.weights, layer.cols),
                    0.0,
                    &mut d_in,
                );
                // the input of this layer is the rectified output of the previous one
                for (d, a) in d_in.iter_mut().zip(input.iter()) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
                delta = d_in;
            }
        }
        (loss, correct)
    }

    /// Mean cross-entropy without gradients.
    pub fn loss(&self, x: &[f64], labels: &[usize]) -> f64 {
        let classes = self.output_dim();
        let acts = self.activations(x, labels.len());
        let logits = &acts[acts.len() - 1];
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(b, &y)| {
                let row = &logits[b * classes..(b + 1) * classes];
                log_sum_exp(row) - row[y]
            })
            .sum();
        total / labels.len() as f64
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn softmax_rows(z: &mut [f64], width: usize) {
    for row in z.chunks_mut(width) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Strided view of a dense matrix.
#[derive(Clone, Copy)]
struct MatRef<'a> {
    data: &'a [f64],
    row_stride: usize,
    col_stride: usize,
}

impl<'a> MatRef<'a> {
    /// Element `(i, j)` at `data[i * width + j]`.
    fn row_major(data: &'a [f64], width: usize) -> Self {
        MatRef {
            data,
            row_stride: width,
            col_stride: 1,
        }
    }

    /// Element `(i, j)` at `data[j * height + i]`.
    fn col_major(data: &'a [f64], height: usize) -> Self {
        MatRef {
            data,
            row_stride: 1,
            col_stride: height,
        }
    }

    fn fits(&self, rows: usize, cols: usize) -> bool {
        rows == 0 || cols == 0 || (rows - 1) * self.row_stride + (cols - 1) * self.col_stride < self.data.len()
    }
}

/// `c (m x n, row-major) = a (m x k) * b (k x n) + beta * c`.
fn gemm(m: usize, k: usize, n: usize, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64]) {
    assert!(a.fits(m, k) && b.fits(k, n) && c.len() >= m * n, "gemm shape mismatch");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` does not alias `a` or `b` because it is borrowed mutably.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
