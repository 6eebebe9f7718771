//! A fully connected sigmoid-hidden network with softmax cross-entropy
//! output, on a flat parameter vector, with exact backpropagation.
//!
//! Parameter layout (column-major blocks): `W1 (hidden x input)`,
//! `b1 (hidden)`, `W2 (output x hidden)`, `b2 (output)`.

use nalgebra::{DMatrix, DMatrixView};
use rand::Rng;

use super::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpArch {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl MlpArch {
    /// The MNIST architecture.
    pub fn mnist() -> Self {
        MlpArch {
            input: 784,
            hidden: 250,
            output: 10,
        }
    }

    /// Total number of parameters including biases; derived, never
    /// hard-coded.
    pub fn param_count(&self) -> usize {
        self.hidden * self.input + self.hidden + self.output * self.hidden + self.output
    }

    fn offsets(&self) -> (usize, usize, usize, usize) {
        let w1_end = self.hidden * self.input;
        let b1_end = w1_end + self.hidden;
        let w2_end = b1_end + self.output * self.hidden;
        let b2_end = w2_end + self.output;
        (w1_end, b1_end, w2_end, b2_end)
    }

    /// Uniform `±1/sqrt(fan_in)` weight initialization, zero biases.
    pub fn init_weights<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut w = vec![0.0; self.param_count()];
        let (w1_end, b1_end, w2_end, _) = self.offsets();
        let bound1 = 1.0 / (self.input as f64).sqrt();
        for v in &mut w[..w1_end] {
            *v = rng.random_range(-bound1..bound1);
        }
        let bound2 = 1.0 / (self.hidden as f64).sqrt();
        for v in &mut w[b1_end..w2_end] {
            *v = rng.random_range(-bound2..bound2);
        }
        w
    }

    /// Forward pass on a batch (one column per example): hidden sigmoid
    /// activations and output probabilities, plus the mean cross-entropy
    /// when labels are given.
    fn forward(
        &self,
        w: &[f64],
        x: &DMatrix<f64>,
        labels: Option<&[u8]>,
    ) -> (DMatrix<f64>, DMatrix<f64>, f64) {
        assert_eq!(w.len(), self.param_count());
        assert_eq!(x.nrows(), self.input);
        let k = x.ncols();
        let (w1_end, b1_end, w2_end, b2_end) = self.offsets();
        let w1 = DMatrixView::from_slice(&w[..w1_end], self.hidden, self.input);
        let b1 = &w[w1_end..b1_end];
        let w2 = DMatrixView::from_slice(&w[b1_end..w2_end], self.output, self.hidden);
        let b2 = &w[w2_end..b2_end];

        let mut h = w1 * x;
        for mut col in h.column_iter_mut() {
            for (v, b) in col.iter_mut().zip(b1) {
                *v = sigmoid(*v + b);
            }
        }
        let mut p = w2 * &h;
        let mut loss = 0.0;
        for (ci, mut col) in p.column_iter_mut().enumerate() {
            let mut max = f64::NEG_INFINITY;
            for (v, b) in col.iter_mut().zip(b2) {
                *v += b;
                max = max.max(*v);
            }
            let mut total = 0.0;
            for v in col.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in col.iter_mut() {
                *v /= total;
            }
            if let Some(labels) = labels {
                loss -= col[usize::from(labels[ci])].max(f64::MIN_POSITIVE).ln();
            }
        }
        (h, p, loss / k as f64)
    }

    /// Mean cross-entropy over the batch and its exact gradient.
    pub fn loss_and_gradient(
        &self,
        w: &[f64],
        x: &DMatrix<f64>,
        labels: &[u8],
    ) -> (f64, Vec<f64>) {
        assert_eq!(x.ncols(), labels.len());
        assert!(!labels.is_empty());
        let k = x.ncols();
        let (w1_end, b1_end, w2_end, _) = self.offsets();
        let w2 = DMatrixView::from_slice(&w[b1_end..w2_end], self.output, self.hidden);

        let (h, mut p, loss) = self.forward(w, x, Some(labels));

        // dU = (P - Y) / k
        for (ci, mut col) in p.column_iter_mut().enumerate() {
            col[usize::from(labels[ci])] -= 1.0;
            col /= k as f64;
        }
        let g_w2 = &p * h.transpose();
        let mut dh = w2.transpose() * &p;
        for (dv, hv) in dh.iter_mut().zip(h.iter()) {
            *dv *= hv * (1.0 - hv);
        }
        let g_w1 = &dh * x.transpose();

        let mut grad = vec![0.0; self.param_count()];
        grad[..w1_end].copy_from_slice(g_w1.as_slice());
        for col in p.column_iter() {
            for (g, v) in grad[w2_end..].iter_mut().zip(col.iter()) {
                *g += v;
            }
        }
        grad[b1_end..w2_end].copy_from_slice(g_w2.as_slice());
        for col in dh.column_iter() {
            for (g, v) in grad[w1_end..b1_end].iter_mut().zip(col.iter()) {
                *g += v;
            }
        }
        (loss, grad)
    }

    /// Mean cross-entropy over a whole dataset, evaluated in chunks.
    pub fn loss(&self, w: &[f64], ds: &Dataset) -> f64 {
        let mut total = 0.0;
        for (x, labels) in chunked(ds, 1024) {
            let (_, _, loss) = self.forward(w, &x, Some(labels));
            total += loss * labels.len() as f64;
        }
        total / ds.len() as f64
    }

    /// Fraction of examples whose argmax class matches the label.
    pub fn accuracy(&self, w: &[f64], ds: &Dataset) -> f64 {
        let mut correct = 0usize;
        for (x, labels) in chunked(ds, 1024) {
            let (_, p, _) = self.forward(w, &x, None);
            for (ci, col) in p.column_iter().enumerate() {
                let mut best = 0usize;
                let mut best_v = f64::NEG_INFINITY;
                for (r, &v) in col.iter().enumerate() {
                    if v > best_v {
                        best_v = v;
                        best = r;
                    }
                }
                if best == usize::from(labels[ci]) {
                    correct += 1;
                }
            }
        }
        correct as f64 / ds.len() as f64
    }
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn chunked(ds: &Dataset, chunk: usize) -> impl Iterator<Item = (DMatrix<f64>, &[u8])> {
    (0..ds.len()).step_by(chunk).map(move |start| {
        let end = (start + chunk).min(ds.len());
        let x = ds.inputs.columns(start, end - start).into_owned();
        (x, &ds.labels[start..end])
    })
}
