//! Feedforward classifier/regressor used for both the FL workload and the
//! mobility-prediction network.
//!
//! Hidden layers use rectified-linear activation. The output head is either a
//! softmax over classes (trained with cross-entropy) or raw linear outputs
//! (trained with mean squared error); both share the same backpropagation
//! machinery.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("layer sizes {0:?} do not describe a network (need >= 2 entries, all > 0)")]
    BadLayerSizes(Vec<usize>),
    #[error("checkpoint {path}: {reason}")]
    BadCheckpoint { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One dense layer; weights are `(n_in, n_out)` so a batch multiplies on the left.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// A fully-connected network described by its layer sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layer_sizes: Vec<usize>,
    pub layers: Vec<Layer>,
}

/// Per-layer gradients, congruent to [`Network::layers`].
pub type Gradients = Vec<Layer>;

impl Network {
    /// All-zero network of the given shape.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self, ModelError> {
        if layer_sizes.len() < 2 || layer_sizes.iter().any(|&s| s == 0) {
            return Err(ModelError::BadLayerSizes(layer_sizes.to_vec()));
        }
        let layers = layer_sizes
            .windows(2)
            .map(|w| Layer {
                weights: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Ok(Network {
            layer_sizes: layer_sizes.to_vec(),
            layers,
        })
    }

    /// He-style random init: weights ~ N(0, 2/n_in), biases zero.
    pub fn random_init<R: Rng>(layer_sizes: &[usize], rng: &mut R) -> Result<Self, ModelError> {
        let mut net = Self::zeros(layer_sizes)?;
        for layer in &mut net.layers {
            let n_in = layer.weights.nrows();
            let normal = Normal::new(0.0, (2.0 / n_in as f64).sqrt()).unwrap();
            for w in layer.weights.iter_mut() {
                *w = normal.sample(rng);
            }
        }
        Ok(net)
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Raw outputs of the final layer (logits for classifiers).
    pub fn forward_raw(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut a = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weights) + &layer.bias;
            if i + 1 < self.layers.len() {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = z;
        }
        a
    }

    /// Class probabilities (softmax of the raw outputs).
    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        softmax(self.forward_raw(x))
    }

    /// Forward pass keeping every post-activation, for backprop.
    /// `acts[0]` is the input; `acts.last()` is the raw output.
    fn forward_cached(&self, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = acts.last().unwrap().dot(&layer.weights) + &layer.bias;
            if i + 1 < self.layers.len() {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    /// Backpropagate `d_out` (gradient of the loss w.r.t. the raw outputs).
    fn backward(&self, acts: &[Array2<f64>], mut delta: Array2<f64>) -> Gradients {
        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let grad_w = acts[i].t().dot(&delta);
            let grad_b = delta.sum_axis(Axis(0));
            if i > 0 {
                delta = delta.dot(&layer.weights.t());
                // ReLU mask of the layer below (post-activation > 0).
                delta.zip_mut_with(&acts[i], |d, a| {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            grads.push(Layer {
                weights: grad_w,
                bias: grad_b,
            });
        }
        grads.reverse();
        grads
    }

    /// Exact gradients of mean cross-entropy over the batch.
    pub fn ce_gradients(&self, x: ArrayView2<f64>, labels: &[usize]) -> Gradients {
        let acts = self.forward_cached(x);
        let n = x.nrows() as f64;
        let mut delta = softmax(acts.last().unwrap().clone());
        for (i, &c) in labels.iter().enumerate() {
            delta[(i, c)] -= 1.0;
        }
        delta.mapv_inplace(|v| v / n);
        self.backward(&acts, delta)
    }

    /// Mean cross-entropy loss over the batch.
    pub fn ce_loss(&self, x: ArrayView2<f64>, labels: &[usize]) -> f64 {
        let probs = self.forward(x);
        let n = x.nrows() as f64;
        labels
            .iter()
            .enumerate()
            .map(|(i, &c)| -(probs[(i, c)].max(1e-300)).ln())
            .sum::<f64>()
            / n
    }

    /// Gradients of mean squared error against `targets` (raw-output head).
    pub fn mse_gradients(&self, x: ArrayView2<f64>, targets: ArrayView2<f64>) -> Gradients {
        let acts = self.forward_cached(x);
        let scale = 2.0 / (x.nrows() as f64 * self.n_outputs() as f64);
        let delta = (acts.last().unwrap() - &targets) * scale;
        self.backward(&acts, delta)
    }

    /// Mean squared error of the raw outputs against `targets`.
    pub fn mse_loss(&self, x: ArrayView2<f64>, targets: ArrayView2<f64>) -> f64 {
        let out = self.forward_raw(x);
        let d = &out - &targets;
        d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64
    }

    /// One SGD step: `w -= lr * g`.
    pub fn apply_gradients(&mut self, grads: &Gradients, lr: f64) {
        for (layer, g) in self.layers.iter_mut().zip(grads) {
            layer.weights.zip_mut_with(&g.weights, |w, gw| *w -= lr * gw);
            layer.bias.zip_mut_with(&g.bias, |b, gb| *b -= lr * gb);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
    }

    /// Checkpoint layout: `u32` count of layer sizes, the sizes as `u32`,
    /// then all parameters as little-endian `f64` (per layer: weights
    /// row-major, then bias).
    pub fn save_checkpoint(&self, path: &Path) -> Result<(), ModelError> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(&(self.layer_sizes.len() as u32).to_le_bytes());
        for &s in &self.layer_sizes {
            buf.extend_from_slice(&(s as u32).to_le_bytes());
        }
        for layer in &self.layers {
            for v in layer.weights.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            for v in layer.bias.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self, ModelError> {
        let bad = |reason: &str| ModelError::BadCheckpoint {
            path: path.display().to_string(),
            reason: reason.to_string(),
        };
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut pos = 0usize;
        let mut read_u32 = |bytes: &[u8]| -> Result<u32, ModelError> {
            let end = pos + 4;
            if end > bytes.len() {
                return Err(bad("truncated header"));
            }
            let v = u32::from_le_bytes(bytes[pos..end].try_into().unwrap());
            pos = end;
            Ok(v)
        };
        let k = read_u32(&bytes)? as usize;
        if !(2..=64).contains(&k) {
            return Err(bad("implausible layer count"));
        }
        let mut sizes = Vec::with_capacity(k);
        for _ in 0..k {
            sizes.push(read_u32(&bytes)? as usize);
        }
        let mut net = Network::zeros(&sizes)
            .map_err(|_| bad("layer sizes invalid"))?;
        let expected = 4 + 4 * k + 8 * net.n_params();
        if bytes.len() != expected {
            return Err(bad(&format!(
                "size mismatch: got {} bytes, expected {expected}",
                bytes.len()
            )));
        }
        let mut off = 4 + 4 * k;
        let mut next = || {
            let v = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
            off += 8;
            v
        };
        for layer in &mut net.layers {
            for v in layer.weights.iter_mut() {
                *v = next();
            }
            for v in layer.bias.iter_mut() {
                *v = next();
            }
        }
        Ok(net)
    }
}

/// Row-wise numerically stable softmax.
pub fn softmax(mut logits: Array2<f64>) -> Array2<f64> {
    for mut row in logits.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    logits
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamId};
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn zero_network_is_uniform() {
        let net = Network::zeros(&[4, 10]).unwrap();
        let x = array![[0.3, 0.1, 0.9, 0.5]];
        let p = net.forward(x.view());
        for v in p.iter() {
            assert_relative_eq!(*v, 0.1, epsilon = 1e-12);
        }
    }

    #[test]
    fn probabilities_normalized() {
        let mut rng = stream(0, StreamId::ModelInit { service: 0 });
        let net = Network::random_init(&[6, 8, 4], &mut rng).unwrap();
        let x = Array2::from_shape_fn((5, 6), |_| rng.random::<f64>());
        let p = net.forward(x.view());
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        let logits = array![[1.0, -2.0, 0.5], [0.0, 0.0, 3.0]];
        let shifted = logits.clone() + 7.3;
        let a = softmax(logits);
        let b = softmax(shifted);
        for (x, y) in a.iter().zip(b.iter()) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn duplicated_batch_same_gradient() {
        let mut rng = stream(5, StreamId::ModelInit { service: 0 });
        let net = Network::random_init(&[3, 5, 2], &mut rng).unwrap();
        let x = array![[0.2, 0.7, 0.1], [0.9, 0.4, 0.6]];
        let labels = [0usize, 1];
        let x2 = ndarray::concatenate(Axis(0), &[x.view(), x.view()]).unwrap();
        let labels2 = [0usize, 1, 0, 1];
        let g1 = net.ce_gradients(x.view(), &labels);
        let g2 = net.ce_gradients(x2.view(), &labels2);
        for (a, b) in g1.iter().zip(&g2) {
            for (u, v) in a.weights.iter().zip(b.weights.iter()) {
                assert_relative_eq!(u, v, epsilon = 1e-12);
            }
        }
    }

    /// Central finite differences on a 6-parameter linear softmax model.
    #[test]
    fn gradients_match_finite_differences_small() {
        let mut net = Network::zeros(&[2, 2]).unwrap();
        net.layers[0].weights = array![[0.4, -0.3], [0.7, 0.2]];
        net.layers[0].bias = array![0.1, -0.2];
        let x = array![[0.5, -0.8], [0.2, 0.9], [-0.4, 0.3]];
        let labels = [0usize, 1, 1];
        let analytic = net.ce_gradients(x.view(), &labels);

        let h = 1e-4;
        let mut check = |get: &dyn Fn(&Network) -> f64, set: &dyn Fn(&mut Network, f64), g: f64| {
            let orig = get(&net);
            set(&mut net, orig + h);
            let up = net.ce_loss(x.view(), &labels);
            set(&mut net, orig - h);
            let down = net.ce_loss(x.view(), &labels);
            set(&mut net, orig);
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - g).abs() / g.abs().max(1e-8);
            assert!(rel <= 1e-4, "fd {fd} vs analytic {g}");
        };
        for i in 0..2 {
            for j in 0..2 {
                check(
                    &|n: &Network| n.layers[0].weights[(i, j)],
                    &|n: &mut Network, v| n.layers[0].weights[(i, j)] = v,
                    analytic[0].weights[(i, j)],
                );
            }
            check(
                &|n: &Network| n.layers[0].bias[i],
                &|n: &mut Network, v| n.layers[0].bias[i] = v,
                analytic[0].bias[i],
            );
        }
    }

    /// Gradient at a constructed optimum of a separable problem vanishes.
    #[test]
    fn gradient_zero_at_constructed_optimum() {
        // One-hot inputs with matching labels; huge diagonal weights drive the
        // softmax to the exact targets, so the CE gradient goes to zero.
        let mut net = Network::zeros(&[2, 2]).unwrap();
        net.layers[0].weights = array![[60.0, -60.0], [-60.0, 60.0]];
        let x = array![[1.0, 0.0], [0.0, 1.0]];
        let labels = [0usize, 1];
        let grads = net.ce_gradients(x.view(), &labels);
        for g in &grads {
            assert!(g.weights.iter().all(|v| v.abs() <= 1e-6));
            assert!(g.bias.iter().all(|v| v.abs() <= 1e-6));
        }
    }

    #[test]
    fn checkpoint_roundtrip_bit_exact() {
        let mut rng = stream(9, StreamId::ModelInit { service: 2 });
        let net = Network::random_init(&[7, 5, 3], &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        net.save_checkpoint(&path).unwrap();
        let back = Network::load_checkpoint(&path).unwrap();
        assert_eq!(net.layer_sizes, back.layer_sizes);
        for (a, b) in net.layers.iter().zip(&back.layers) {
            for (u, v) in a.weights.iter().zip(b.weights.iter()) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
            for (u, v) in a.bias.iter().zip(b.bias.iter()) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let net = Network::zeros(&[3, 2]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        net.save_checkpoint(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            Network::load_checkpoint(&path),
            Err(ModelError::BadCheckpoint { .. })
        ));
    }
}
