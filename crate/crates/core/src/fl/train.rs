//! Local SGD training, federated averaging, and evaluation.

use crate::fl::data::Dataset;
use crate::fl::model::{Layer, Network};
use ndarray::Axis;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("cannot aggregate an empty model list")]
    EmptyAggregation,
    #[error("aggregation weights are all zero")]
    ZeroWeights,
    #[error("model shapes are not congruent")]
    ShapeMismatch,
}

/// Local training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub local_iterations: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            local_iterations: 30,
            learning_rate: 0.05,
            batch_size: 32,
        }
    }
}

/// Run `config.local_iterations` mini-batch SGD steps on `shard`.
/// An empty shard returns the model unchanged.
pub fn local_train<R: Rng>(
    model: &Network,
    shard: &Dataset,
    config: &TrainConfig,
    rng: &mut R,
) -> Network {
    let mut net = model.clone();
    if shard.is_empty() || config.local_iterations == 0 || config.learning_rate == 0.0 {
        return net;
    }
    let n = shard.len();
    let batch = config.batch_size.max(1);
    let mut idx = vec![0usize; batch];
    for _ in 0..config.local_iterations {
        for slot in idx.iter_mut() {
            *slot = rng.random_range(0..n);
        }
        let x = shard.features.select(Axis(0), &idx);
        let y: Vec<usize> = idx.iter().map(|&i| shard.labels[i]).collect();
        let grads = net.ce_gradients(x.view(), &y);
        net.apply_gradients(&grads, config.learning_rate);
    }
    net
}

/// Coordinate-wise weighted average with weights normalized to sum 1.
pub fn fedavg(models: &[Network], weights: &[f64]) -> Result<Network, TrainError> {
    if models.is_empty() {
        return Err(TrainError::EmptyAggregation);
    }
    assert_eq!(models.len(), weights.len());
    debug_assert!(weights.iter().all(|&w| w >= 0.0));
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(TrainError::ZeroWeights);
    }
    for m in &models[1..] {
        if m.layer_sizes != models[0].layer_sizes {
            return Err(TrainError::ShapeMismatch);
        }
    }

    let mut avg = Network::zeros(&models[0].layer_sizes).expect("validated shape");
    for (model, &w) in models.iter().zip(weights) {
        let scale = w / total;
        for (acc, layer) in avg.layers.iter_mut().zip(&model.layers) {
            acc.weights.zip_mut_with(&layer.weights, |a, v| *a += scale * v);
            acc.bias.zip_mut_with(&layer.bias, |a, v| *a += scale * v);
        }
    }
    Ok(avg)
}

/// Fraction of argmax-correct predictions; ties break toward the lowest
/// class index.
pub fn evaluate(model: &Network, test: &Dataset) -> f64 {
    if test.is_empty() {
        return 0.0;
    }
    let logits = model.forward_raw(test.features.view());
    let mut correct = 0usize;
    for (row, &label) in logits.rows().into_iter().zip(&test.labels) {
        let mut best = 0usize;
        let mut best_v = row[0];
        for (i, &v) in row.iter().enumerate().skip(1) {
            if v > best_v {
                best = i;
                best_v = v;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    correct as f64 / test.len() as f64
}

#[allow(dead_code)]
fn layer_map(a: &Layer, f: impl Fn(f64) -> f64) -> Layer {
    Layer {
        weights: a.weights.mapv(&f),
        bias: a.bias.mapv(&f),
    }
}
