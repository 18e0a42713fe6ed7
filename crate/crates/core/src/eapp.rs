//! Mobility-prediction estimator trained on collected position histories.
//!
//! One predictor is shared across all clients. It maps the last `k` sampled
//! positions (normalized into the arena bounding box) to the position one
//! sampling period ahead; predictions at other horizons scale the predicted
//! displacement linearly. Before any training has happened, a linear
//! extrapolation fallback stands in, so downstream control logic is never
//! starved for predictions.

use crate::descriptor::TimedPosition;
use crate::fl::model::Network;
use crate::geom::{Point, Rect};
use rand::seq::SliceRandom;
use rand::Rng;
use ndarray::Array2;

#[derive(Debug, Clone, PartialEq)]
pub enum PredictorKind {
    /// Linear extrapolation from the last two positions.
    Fallback,
    /// Trained 4-layer network (input, two rectified-linear hidden, output).
    Trained(Network),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MobilityPredictor {
    pub kind: PredictorKind,
    /// Number of history points consumed per prediction.
    pub history_window: usize,
    /// Horizon the network was trained at, seconds.
    pub horizon: f64,
    /// Coordinate normalization box.
    pub bounds: Rect,
}

/// Outcome of an eApp training pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EappTrainResult {
    pub predictor: MobilityPredictor,
    /// Final training MSE in normalized units (NaN when nothing was trained).
    pub final_mse: f64,
    /// Set when the returned predictor is untrained (no pairs, or zero epochs).
    pub untrained: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EappConfig {
    pub history_window: usize,
    pub hidden: [usize; 2],
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for EappConfig {
    fn default() -> Self {
        EappConfig {
            history_window: 3,
            hidden: [32, 32],
            learning_rate: 0.01,
            epochs: 200,
            batch_size: 32,
        }
    }
}

impl MobilityPredictor {
    pub fn fallback(history_window: usize, horizon: f64, bounds: Rect) -> Self {
        MobilityPredictor {
            kind: PredictorKind::Fallback,
            history_window,
            horizon,
            bounds,
        }
    }
}

fn norm(p: Point, b: &Rect) -> (f64, f64) {
    let w = b.width().max(1e-12);
    let h = b.height().max(1e-12);
    ((p.x - b.min_x) / w, (p.y - b.min_y) / h)
}

fn denorm(x: f64, y: f64, b: &Rect) -> Point {
    Point::new(b.min_x + x * b.width(), b.min_y + y * b.height())
}

/// Train the shared predictor on all clients' histories.
///
/// A training pair needs `k + 1` consecutive history points whose final gap
/// spans `horizon`; clients with insufficient history contribute nothing.
/// Returns the fallback predictor flagged untrained when no pair exists.
pub fn train_eapp<R: Rng>(
    histories: &[&[TimedPosition]],
    horizon: f64,
    bounds: Rect,
    config: &EappConfig,
    rng: &mut R,
) -> EappTrainResult {
    let k = config.history_window;
    let mut inputs: Vec<[f64; 2]> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for history in histories {
        if history.len() < k + 1 {
            continue;
        }
        for window in history.windows(k + 1) {
            let gap = window[k].t - window[k - 1].t;
            if (gap - horizon).abs() > 1e-6 {
                continue;
            }
            let mut row = Vec::with_capacity(2 * k);
            for p in &window[..k] {
                let (x, y) = norm(p.position, &bounds);
                row.push(x);
                row.push(y);
            }
            let (tx, ty) = norm(window[k].position, &bounds);
            rows.push(row);
            inputs.push([tx, ty]);
        }
    }

    if rows.is_empty() {
        return EappTrainResult {
            predictor: MobilityPredictor::fallback(k, horizon, bounds),
            final_mse: f64::NAN,
            untrained: true,
        };
    }

    let n = rows.len();
    let layer_sizes = [2 * k, config.hidden[0], config.hidden[1], 2];
    let mut net = Network::random_init(&layer_sizes, rng).expect("valid eApp shape");
    let x = Array2::from_shape_fn((n, 2 * k), |(i, j)| rows[i][j]);
    let y = Array2::from_shape_fn((n, 2), |(i, j)| inputs[i][j]);

    let batch = config.batch_size.min(n).max(1);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch) {
            let xb = x.select(ndarray::Axis(0), chunk);
            let yb = y.select(ndarray::Axis(0), chunk);
            let grads = net.mse_gradients(xb.view(), yb.view());
            net.apply_gradients(&grads, config.learning_rate);
        }
    }
    let final_mse = net.mse_loss(x.view(), y.view());

    EappTrainResult {
        predictor: MobilityPredictor {
            kind: PredictorKind::Trained(net),
            history_window: k,
            horizon,
            bounds,
        },
        final_mse,
        untrained: config.epochs == 0,
    }
}

/// Predict a client's position `horizon` seconds after its freshest sample.
///
/// The trained network predicts at its training horizon; other horizons
/// scale the predicted displacement by `horizon / trained_horizon`. Output
/// is clamped to the arena bounds.
pub fn predict_position(
    predictor: &MobilityPredictor,
    recent: &[TimedPosition],
    horizon: f64,
) -> Point {
    assert!(!recent.is_empty(), "need at least one position");
    let last = recent[recent.len() - 1];
    let raw = match &predictor.kind {
        PredictorKind::Fallback => {
            if recent.len() >= 2 {
                let prev = recent[recent.len() - 2];
                let dt = last.t - prev.t;
                if dt > 0.0 {
                    let vx = (last.position.x - prev.position.x) / dt;
                    let vy = (last.position.y - prev.position.y) / dt;
                    Point::new(
                        last.position.x + vx * horizon,
                        last.position.y + vy * horizon,
                    )
                } else {
                    last.position
                }
            } else {
                last.position
            }
        }
        PredictorKind::Trained(net) => {
            let k = predictor.history_window;
            assert!(recent.len() >= k, "need {k} recent positions");
            let window = &recent[recent.len() - k..];
            let mut row = Vec::with_capacity(2 * k);
            for p in window {
                let (x, y) = norm(p.position, &predictor.bounds);
                row.push(x);
                row.push(y);
            }
            let x = Array2::from_shape_vec((1, 2 * k), row).unwrap();
            let out = net.forward_raw(x.view());
            let at_trained = denorm(out[(0, 0)], out[(0, 1)], &predictor.bounds);
            let scale = horizon / predictor.horizon;
            Point::new(
                last.position.x + (at_trained.x - last.position.x) * scale,
                last.position.y + (at_trained.y - last.position.y) * scale,
            )
        }
    };
    predictor.bounds.clamp(raw)
}
