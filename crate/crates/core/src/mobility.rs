//! Lévy-walk client motion inside a rectangular arena.
//!
//! Flight lengths are truncated-Pareto distributed; headings are uniform.
//! Clients reflect specularly at the arena bounds, which keeps the spatial
//! client density stable instead of piling clients up at the edges.

use crate::geom::{Point, Rect};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Lévy walk parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevyParams {
    /// Pareto tail exponent of the flight-length distribution.
    pub tail_exponent: f64,
    /// Shortest possible flight, metres.
    pub min_flight: f64,
    /// Truncation point of the flight-length distribution, metres.
    pub max_flight: f64,
    /// Constant movement speed, m/s.
    pub speed: f64,
}

impl Default for LevyParams {
    fn default() -> Self {
        LevyParams {
            tail_exponent: 1.5,
            min_flight: 1.0,
            max_flight: 100.0,
            speed: 1.5, // pedestrian
        }
    }
}

impl LevyParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.tail_exponent <= 0.0 {
            return Err("mobility.tail_exponent must be > 0".into());
        }
        if !(self.min_flight > 0.0 && self.min_flight <= self.max_flight) {
            return Err("mobility flight range must satisfy 0 < min <= max".into());
        }
        if self.speed < 0.0 {
            return Err("mobility.speed must be >= 0".into());
        }
        Ok(())
    }
}

/// Motion state of one client.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientMotion {
    pub position: Point,
    pub heading: f64,
    pub flight_remaining: f64,
}

impl ClientMotion {
    /// Start a walk at `position` with a freshly drawn heading and flight.
    pub fn spawn<R: Rng>(position: Point, params: &LevyParams, rng: &mut R) -> Self {
        ClientMotion {
            position,
            heading: rng.random::<f64>() * 2.0 * PI,
            flight_remaining: sample_flight_length(rng, params),
        }
    }
}

/// Inverse-CDF sample from a Pareto distribution with exponent
/// `tail_exponent` truncated to `[min_flight, max_flight]`.
pub fn sample_flight_length<R: Rng>(rng: &mut R, params: &LevyParams) -> f64 {
    let u: f64 = rng.random();
    truncated_pareto_icdf(u, params)
}

/// The inverse CDF itself, exposed for test oracles.
pub fn truncated_pareto_icdf(u: f64, params: &LevyParams) -> f64 {
    let a = params.tail_exponent;
    let m = params.min_flight;
    let tail_mass = 1.0 - (m / params.max_flight).powf(a);
    let x = m * (1.0 - u * tail_mass).powf(-1.0 / a);
    x.min(params.max_flight)
}

/// Advance `motion` by `dt` seconds, reflecting at `bounds` and chaining new
/// flights whenever the current one is exhausted.
pub fn step<R: Rng>(
    motion: &ClientMotion,
    dt: f64,
    bounds: &Rect,
    params: &LevyParams,
    rng: &mut R,
) -> ClientMotion {
    debug_assert!(dt >= 0.0);
    let mut m = *motion;
    let mut dist = params.speed * dt;
    if dist == 0.0 {
        return m;
    }
    while dist > 0.0 {
        let seg = dist.min(m.flight_remaining);
        advance_reflecting(&mut m, seg, bounds);
        m.flight_remaining -= seg;
        dist -= seg;
        if m.flight_remaining <= 0.0 {
            m.heading = rng.random::<f64>() * 2.0 * PI;
            m.flight_remaining = sample_flight_length(rng, params);
        }
    }
    m
}

/// Move `seg` metres along the current heading with specular reflection.
///
/// Axis-aligned reflections act independently per coordinate, so each
/// coordinate is folded into its interval by a triangular wave; odd fold
/// parity flips the matching heading component.
fn advance_reflecting(m: &mut ClientMotion, seg: f64, bounds: &Rect) {
    let (sin_h, cos_h) = m.heading.sin_cos();
    let (x, flip_x) = fold(m.position.x + seg * cos_h, bounds.min_x, bounds.max_x);
    let (y, flip_y) = fold(m.position.y + seg * sin_h, bounds.min_y, bounds.max_y);
    m.position = Point::new(x, y);
    if flip_x || flip_y {
        let cx = if flip_x { -cos_h } else { cos_h };
        let sy = if flip_y { -sin_h } else { sin_h };
        m.heading = sy.atan2(cx);
    }
}

fn fold(u: f64, lo: f64, hi: f64) -> (f64, bool) {
    let len = hi - lo;
    if len <= 0.0 {
        return (lo, false);
    }
    let t = u - lo;
    let k = t.div_euclid(len);
    let frac = t - k * len;
    if (k as i64) & 1 == 0 {
        (lo + frac, false)
    } else {
        (hi - frac, true)
    }
}
