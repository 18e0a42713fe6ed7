//! Radio deployment geometry and the distance-driven channel model.
//!
//! The channel is log-distance path loss with a reference SNR, so the
//! achievable rate of a link is `log2(1 + snr) * bandwidth`. Rate being
//! exactly linear in allocated bandwidth is what lets the controller split a
//! radio unit's spectrum among slices in closed form.

use crate::geom::Point;
use serde::{Deserialize, Serialize};

/// Identifier of a radio unit site.
pub type OruId = usize;

/// One radio unit of the deployment.
#[derive(Debug, Clone, PartialEq)]
pub struct OruSite {
    pub id: OruId,
    pub position: Point,
    /// Uplink bandwidth this site can allocate, Hz.
    pub total_bandwidth: f64,
}

/// Parameters of the log-distance channel model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioParams {
    /// Reference distance d0, metres. Gain is clamped to 1 at or inside d0.
    pub reference_distance: f64,
    /// Path-loss exponent; >= 2.
    pub path_loss_exponent: f64,
    /// Linear SNR experienced at the reference distance.
    pub reference_snr: f64,
    /// Spectral-efficiency margin a candidate site must exceed the serving
    /// site by before a handover is worthwhile, bit/s/Hz.
    pub hysteresis_margin: f64,
    /// Log-normal shadowing standard deviation, dB (0 disables shadowing).
    /// Shadowing is normalized to unit mean linear gain.
    pub shadowing_sigma_db: f64,
    /// Shadowing decorrelation distance, metres.
    pub shadowing_corr_m: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams {
            reference_distance: 1.0,
            path_loss_exponent: 3.0,
            reference_snr: 1e6, // 60 dB at d0
            hysteresis_margin: 0.1,
            shadowing_sigma_db: 0.0,
            shadowing_corr_m: 25.0,
        }
    }
}

/// Channel gain and spectral efficiency of one client-to-site link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkQuality {
    pub channel_gain: f64,
    pub spectral_efficiency: f64,
}

/// Lay out `1 + 3*n_rings*(n_rings+1)` sites on a hexagonal grid centred on
/// the origin, every neighbour pair separated by exactly `inter_site_distance`.
pub fn build_hex_grid(n_rings: u32, inter_site_distance: f64, bandwidth: f64) -> Vec<OruSite> {
    assert!(inter_site_distance > 0.0, "inter-site distance must be > 0");
    assert!(bandwidth > 0.0, "bandwidth must be > 0");

    // Axial hex coordinates -> cartesian; unit step equals the site spacing.
    let to_point = |q: i64, r: i64| {
        Point::new(
            inter_site_distance * (q as f64 + r as f64 / 2.0),
            inter_site_distance * (3.0f64.sqrt() / 2.0) * r as f64,
        )
    };

    let mut sites = vec![OruSite {
        id: 0,
        position: Point::ORIGIN,
        total_bandwidth: bandwidth,
    }];

    // Walk each ring: start at (ring, -ring) and take `ring` steps along each
    // of the six edge directions.
    const DIRS: [(i64, i64); 6] = [(0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1), (1, 0)];
    for ring in 1..=n_rings as i64 {
        let (mut q, mut r) = (ring, -ring);
        for (dq, dr) in DIRS {
            for _ in 0..ring {
                sites.push(OruSite {
                    id: sites.len(),
                    position: to_point(q, r),
                    total_bandwidth: bandwidth,
                });
                q += dq;
                r += dr;
            }
        }
    }
    sites
}

/// Log-distance channel gain, clamped to 1 at or inside the reference distance.
pub fn channel_gain(distance: f64, params: &RadioParams) -> f64 {
    debug_assert!(distance >= 0.0);
    let d = distance.max(params.reference_distance);
    (params.reference_distance / d).powf(params.path_loss_exponent)
}

/// Shannon spectral efficiency at the given gain, bit/s/Hz.
pub fn spectral_efficiency(gain: f64, params: &RadioParams) -> f64 {
    debug_assert!((0.0..=1.0).contains(&gain));
    (1.0 + params.reference_snr * gain).log2()
}

/// Deliverable rate over a link of efficiency `se` granted `bandwidth` Hz.
pub fn data_rate(se: f64, bandwidth: f64) -> f64 {
    se * bandwidth
}

/// Convenience: link quality between a client position and a site.
pub fn link_quality(client: &Point, site: &OruSite, params: &RadioParams) -> LinkQuality {
    let gain = channel_gain(client.distance(&site.position), params);
    LinkQuality {
        channel_gain: gain,
        spectral_efficiency: spectral_efficiency(gain, params),
    }
}

/// Spatially-correlated log-normal shadowing of one client's links: one
/// AR(1) state per site with Gudmundson-style correlation
/// `rho = exp(-moved / corr_m)`. States live in the natural-log domain with
/// mean `-v/2`, so the multiplicative linear factor has unit mean and the
/// long-run link budget matches the unshadowed model.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowField {
    states: Vec<f64>,
    mean: f64,
    std: f64,
    corr_m: f64,
}

impl ShadowField {
    pub fn new<R: rand::Rng>(n_sites: usize, params: &RadioParams, rng: &mut R) -> ShadowField {
        let std = params.shadowing_sigma_db * std::f64::consts::LN_10 / 10.0;
        let mean = -std * std / 2.0;
        let mut field = ShadowField {
            states: vec![mean; n_sites],
            mean,
            std,
            corr_m: params.shadowing_corr_m.max(1e-6),
        };
        if std > 0.0 {
            let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
            for s in field.states.iter_mut() {
                *s = mean + std * rand_distr::Distribution::sample(&normal, rng);
            }
        }
        field
    }

    pub fn enabled(&self) -> bool {
        self.std > 0.0
    }

    /// Advance every link by `moved` metres of client displacement.
    pub fn advance<R: rand::Rng>(&mut self, moved: f64, rng: &mut R) {
        if self.std == 0.0 || moved <= 0.0 {
            return;
        }
        let rho = (-moved / self.corr_m).exp();
        let innovation = self.std * (1.0 - rho * rho).sqrt();
        let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
        for s in self.states.iter_mut() {
            *s = self.mean
                + rho * (*s - self.mean)
                + innovation * rand_distr::Distribution::sample(&normal, rng);
        }
    }

    /// Multiplicative linear gain factor toward `site`.
    pub fn factor(&self, site: usize) -> f64 {
        if self.std == 0.0 {
            1.0
        } else {
            self.states[site].exp()
        }
    }
}
