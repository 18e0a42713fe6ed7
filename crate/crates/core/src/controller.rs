//! Near-real-time control: predicted state, client-to-site assignment with
//! handover hysteresis, per-site load estimation, and the weighted-latency
//! bandwidth split among service slices.
//!
//! The split minimizes `sum_s a_s * K_s / f_s` over fractions on the simplex
//! with a per-slice floor. Under equal intra-slice sharing the total upload
//! latency of service `s` at one site is `K_s / f_s` with
//! `K_s = (n_s / B) * sum_c L_c / se_c`, so the interior optimum has the
//! closed form `f_s ∝ sqrt(a_s K_s)`; floor violations are pinned and the
//! remainder re-solved (at most one pass per service).

use crate::descriptor::{ClientId, Registry, ServiceId};
use crate::eapp::{predict_position, MobilityPredictor};
use crate::geom::Point;
use crate::radio::{channel_gain, spectral_efficiency, OruId, OruSite, RadioParams};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("slice floor infeasible: {active} active slices with f_min {f_min}")]
    InfeasibleFloor { active: usize, f_min: f64 },
}

/// Positions and link qualities the controller plans against.
#[derive(Debug, Clone)]
pub struct PredictedState {
    /// Estimated position of each client at the window start.
    pub now: Vec<Point>,
    /// Estimated position at the planning horizon.
    pub at_horizon: Vec<Point>,
    /// Spectral efficiency (bit/s/Hz) of each client-site pair at the
    /// horizon positions; `se[client][site]`.
    pub se: Vec<Vec<f64>>,
}

/// One handover decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Handover {
    pub client: ClientId,
    pub from: OruId,
    pub to: OruId,
}

/// Client-to-site assignment for one control window.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentPlan {
    /// Serving site per client id.
    pub oru_of: Vec<OruId>,
    /// Handovers relative to the previous window.
    pub handovers: Vec<Handover>,
}

/// Per-(site, service) bandwidth split.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceAllocation {
    /// `fractions[site][service]`, each row summing to at most 1.
    pub fractions: Vec<Vec<f64>>,
    /// `fractions` scaled by each site's total bandwidth, Hz.
    pub bandwidth_hz: Vec<Vec<f64>>,
}

impl SliceAllocation {
    pub fn zeros(n_sites: usize, n_services: usize) -> Self {
        SliceAllocation {
            fractions: vec![vec![0.0; n_services]; n_sites],
            bandwidth_hz: vec![vec![0.0; n_services]; n_sites],
        }
    }
}

/// Slice-creation request handed to the slicing subsystem; a reformatted
/// view of one service's row of the allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceRequest {
    pub service_id: ServiceId,
    /// Requested bandwidth per site, Hz, indexed by site id.
    pub per_oru_bandwidth_hz: Vec<f64>,
    pub deadline: f64,
    pub weight: f64,
}

/// A client with outstanding upload work, as seen by the load model.
#[derive(Debug, Clone, Copy)]
pub struct ActiveUpload {
    pub client: ClientId,
    /// Service index (dense, not the service id).
    pub service_idx: usize,
    pub remaining_bits: f64,
}

/// Estimate every client's position now and at `horizon`, and the
/// client-site spectral-efficiency matrix at the horizon positions.
///
/// Clients without any recorded history fall back to their true current
/// position; with `use_true_positions` the prediction path is bypassed
/// entirely (debug aid for isolating prediction error).
#[allow(clippy::too_many_arguments)]
pub fn predict_state(
    predictor: &MobilityPredictor,
    registry: &Registry,
    true_positions: &[Point],
    sites: &[OruSite],
    radio: &RadioParams,
    now: f64,
    horizon: f64,
    use_true_positions: bool,
) -> PredictedState {
    let n = true_positions.len();
    let mut now_pos = Vec::with_capacity(n);
    let mut horizon_pos = Vec::with_capacity(n);
    for client in 0..n {
        let history = registry
            .client(client)
            .map(|c| c.position_history.as_slice())
            .unwrap_or(&[]);
        if use_true_positions || history.is_empty() {
            now_pos.push(true_positions[client]);
            horizon_pos.push(true_positions[client]);
            continue;
        }
        let needed = match predictor.kind {
            crate::eapp::PredictorKind::Trained(_) => predictor.history_window,
            crate::eapp::PredictorKind::Fallback => 2.min(history.len()),
        };
        if history.len() < needed {
            let fallback = MobilityPredictor::fallback(2, predictor.horizon, predictor.bounds);
            let t_last = history.last().unwrap().t;
            now_pos.push(predict_position(&fallback, history, now - t_last));
            horizon_pos.push(predict_position(&fallback, history, now - t_last + horizon));
            continue;
        }
        let t_last = history.last().unwrap().t;
        now_pos.push(predict_position(predictor, history, now - t_last));
        horizon_pos.push(predict_position(predictor, history, now - t_last + horizon));
    }

    let se = horizon_pos
        .iter()
        .map(|p| {
            sites
                .iter()
                .map(|s| spectral_efficiency(channel_gain(p.distance(&s.position), radio), radio))
                .collect()
        })
        .collect();

    PredictedState {
        now: now_pos,
        at_horizon: horizon_pos,
        se,
    }
}

/// Keep each client on its previous site unless some site's predicted
/// efficiency beats it by more than `hysteresis_margin`; unassigned clients
/// take the argmax. Ties break toward the lowest site id.
pub fn assign_clients(
    se: &[Vec<f64>],
    previous: Option<&[OruId]>,
    hysteresis_margin: f64,
) -> AssignmentPlan {
    let n = se.len();
    let mut oru_of = Vec::with_capacity(n);
    let mut handovers = Vec::new();
    for client in 0..n {
        let row = &se[client];
        let mut best = 0usize;
        for (o, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = o;
            }
        }
        match previous.and_then(|p| p.get(client)).copied() {
            Some(current) => {
                if best != current && row[best] > row[current] + hysteresis_margin {
                    handovers.push(Handover {
                        client,
                        from: current,
                        to: best,
                    });
                    oru_of.push(best);
                } else {
                    oru_of.push(current);
                }
            }
            None => oru_of.push(best),
        }
    }
    AssignmentPlan { oru_of, handovers }
}

/// Load constants `K[site][service]` such that a slice's modelled total
/// upload latency is `K / fraction` under equal intra-slice sharing.
///
/// `K = (n / B) * sum_c remaining_bits_c / se_c`; zero when the slice has no
/// client with pending upload work. Links below `se_floor` contribute at the
/// floor so `K` stays finite.
pub fn compute_load(
    plan: &AssignmentPlan,
    n_services: usize,
    actives: &[ActiveUpload],
    se: &[Vec<f64>],
    sites: &[OruSite],
    se_floor: f64,
) -> Vec<Vec<f64>> {
    compute_load_with(plan, n_services, actives, se, sites, se_floor, false)
}

/// Like [`compute_load`], with an optional worst-client variant: slice
/// latency `max_c` instead of `sum_c`, which factors exactly the same way
/// (`(n / B) * max_c remaining / se_c / f`), so the split below applies to
/// both objectives unchanged.
pub fn compute_load_with(
    plan: &AssignmentPlan,
    n_services: usize,
    actives: &[ActiveUpload],
    se: &[Vec<f64>],
    sites: &[OruSite],
    se_floor: f64,
    worst_client: bool,
) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0f64; n_services]; sites.len()];
    let mut counts = vec![vec![0usize; n_services]; sites.len()];
    for a in actives {
        let o = plan.oru_of[a.client];
        let cost = a.remaining_bits / se[a.client][o].max(se_floor);
        if worst_client {
            sums[o][a.service_idx] = sums[o][a.service_idx].max(cost);
        } else {
            sums[o][a.service_idx] += cost;
        }
        counts[o][a.service_idx] += 1;
    }
    for (o, site) in sites.iter().enumerate() {
        for s in 0..n_services {
            sums[o][s] *= counts[o][s] as f64 / site.total_bandwidth;
        }
    }
    sums
}

/// Minimize `sum_s weights[s] * loads[s] / f_s` subject to `sum f_s = 1`,
/// `f_s >= f_min` for loaded slices, `f_s = 0` for unloaded ones.
pub fn slice_split(weights: &[f64], loads: &[f64], f_min: f64) -> Result<Vec<f64>, SplitError> {
    assert_eq!(weights.len(), loads.len());
    debug_assert!(weights.iter().all(|&w| w > 0.0));
    debug_assert!((0.0..=1.0).contains(&f_min));
    let n = weights.len();
    let mut fractions = vec![0.0; n];
    let active: Vec<usize> = (0..n).filter(|&s| loads[s] > 0.0).collect();
    if active.is_empty() {
        return Ok(fractions);
    }
    if f_min * active.len() as f64 > 1.0 + 1e-12 {
        return Err(SplitError::InfeasibleFloor {
            active: active.len(),
            f_min,
        });
    }

    let w: Vec<f64> = (0..n).map(|s| (weights[s] * loads[s]).sqrt()).collect();
    let mut pinned = vec![false; n];
    loop {
        let free: Vec<usize> = active.iter().copied().filter(|&s| !pinned[s]).collect();
        let n_pinned = active.len() - free.len();
        let budget = 1.0 - f_min * n_pinned as f64;
        let total: f64 = free.iter().map(|&s| w[s]).sum();
        for &s in &active {
            fractions[s] = if pinned[s] {
                f_min
            } else {
                budget * w[s] / total
            };
        }
        let mut any_violation = false;
        for &s in &free {
            if fractions[s] < f_min - 1e-15 {
                pinned[s] = true;
                any_violation = true;
            }
        }
        if !any_violation {
            break;
        }
    }
    Ok(fractions)
}

/// Objective value of a split (used by tests and the oracle comparison).
pub fn slice_objective(weights: &[f64], loads: &[f64], fractions: &[f64]) -> f64 {
    weights
        .iter()
        .zip(loads)
        .zip(fractions)
        .filter(|((_, &k), _)| k > 0.0)
        .map(|((&a, &k), &f)| a * k / f)
        .sum()
}

/// Split every site's bandwidth according to its load row.
pub fn allocate_slices(
    weights: &[f64],
    loads: &[Vec<f64>],
    sites: &[OruSite],
    f_min: f64,
) -> Result<SliceAllocation, SplitError> {
    let n_services = weights.len();
    let mut alloc = SliceAllocation::zeros(sites.len(), n_services);
    for (o, site) in sites.iter().enumerate() {
        let f = slice_split(weights, &loads[o], f_min)?;
        for s in 0..n_services {
            alloc.bandwidth_hz[o][s] = f[s] * site.total_bandwidth;
        }
        alloc.fractions[o] = f;
    }
    Ok(alloc)
}

/// Reformat an allocation as one slice request per service.
pub fn make_slice_requests(
    allocation: &SliceAllocation,
    services: &[(ServiceId, f64, f64)], // (id, deadline, weight) per service index
) -> Vec<SliceRequest> {
    services
        .iter()
        .enumerate()
        .map(|(idx, &(service_id, deadline, weight))| SliceRequest {
            service_id,
            per_oru_bandwidth_hz: allocation
                .bandwidth_hz
                .iter()
                .map(|row| row[idx])
                .collect(),
            deadline,
            weight,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::{ClientDescriptor, TimedPosition};
    use crate::eapp::{train_eapp, EappConfig};
    use crate::geom::Rect;
    use crate::radio::build_hex_grid;
    use crate::rng::{stream, StreamId};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn bounds() -> Rect {
        Rect::new(-500.0, -433.0, 500.0, 433.0)
    }

    fn registry_with_histories(positions: &[Point], n_samples: usize) -> Registry {
        let mut reg = Registry::new();
        for (i, &p) in positions.iter().enumerate() {
            reg.register_client(ClientDescriptor {
                client_id: i,
                dataset_type: "synth".into(),
                dataset_size: 1,
                compute_time_per_iteration: 0.1,
                position_history: (1..=n_samples)
                    .map(|k| TimedPosition {
                        t: k as f64 * 10.0,
                        position: p,
                    })
                    .collect(),
                current_oru: None,
            })
            .unwrap();
        }
        reg
    }

    #[test]
    fn stationary_predictions_match_truth() {
        let sites = build_hex_grid(1, 500.0, 1.5e6);
        let radio = RadioParams::default();
        // Mid-cell positions (Voronoi-vertex neighbourhood of the grid).
        let positions = vec![
            Point::new(250.0, 144.0),
            Point::new(-250.0, 144.0),
            Point::new(250.0, -144.0),
            Point::new(-250.0, -144.0),
            Point::new(0.0, 289.0),
            Point::new(0.0, -289.0),
        ];
        let reg = registry_with_histories(&positions, 6);
        let hists: Vec<Vec<TimedPosition>> = (0..positions.len())
            .map(|i| reg.client(i).unwrap().position_history.clone())
            .collect();
        let refs: Vec<&[TimedPosition]> = hists.iter().map(|h| h.as_slice()).collect();
        let mut rng = stream(0, StreamId::EappTrain);
        // Needs a well-converged fit: a couple of metres of positional error.
        let cfg = EappConfig {
            epochs: 4000,
            learning_rate: 0.03,
            ..EappConfig::default()
        };
        let trained = train_eapp(&refs, 10.0, bounds(), &cfg, &mut rng);
        assert!(!trained.untrained);

        // A real controller instant: histories end at t = 60, window at 63.
        let state = predict_state(
            &trained.predictor,
            &reg,
            &positions,
            &sites,
            &radio,
            63.0,
            3.0,
            false,
        );
        for (c, p) in positions.iter().enumerate() {
            for (o, site) in sites.iter().enumerate() {
                let truth =
                    spectral_efficiency(channel_gain(p.distance(&site.position), &radio), &radio);
                let pred = state.se[c][o];
                // within 1%: relative for meaningful links, absolute
                // (0.01 bit/s/Hz) for near-zero cell-edge entries.
                let tol = (0.01 * truth).max(0.01);
                assert!(
                    (pred - truth).abs() <= tol,
                    "client {c} site {o}: predicted {pred}, true {truth}"
                );
            }
        }
    }

    #[test]
    fn fallback_state_is_total() {
        let sites = build_hex_grid(1, 500.0, 1.5e6);
        let radio = RadioParams::default();
        let positions = vec![Point::new(10.0, 10.0), Point::new(-200.0, 100.0)];
        // Fresh run: registry has no history at all.
        let mut reg = Registry::new();
        for (i, _) in positions.iter().enumerate() {
            reg.register_client(ClientDescriptor {
                client_id: i,
                dataset_type: "synth".into(),
                dataset_size: 1,
                compute_time_per_iteration: 0.1,
                position_history: Vec::new(),
                current_oru: None,
            })
            .unwrap();
        }
        let fallback = MobilityPredictor::fallback(3, 10.0, bounds());
        let state = predict_state(&fallback, &reg, &positions, &sites, &radio, 0.0, 3.0, false);
        assert_eq!(state.se.len(), positions.len());
        for row in &state.se {
            assert_eq!(row.len(), sites.len());
            assert!(row.iter().all(|v| v.is_finite() && *v > 0.0));
        }
    }

    #[test]
    fn client_at_site_position_maximizes_that_column() {
        let sites = build_hex_grid(1, 500.0, 1.5e6);
        let radio = RadioParams::default();
        let p = sites[3].position;
        let row: Vec<f64> = sites
            .iter()
            .map(|s| spectral_efficiency(channel_gain(p.distance(&s.position), &radio), &radio))
            .collect();
        let best = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(best, 3);
    }

    #[test]
    fn single_site_assignment_has_no_handover() {
        let se = vec![vec![1.0], vec![0.2]];
        let plan = assign_clients(&se, None, 0.1);
        assert_eq!(plan.oru_of, vec![0, 0]);
        assert!(plan.handovers.is_empty());
        let again = assign_clients(&se, Some(&plan.oru_of), 0.1);
        assert!(again.handovers.is_empty());
    }

    #[test]
    fn hysteresis_margin_blocks_small_gains() {
        // current se 2.0, best alternative 2.05, margin 0.1 -> stay
        let se = vec![vec![2.0, 2.05]];
        let plan = assign_clients(&se, Some(&[0]), 0.1);
        assert_eq!(plan.oru_of, vec![0]);
        assert!(plan.handovers.is_empty());
        // alternative 2.5 clears the margin -> handover recorded
        let se = vec![vec![2.0, 2.5]];
        let plan = assign_clients(&se, Some(&[0]), 0.1);
        assert_eq!(plan.oru_of, vec![1]);
        assert_eq!(
            plan.handovers,
            vec![Handover {
                client: 0,
                from: 0,
                to: 1
            }]
        );
    }

    #[test]
    fn zero_margin_assigns_argmax() {
        let mut rng = stream(5, StreamId::EappTrain);
        for _ in 0..50 {
            let se: Vec<Vec<f64>> = (0..8)
                .map(|_| (0..5).map(|_| rng.random::<f64>() * 3.0).collect())
                .collect();
            let prev: Vec<OruId> = (0..8).map(|_| rng.random_range(0..5)).collect();
            let plan = assign_clients(&se, Some(&prev), 0.0);
            for (c, row) in se.iter().enumerate() {
                let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert_relative_eq!(se[c][plan.oru_of[c]], best);
            }
        }
    }

    #[test]
    fn load_formula_reference_value() {
        let sites = build_hex_grid(0, 500.0, 1.5e6);
        let plan = AssignmentPlan {
            oru_of: vec![0],
            handovers: vec![],
        };
        let actives = [ActiveUpload {
            client: 0,
            service_idx: 0,
            remaining_bits: 1e6,
        }];
        let se = vec![vec![2.0]];
        let k = compute_load(&plan, 1, &actives, &se, &sites, 1e-3);
        assert_relative_eq!(k[0][0], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn load_is_zero_without_clients_and_linear_in_bits() {
        let sites = build_hex_grid(1, 500.0, 1.5e6);
        let plan = AssignmentPlan {
            oru_of: vec![2, 2, 5],
            handovers: vec![],
        };
        let se = vec![vec![1.0; 7], vec![0.5; 7], vec![2.0; 7]];
        let empty = compute_load(&plan, 2, &[], &se, &sites, 1e-3);
        assert!(empty.iter().flatten().all(|&v| v == 0.0));

        let actives: Vec<ActiveUpload> = vec![
            ActiveUpload { client: 0, service_idx: 0, remaining_bits: 4e5 },
            ActiveUpload { client: 1, service_idx: 0, remaining_bits: 2e5 },
            ActiveUpload { client: 2, service_idx: 1, remaining_bits: 1e5 },
        ];
        let k1 = compute_load(&plan, 2, &actives, &se, &sites, 1e-3);
        let doubled: Vec<ActiveUpload> = actives
            .iter()
            .map(|a| ActiveUpload {
                remaining_bits: 2.0 * a.remaining_bits,
                ..*a
            })
            .collect();
        let k2 = compute_load(&plan, 2, &doubled, &se, &sites, 1e-3);
        for (r1, r2) in k1.iter().zip(&k2) {
            for (a, b) in r1.iter().zip(r2) {
                assert_relative_eq!(2.0 * a, *b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn se_floor_keeps_load_finite() {
        let sites = build_hex_grid(0, 500.0, 1.5e6);
        let plan = AssignmentPlan { oru_of: vec![0], handovers: vec![] };
        let actives = [ActiveUpload { client: 0, service_idx: 0, remaining_bits: 1e6 }];
        let se = vec![vec![0.0]];
        let k = compute_load(&plan, 1, &actives, &se, &sites, 1e-3);
        assert!(k[0][0].is_finite());
        assert_relative_eq!(k[0][0], (1.0 / 1.5e6) * (1e6 / 1e-3), epsilon = 1e-6);
    }

    #[test]
    fn split_reference_cases() {
        // sole claimant
        let f = slice_split(&[30.0, 100.0], &[0.7, 0.0], 0.05).unwrap();
        assert_eq!(f, vec![1.0, 0.0]);
        // symmetric products
        let f = slice_split(&[2.0, 8.0], &[4.0, 1.0], 0.0).unwrap();
        assert_relative_eq!(f[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(f[1], 0.5, epsilon = 1e-12);
        // a*K = (9, 1): closed form gives (0.75, 0.25)
        let f = slice_split(&[9.0, 1.0], &[1.0, 1.0], 0.0).unwrap();
        assert_relative_eq!(f[0], 0.75, epsilon = 1e-12);
        assert_relative_eq!(f[1], 0.25, epsilon = 1e-12);
        // floor pins the starved slice
        let f = slice_split(&[1.0, 1e6], &[1.0, 1.0], 0.05).unwrap();
        assert_relative_eq!(f[0], 0.05, epsilon = 1e-12);
        assert_relative_eq!(f[1], 0.95, epsilon = 1e-12);
    }

    #[test]
    fn split_floor_infeasible() {
        let err = slice_split(&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0], 0.4).unwrap_err();
        assert_eq!(
            err,
            SplitError::InfeasibleFloor {
                active: 3,
                f_min: 0.4
            }
        );
    }

    #[test]
    fn requests_reformat_allocation() {
        let sites = build_hex_grid(1, 500.0, 1.5e6);
        let loads = vec![vec![0.5, 0.2]; sites.len()];
        let alloc = allocate_slices(&[30.0, 100.0], &loads, &sites, 0.05).unwrap();
        let requests = make_slice_requests(&alloc, &[(1, 30.0, 30.0), (2, 20.0, 100.0)]);
        assert_eq!(requests.len(), 2);
        for r in &requests {
            assert_eq!(r.per_oru_bandwidth_hz.len(), 7);
        }
        // per-site totals bounded by the site bandwidth
        for o in 0..sites.len() {
            let total: f64 = requests.iter().map(|r| r.per_oru_bandwidth_hz[o]).sum();
            assert!(total <= sites[o].total_bandwidth + 1e-6);
        }
        assert!(make_slice_requests(&SliceAllocation::zeros(0, 0), &[]).is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        /// Closed-form/active-set optimality against a coarse grid (the fine
        /// 1e-3 grid runs in the acceptance suite).
        #[test]
        fn split_beats_coarse_grid(
            seed in 0u64..10_000,
            n in 2usize..5,
            pin_floor in proptest::bool::ANY,
        ) {
            let mut rng = stream(seed, StreamId::EappTrain);
            let products: Vec<f64> = (0..n)
                .map(|_| 10f64.powf(rng.random::<f64>() * 4.0 - 2.0))
                .collect();
            let weights = vec![1.0; n];
            let f_min = if pin_floor { 0.05 } else { 0.0 };
            let f = slice_split(&weights, &products, f_min).unwrap();
            prop_assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(f.iter().all(|&v| v >= f_min - 1e-12));
            let ours = slice_objective(&weights, &products, &f);

            // 1e-2 grid via recursive composition
            let steps = 100usize;
            let lo = (f_min * steps as f64).ceil() as usize;
            let mut best = f64::INFINITY;
            let mut idx = vec![lo; n];
            fn rec(idx: &mut Vec<usize>, pos: usize, left: usize, lo: usize, steps: usize,
                   products: &[f64], best: &mut f64) {
                if pos == idx.len() - 1 {
                    if left < lo { return; }
                    idx[pos] = left;
                    let obj: f64 = idx.iter().zip(products)
                        .map(|(&i, &p)| p / (i as f64 / steps as f64))
                        .sum();
                    if obj < *best { *best = obj; }
                    return;
                }
                let reserve = lo * (idx.len() - pos - 1);
                for i in lo..=left.saturating_sub(reserve) {
                    idx[pos] = i;
                    rec(idx, pos + 1, left - i, lo, steps, products, best);
                }
            }
            rec(&mut idx, 0, steps, lo, steps, &products, &mut best);
            prop_assert!(ours <= best + 1e-9, "closed form {ours} vs grid {best}");
        }

        /// Scaling every weight leaves the argmin unchanged.
        #[test]
        fn split_scale_invariance(seed in 0u64..10_000, scale in 0.01f64..100.0) {
            let mut rng = stream(seed, StreamId::EappTrain);
            let n = 2 + (seed % 3) as usize;
            let weights: Vec<f64> = (0..n).map(|_| 0.1 + rng.random::<f64>() * 100.0).collect();
            let loads: Vec<f64> = (0..n).map(|_| 0.01 + rng.random::<f64>()).collect();
            let f1 = slice_split(&weights, &loads, 0.05).unwrap();
            let scaled: Vec<f64> = weights.iter().map(|w| w * scale).collect();
            let f2 = slice_split(&scaled, &loads, 0.05).unwrap();
            for (a, b) in f1.iter().zip(&f2) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        /// Raising one service's weight never lowers its fraction.
        #[test]
        fn split_monotone_in_weight(seed in 0u64..10_000, bump in 1.01f64..50.0) {
            let mut rng = stream(seed, StreamId::EappTrain);
            let n = 2 + (seed % 3) as usize;
            let weights: Vec<f64> = (0..n).map(|_| 0.1 + rng.random::<f64>() * 10.0).collect();
            let loads: Vec<f64> = (0..n).map(|_| 0.01 + rng.random::<f64>()).collect();
            let s = (seed % n as u64) as usize;
            let f1 = slice_split(&weights, &loads, 0.05).unwrap();
            let mut bumped = weights.clone();
            bumped[s] *= bump;
            let f2 = slice_split(&bumped, &loads, 0.05).unwrap();
            prop_assert!(f2[s] >= f1[s] - 1e-12);
        }
    }
}
