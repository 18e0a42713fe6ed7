//! The multi-rate simulation loop: 10 ms MAC ticks, a 3 s control window,
//! 10 s descriptor sampling, and per-service asynchronous FL rounds, plus the
//! two baseline allocation policies used for comparison.
//!
//! Within one tick the order is: round transitions, descriptor sampling,
//! upload phase changes, control decisions, MAC grants, transmission at true
//! link quality, then mobility. Decisions see the state at the tick start;
//! physics always uses true positions.

use crate::config::{ticks_of, ConfigError, DatasetConfig, LatencyModel, MacOrder, SimConfig};
use crate::controller::{
    allocate_slices, assign_clients, compute_load_with, ActiveUpload, SliceAllocation,
};
use crate::descriptor::{ClientDescriptor, ClientId, Registry, ServiceDescriptor, TimedPosition};
use crate::eapp::{predict_position, train_eapp, EappConfig, MobilityPredictor};
use crate::fl::data::{synth_dataset, DataError, Dataset};
use crate::fl::model::{ModelError, Network};
use crate::fl::partition::{dirichlet_partition, PartitionSpec};
use crate::fl::train::{evaluate, fedavg, local_train, TrainConfig};
use crate::geom::{Point, Rect};
use crate::mac::{
    apply_allocation, schedule, schedule_cheapest_first, MacAllocation, SliceClient, UploadState,
    UploadStatus,
};
use crate::metrics::{AllocRecord, MacRecord, MetricsLog, Policy, RoundRecord};
use crate::mobility::{step, ClientMotion};
use crate::radio::{channel_gain, spectral_efficiency, OruId, OruSite, ShadowField};
use crate::rng::{stream, StreamId};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

struct ClientRuntime {
    id: ClientId,
    service_idx: usize,
    motion: ClientMotion,
    rng: ChaCha8Rng,
    /// Total local compute per round, seconds.
    compute_time: f64,
    shadow: ShadowField,
    shadow_rng: ChaCha8Rng,
}

struct ServiceRuntime {
    idx: usize,
    id: usize,
    deadline_ticks: u64,
    weight: f64,
    rounds_total: usize,
    clients: Vec<ClientId>,
    shards: Vec<Dataset>,
    shard_sizes: Vec<usize>,
    test: Dataset,
    global: Network,
    locals: Vec<Network>,
    payload_bits: f64,
    uploads: Vec<UploadState>,
    upload_start_ticks: Vec<u64>,
    round: usize,
    round_start_tick: u64,
    round_end_tick: u64,
    done: bool,
    // per-round metric accumulators
    alloc_acc: f64,
    handover_acc: usize,
}

/// One prediction window shared by the MAC ticks inside it.
struct WindowPrediction {
    start_t: f64,
    now_pos: Vec<Point>,
    horizon_pos: Vec<Point>,
}

pub struct Engine {
    cfg: SimConfig,
    policy: Policy,
    seed: u64,
    sites: Vec<OruSite>,
    bounds: Rect,
    registry: Registry,
    clients: Vec<ClientRuntime>,
    services: Vec<ServiceRuntime>,
    predictor: MobilityPredictor,
    per_client_predictors: Option<Vec<MobilityPredictor>>,
    /// Serving site per client under EFL (and the snapshot policy).
    plan: Option<Vec<OruId>>,
    slice_alloc: SliceAllocation,
    window: Option<WindowPrediction>,
    /// Frozen per-client grants per service (snapshot policy).
    b1_frozen: Vec<BTreeMap<ClientId, f64>>,
    /// Per-tick attachment under the rate-greedy policy.
    b2_attach: Option<Vec<OruId>>,
    tick: u64,
    mac_dt: f64,
    nearrt_ticks: u64,
    nonrt_ticks: u64,
    warmup_ticks: u64,
    refresh_ticks: u64,
    metrics: MetricsLog,
    pub controller_invocations: u64,
    /// Largest observed per-site grant total relative to the site bandwidth.
    pub max_alloc_ratio: f64,
}

impl Engine {
    pub fn new(cfg: &SimConfig, policy: Policy, seed: u64) -> Result<Engine, EngineError> {
        cfg.validate()?;
        let cfg = cfg.clone();
        let dt = cfg.controller.mac_dt_s;
        let sites = crate::radio::build_hex_grid(
            cfg.topology.rings,
            cfg.topology.inter_site_m,
            cfg.topology.bandwidth_hz,
        );
        let bounds = Rect::bounding(
            sites.iter().map(|s| s.position),
            cfg.topology.bounds_margin_m.max(if cfg.topology.rings == 0 { 1.0 } else { 0.0 }),
        );

        // Datasets, shards, and FL state per service.
        let mut registry = Registry::new();
        let mut services = Vec::new();
        let mut clients = Vec::new();
        let mut next_client: ClientId = 0;
        for (idx, svc) in cfg.services.iter().enumerate() {
            let (train, test) = build_datasets(&cfg, svc.client_count, &cfg.datasets[&svc.dataset], idx)?;
            let layer_sizes: Vec<usize> = std::iter::once(train.features.ncols())
                .chain(cfg.fl.hidden_layers.iter().copied())
                .chain(std::iter::once(train.n_classes))
                .collect();
            let mut init_rng = stream(seed, StreamId::ModelInit { service: idx as u64 });
            let global = Network::random_init(&layer_sizes, &mut init_rng)?;
            let payload_bits = if cfg.fl.payload_bits_override > 0.0 {
                cfg.fl.payload_bits_override
            } else {
                32.0 * global.n_params() as f64
            };

            let mut part_rng = stream(seed, StreamId::Partition { service: idx as u64 });
            let shards_idx = dirichlet_partition(
                &train,
                &PartitionSpec {
                    alpha: svc.alpha,
                    n_clients: svc.client_count,
                },
                &mut part_rng,
            );
            let shards: Vec<Dataset> = shards_idx.iter().map(|ix| train.subset(ix)).collect();
            let shard_sizes: Vec<usize> = shards.iter().map(|s| s.len()).collect();

            let member_ids: Vec<ClientId> = (0..svc.client_count).map(|m| next_client + m).collect();
            for (m, &cid) in member_ids.iter().enumerate() {
                let mut placement = stream(seed, StreamId::Placement { client: cid as u64 });
                let position = Point::new(
                    bounds.min_x + placement.random::<f64>() * bounds.width(),
                    bounds.min_y + placement.random::<f64>() * bounds.height(),
                );
                let mut mobility_rng = stream(seed, StreamId::Mobility { client: cid as u64 });
                let motion = ClientMotion::spawn(position, &cfg.mobility, &mut mobility_rng);
                let mut compute_rng = stream(seed, StreamId::Compute { client: cid as u64 });
                let total = cfg.controller.compute_time_min_s
                    + compute_rng.random::<f64>()
                        * (cfg.controller.compute_time_max_s - cfg.controller.compute_time_min_s);
                let mut shadow_rng = stream(seed, StreamId::Shadowing { client: cid as u64 });
                let shadow = ShadowField::new(sites.len(), &cfg.radio, &mut shadow_rng);
                let iters = cfg.fl.local_iterations.max(1) as f64;
                registry
                    .register_client(ClientDescriptor {
                        client_id: cid,
                        dataset_type: svc.dataset.clone(),
                        dataset_size: shard_sizes[m],
                        compute_time_per_iteration: total / iters,
                        position_history: Vec::new(),
                        current_oru: None,
                    })
                    .expect("fresh client id");
                clients.push(ClientRuntime {
                    id: cid,
                    service_idx: idx,
                    motion,
                    rng: mobility_rng,
                    compute_time: total,
                    shadow,
                    shadow_rng,
                });
            }
            next_client += svc.client_count;

            registry
                .register_service(ServiceDescriptor {
                    service_id: svc.id,
                    deadline: svc.deadline_s,
                    target_accuracy: svc.target_accuracy,
                    weight: svc.weight,
                    recruitment_budget: svc.recruitment_budget,
                    accepted_dataset_type: svc.dataset.clone(),
                    recruited_clients: Vec::new(),
                })
                .expect("fresh service id");

            services.push(ServiceRuntime {
                idx,
                id: svc.id,
                deadline_ticks: ticks_of(svc.deadline_s, dt),
                weight: svc.weight,
                rounds_total: svc.rounds,
                clients: member_ids,
                shards,
                shard_sizes,
                test,
                global,
                locals: Vec::new(),
                payload_bits,
                uploads: Vec::new(),
                upload_start_ticks: Vec::new(),
                round: 0,
                round_start_tick: 0,
                round_end_tick: 0,
                done: false,
                alloc_acc: 0.0,
                handover_acc: 0,
            });
        }

        // Dataset-type recruitment is the real assignment path; dataset
        // labels are unique per service here, so the outcome must match the
        // construction order.
        let outcome = registry.recruit();
        for svc in &services {
            debug_assert_eq!(outcome.assigned[&svc.id], svc.clients);
        }

        let config_hash = cfg.hash();
        let n_services = cfg.services.len();
        let eapp_horizon = cfg.controller.nonrt_period_s;
        let predictor =
            MobilityPredictor::fallback(cfg.eapp.window_k, eapp_horizon, bounds);
        Ok(Engine {
            policy,
            seed,
            sites: sites.clone(),
            bounds,
            registry,
            clients,
            services,
            predictor,
            per_client_predictors: None,
            plan: None,
            slice_alloc: SliceAllocation::zeros(sites.len(), n_services),
            window: None,
            b1_frozen: vec![BTreeMap::new(); n_services],
            b2_attach: None,
            tick: 0,
            mac_dt: dt,
            nearrt_ticks: ticks_of(cfg.controller.nearrt_period_s, dt),
            nonrt_ticks: ticks_of(cfg.controller.nonrt_period_s, dt),
            warmup_ticks: ticks_of(cfg.controller.warmup_s, dt),
            refresh_ticks: ticks_of(cfg.controller.eapp_refresh_period_s, dt),
            metrics: MetricsLog {
                policy,
                seed,
                config_hash,
                rounds: Vec::new(),
                allocations: Vec::new(),
                mac_grants: Vec::new(),
            },
            controller_invocations: 0,
            max_alloc_ratio: 0.0,
            cfg,
        })
    }

    pub fn now(&self) -> f64 {
        self.tick as f64 * self.mac_dt
    }

    pub fn all_done(&self) -> bool {
        self.services.iter().all(|s| s.done)
    }

    /// Run the warm-up and every service's full round schedule.
    pub fn run_to_completion(mut self) -> MetricsLog {
        let horizon: u64 = self.warmup_ticks
            + self
                .services
                .iter()
                .map(|s| {
                    s.rounds_total as u64
                        * (s.deadline_ticks
                            + ticks_of(
                                self.cfg.controller.compute_time_max_s
                                    + self.cfg.controller.downlink_delay_s
                                    + 1.0,
                                self.mac_dt,
                            ))
                })
                .max()
                .unwrap_or(0)
            + 10;
        while !self.all_done() {
            self.advance_tick();
            assert!(self.tick <= horizon, "simulation failed to terminate");
        }
        self.metrics
    }

    /// One 10 ms step of the whole system.
    pub fn advance_tick(&mut self) {
        let t = self.now();

        // Warm-up boundary: train the predictor, then open round 1 everywhere.
        if self.tick == self.warmup_ticks {
            self.train_predictor();
            if self.policy == Policy::Baseline1 {
                self.init_snapshot_assignments();
            }
            for s in 0..self.services.len() {
                self.setup_round(s);
            }
            if self.policy == Policy::Baseline1 {
                for s in 0..self.services.len() {
                    self.freeze_service(s);
                }
            }
        } else if self.tick > self.warmup_ticks {
            // Close rounds whose deadline is this tick; immediately start the
            // next one (instantaneous broadcast).
            let mut starting = Vec::new();
            for s in 0..self.services.len() {
                if !self.services[s].done && self.tick == self.services[s].round_end_tick {
                    self.close_round(s);
                    if !self.services[s].done {
                        self.setup_round(s);
                        starting.push(s);
                    }
                }
            }
            if self.policy == Policy::Baseline1 {
                // At synchronized boundaries every restarting service's old
                // grants expire together, before any re-freeze reads them.
                for &s in &starting {
                    self.b1_frozen[s].clear();
                }
                for s in starting {
                    self.freeze_service(s);
                }
            }
        }

        // Long-timescale descriptor sampling.
        if self.tick > 0 && self.tick % self.nonrt_ticks == 0 {
            let samples: Vec<(ClientId, Point)> = self
                .clients
                .iter()
                .map(|c| (c.id, c.motion.position))
                .collect();
            self.registry
                .record_positions(t, &samples)
                .expect("monotone sampling clock");
        }
        if self.refresh_ticks > 0
            && self.tick > self.warmup_ticks
            && (self.tick - self.warmup_ticks) % self.refresh_ticks == 0
        {
            self.train_predictor();
        }

        // Upload phase transitions.
        for svc in &mut self.services {
            if svc.done {
                continue;
            }
            for (m, u) in svc.uploads.iter_mut().enumerate() {
                if u.status == UploadStatus::Computing && self.tick >= svc.upload_start_ticks[m] {
                    u.status = UploadStatus::Uploading;
                }
            }
        }

        // Control decisions.
        if self.policy == Policy::Efl
            && self.tick >= self.warmup_ticks
            && (self.tick - self.warmup_ticks) % self.nearrt_ticks == 0
        {
            self.run_controller(t);
        }

        // MAC grants, transmission, round accounting.
        self.transmit(t);

        // Mobility; shadowing decorrelates with the distance travelled.
        if self.cfg.mobility.speed > 0.0 {
            let moved = self.cfg.mobility.speed * self.mac_dt;
            for c in &mut self.clients {
                c.motion = step(&c.motion, self.mac_dt, &self.bounds, &self.cfg.mobility, &mut c.rng);
                c.shadow.advance(moved, &mut c.shadow_rng);
            }
        }

        self.tick += 1;
    }

    fn true_positions(&self) -> Vec<Point> {
        self.clients.iter().map(|c| c.motion.position).collect()
    }

    /// Measured link gain: distance gain times the client's current shadow
    /// state, clamped to the physical ceiling.
    fn gain_now(&self, client: ClientId, position: &Point, oru: OruId) -> f64 {
        let g = channel_gain(position.distance(&self.sites[oru].position), &self.cfg.radio);
        (g * self.clients[client].shadow.factor(oru)).min(1.0)
    }

    fn se_true(&self, client: ClientId, oru: OruId) -> f64 {
        let p = self.clients[client].motion.position;
        spectral_efficiency(self.gain_now(client, &p, oru), &self.cfg.radio)
    }

    fn train_predictor(&mut self) {
        let eapp_cfg = EappConfig {
            history_window: self.cfg.eapp.window_k,
            hidden: [self.cfg.eapp.hidden[0], self.cfg.eapp.hidden[1]],
            learning_rate: self.cfg.eapp.learning_rate,
            epochs: self.cfg.eapp.epochs,
            batch_size: self.cfg.eapp.batch_size,
        };
        let horizon = self.cfg.controller.nonrt_period_s;
        let mut rng = stream(self.seed, StreamId::EappTrain);
        if self.cfg.eapp.per_client {
            let mut predictors = Vec::with_capacity(self.clients.len());
            for c in &self.clients {
                let history = self.registry.client(c.id).unwrap().position_history.clone();
                let out = train_eapp(&[history.as_slice()], horizon, self.bounds, &eapp_cfg, &mut rng);
                predictors.push(out.predictor);
            }
            self.per_client_predictors = Some(predictors);
        } else {
            let histories: Vec<Vec<TimedPosition>> = self
                .clients
                .iter()
                .map(|c| self.registry.client(c.id).unwrap().position_history.clone())
                .collect();
            let refs: Vec<&[TimedPosition]> = histories.iter().map(|h| h.as_slice()).collect();
            let out = train_eapp(&refs, horizon, self.bounds, &eapp_cfg, &mut rng);
            self.predictor = out.predictor;
        }
    }

    /// Predicted positions now and one control window ahead, per client.
    fn window_prediction(&self, now: f64) -> WindowPrediction {
        let horizon = self.cfg.controller.nearrt_period_s;
        let truth = self.true_positions();
        let mut now_pos = Vec::with_capacity(self.clients.len());
        let mut horizon_pos = Vec::with_capacity(self.clients.len());
        for c in &self.clients {
            if self.cfg.controller.use_true_positions {
                now_pos.push(truth[c.id]);
                horizon_pos.push(truth[c.id]);
                continue;
            }
            let history = self.registry.client(c.id).unwrap().position_history.as_slice();
            if history.is_empty() {
                now_pos.push(truth[c.id]);
                horizon_pos.push(truth[c.id]);
                continue;
            }
            let predictor = match &self.per_client_predictors {
                Some(list) => &list[c.id],
                None => &self.predictor,
            };
            let usable = match predictor.kind {
                crate::eapp::PredictorKind::Trained(_) => {
                    history.len() >= predictor.history_window
                }
                crate::eapp::PredictorKind::Fallback => true,
            };
            let t_last = history.last().unwrap().t;
            if usable {
                now_pos.push(predict_position(predictor, history, now - t_last));
                horizon_pos.push(predict_position(predictor, history, now - t_last + horizon));
            } else {
                let fb = MobilityPredictor::fallback(2, predictor.horizon, self.bounds);
                now_pos.push(predict_position(&fb, history, now - t_last));
                horizon_pos.push(predict_position(&fb, history, now - t_last + horizon));
            }
        }
        WindowPrediction {
            start_t: now,
            now_pos,
            horizon_pos,
        }
    }

    /// Planning-layer link qualities: distance-driven gains at the given
    /// positions (shadow states are not observable by the planning layer;
    /// its inputs are predicted positions).
    fn se_matrix_for(&self, positions: &[Point]) -> Vec<Vec<f64>> {
        positions
            .iter()
            .map(|p| {
                self.sites
                    .iter()
                    .map(|site| {
                        spectral_efficiency(
                            channel_gain(p.distance(&site.position), &self.cfg.radio),
                            &self.cfg.radio,
                        )
                    })
                    .collect()
            })
            .collect()
    }

    /// Clients with outstanding upload work, with remaining bits. A client
    /// still computing counts only if its upload begins by `window_end_tick`,
    /// so slices track demand that can actually materialize in the window.
    fn active_uploads(&self, window_end_tick: u64) -> Vec<ActiveUpload> {
        let mut actives = Vec::new();
        for svc in &self.services {
            if svc.done {
                continue;
            }
            for (m, u) in svc.uploads.iter().enumerate() {
                let pending = match u.status {
                    UploadStatus::Uploading => true,
                    UploadStatus::Computing => svc.upload_start_ticks[m] <= window_end_tick,
                    _ => false,
                };
                if pending && u.remaining_bits() > 0.0 {
                    actives.push(ActiveUpload {
                        client: u.client_id,
                        service_idx: svc.idx,
                        remaining_bits: u.remaining_bits(),
                    });
                }
            }
        }
        actives
    }

    /// The 3 s control step: predict, assign with hysteresis, split slices.
    /// The controller's link estimate composes predicted geometry with the
    /// currently measured shadow state per link.
    fn run_controller(&mut self, now: f64) {
        self.controller_invocations += 1;
        let window = self.window_prediction(now);
        let se: Vec<Vec<f64>> = window
            .horizon_pos
            .iter()
            .enumerate()
            .map(|(client, p)| {
                (0..self.sites.len())
                    .map(|o| spectral_efficiency(self.gain_now(client, p, o), &self.cfg.radio))
                    .collect()
            })
            .collect();
        let plan = assign_clients(
            &se,
            self.plan.as_deref(),
            self.cfg.radio.hysteresis_margin,
        );
        for h in &plan.handovers {
            let s = self.clients[h.client].service_idx;
            self.services[s].handover_acc += 1;
        }
        for (cid, &oru) in plan.oru_of.iter().enumerate() {
            self.registry.set_current_oru(cid, oru);
        }

        let actives = self.active_uploads(self.tick + self.nearrt_ticks);
        let loads = compute_load_with(
            &plan,
            self.services.len(),
            &actives,
            &se,
            &self.sites,
            self.cfg.controller.se_floor,
            self.cfg.controller.latency_model == LatencyModel::Max,
        );
        let weights: Vec<f64> = self.services.iter().map(|s| s.weight).collect();
        let alloc = allocate_slices(&weights, &loads, &self.sites, self.cfg.controller.f_min)
            .expect("f_min feasibility validated at load");

        // Window handover counts per service, repeated on each site row.
        let mut window_handovers = vec![0usize; self.services.len()];
        for h in &plan.handovers {
            window_handovers[self.clients[h.client].service_idx] += 1;
        }
        for (o, _) in self.sites.iter().enumerate() {
            for s in 0..self.services.len() {
                self.metrics.allocations.push(AllocRecord {
                    t: now,
                    oru: o,
                    service_id: self.services[s].id,
                    fraction: alloc.fractions[o][s],
                    bandwidth_hz: alloc.bandwidth_hz[o][s],
                    handovers: window_handovers[s],
                });
            }
        }

        self.plan = Some(plan.oru_of);
        self.slice_alloc = alloc;
        self.window = Some(window);
    }

    /// Initial snapshot assignment (true-position argmax) for every client.
    fn init_snapshot_assignments(&mut self) {
        let se = self.se_matrix_for(&self.true_positions());
        let plan = assign_clients(&se, None, 0.0);
        self.plan = Some(plan.oru_of);
    }

    /// Local training and upload bookkeeping at a round start.
    fn setup_round(&mut self, s: usize) {
        let dt = self.mac_dt;
        let downlink = self.cfg.controller.downlink_delay_s;
        let include_compute = self.cfg.controller.deadline_includes_compute;
        let train_cfg = TrainConfig {
            local_iterations: self.cfg.fl.local_iterations,
            learning_rate: self.cfg.fl.learning_rate,
            batch_size: self.cfg.fl.batch_size,
        };
        let svc = &mut self.services[s];
        svc.round_start_tick = self.tick;
        let round = svc.round;

        svc.locals = (0..svc.clients.len())
            .map(|m| {
                let mut rng = stream(
                    self.seed,
                    StreamId::LocalTrain {
                        service: s as u64,
                        client: svc.clients[m] as u64,
                        round: round as u64,
                    },
                );
                local_train(&svc.global, &svc.shards[m], &train_cfg, &mut rng)
            })
            .collect();

        let mut max_start_offset: f64 = 0.0;
        svc.uploads = Vec::with_capacity(svc.clients.len());
        svc.upload_start_ticks = Vec::with_capacity(svc.clients.len());
        for (m, &cid) in svc.clients.iter().enumerate() {
            let compute = self.clients[cid].compute_time;
            let offset = downlink + compute;
            max_start_offset = max_start_offset.max(offset);
            let start_tick = svc.round_start_tick + (offset / dt).ceil() as u64;
            let deadline_tick = if include_compute {
                svc.round_start_tick + svc.deadline_ticks
            } else {
                start_tick + svc.deadline_ticks
            };
            let mut u = UploadState::new(cid, svc.payload_bits, deadline_tick as f64 * dt);
            u.status = UploadStatus::Computing;
            svc.uploads.push(u);
            svc.upload_start_ticks.push(start_tick);
            let _ = m;
        }
        svc.round_end_tick = if include_compute {
            svc.round_start_tick + svc.deadline_ticks
        } else {
            svc.round_start_tick + svc.deadline_ticks + (max_start_offset / dt).ceil() as u64
        };
        svc.alloc_acc = 0.0;
        svc.handover_acc = 0;
    }

    /// Aggregate, evaluate, log, and either advance to the next round or
    /// finish the service.
    fn close_round(&mut self, s: usize) {
        let svc = &mut self.services[s];
        // Finalize statuses at the deadline tick.
        for u in svc.uploads.iter_mut() {
            if matches!(u.status, UploadStatus::Computing | UploadStatus::Uploading) {
                u.status = UploadStatus::Failed;
            }
        }
        let successes: Vec<usize> = svc
            .uploads
            .iter()
            .enumerate()
            .filter(|(_, u)| u.status == UploadStatus::Done)
            .map(|(m, _)| m)
            .collect();

        let models: Vec<Network> = successes.iter().map(|&m| svc.locals[m].clone()).collect();
        let weights: Vec<f64> = successes.iter().map(|&m| svc.shard_sizes[m] as f64).collect();
        if !models.is_empty() && weights.iter().sum::<f64>() > 0.0 {
            svc.global = fedavg(&models, &weights).expect("congruent local models");
        } // otherwise the global model carries over unchanged

        if std::env::var_os("EFLSIM_DEBUG_WASTE").is_some() {
            let wasted: f64 = svc
                .uploads
                .iter()
                .filter(|u| u.status == UploadStatus::Failed)
                .map(|u| u.bits_sent)
                .sum();
            let failed_expensive = svc
                .uploads
                .iter()
                .filter(|u| u.status == UploadStatus::Failed)
                .count();
            eprintln!(
                "svc {} round {}: wasted {:.1} payload-equivalents over {} failures",
                svc.id,
                svc.round,
                wasted / svc.payload_bits,
                failed_expensive
            );
        }
        let accuracy = evaluate(&svc.global, &svc.test);
        let round_ticks = (svc.round_end_tick - svc.round_start_tick).max(1);
        self.metrics.rounds.push(RoundRecord {
            service_id: svc.id,
            round: svc.round,
            successful: successes.len(),
            failed: svc.clients.len() - successes.len(),
            accuracy,
            round_start_s: svc.round_start_tick as f64 * self.mac_dt,
            round_end_s: svc.round_end_tick as f64 * self.mac_dt,
            mean_alloc_hz: svc.alloc_acc / round_ticks as f64,
            handovers: svc.handover_acc,
        });

        svc.round += 1;
        if svc.round >= svc.rounds_total {
            svc.done = true;
            // A finished service holds no reservations.
            self.b1_frozen[s].clear();
        }
    }

    /// Round-start snapshot for one service: true-position assignment for its
    /// clients, weighted split against current loads, then one frozen
    /// MAC-style division per site.
    fn freeze_service(&mut self, s: usize) {
        let se = self.se_matrix_for(&self.true_positions());

        // Handover = assignment change for this service's clients. The
        // snapshot picks each client's best currently measured site; with
        // slowly decorrelating shadows that choice stays reasonable for the
        // round it is frozen over.
        let positions = self.true_positions();
        let best_sites: Vec<(ClientId, OruId)> = self.services[s]
            .clients
            .iter()
            .map(|&cid| {
                let mut best = 0usize;
                let mut best_gain = self.gain_now(cid, &positions[cid], 0);
                for o in 1..self.sites.len() {
                    let g = self.gain_now(cid, &positions[cid], o);
                    if g > best_gain {
                        best = o;
                        best_gain = g;
                    }
                }
                (cid, best)
            })
            .collect();
        let mut round_start_handovers = 0usize;
        let plan_vec = self.plan.as_mut().expect("snapshot assignments initialized");
        for (cid, best) in best_sites {
            if plan_vec[cid] != best {
                round_start_handovers += 1;
                plan_vec[cid] = best;
            }
        }
        self.services[s].handover_acc += round_start_handovers;
        let plan = crate::controller::AssignmentPlan {
            oru_of: plan_vec.clone(),
            handovers: Vec::new(),
        };

        // The freeze provisions the whole round, so every pending upload
        // counts regardless of when its compute finishes.
        let actives = self.active_uploads(u64::MAX);
        let loads = compute_load_with(
            &plan,
            self.services.len(),
            &actives,
            &se,
            &self.sites,
            self.cfg.controller.se_floor,
            self.cfg.controller.latency_model == LatencyModel::Max,
        );
        let weights: Vec<f64> = self.services.iter().map(|x| x.weight).collect();

        // Bandwidth still reserved by other services' frozen grants. Grants
        // of clients whose uploads already finished (or failed) are released;
        // the snapshot pathology is frozen sizing, not dead reservations.
        let mut committed = vec![0.0f64; self.sites.len()];
        for (other, frozen) in self.b1_frozen.iter().enumerate() {
            if other == s {
                continue;
            }
            let pending: std::collections::BTreeSet<ClientId> = self.services[other]
                .uploads
                .iter()
                .filter(|u| {
                    matches!(u.status, UploadStatus::Computing | UploadStatus::Uploading)
                })
                .map(|u| u.client_id)
                .collect();
            for (&cid, &w) in frozen {
                if pending.contains(&cid) {
                    committed[plan.oru_of[cid]] += w;
                }
            }
        }

        let now = self.now();
        let mut frozen = BTreeMap::new();
        for (o, site) in self.sites.iter().enumerate() {
            let fractions =
                crate::controller::slice_split(&weights, &loads[o], self.cfg.controller.f_min)
                    .expect("validated f_min");
            let budget = (fractions[s] * site.total_bandwidth)
                .min((site.total_bandwidth - committed[o]).max(0.0));
            let members: Vec<SliceClient> = self.services[s]
                .clients
                .iter()
                .enumerate()
                .filter(|(_, &cid)| plan.oru_of[cid] == o)
                .map(|(m, &cid)| {
                    // Each client's usable window runs from its own upload
                    // start; encode it by shifting the deadline seen here.
                    let upload_start =
                        self.services[s].upload_start_ticks[m] as f64 * self.mac_dt;
                    let window = self.services[s].uploads[m].deadline_t - upload_start;
                    let position = self.clients[cid].motion.position;
                    // Conservative snapshot sizing: plan against the worse of
                    // the long-run link and the currently measured one (the
                    // fade margin a one-shot allocator needs; the decision is
                    // still taken once and never revisited).
                    let planned = se[cid][o];
                    let measured =
                        spectral_efficiency(self.gain_now(cid, &position, o), &self.cfg.radio);
                    SliceClient {
                        client_id: cid,
                        channel_gain: channel_gain(
                            position.distance(&site.position),
                            &self.cfg.radio,
                        ),
                        se: planned.min(measured),
                        remaining_bits: self.services[s].uploads[m].remaining_bits(),
                        deadline_t: now + window,
                    }
                })
                .collect();
            if members.is_empty() {
                continue;
            }
            let grants = match self.cfg.controller.mac_order {
                MacOrder::Gain => schedule(&members, budget, now),
                MacOrder::Cheapest => schedule_cheapest_first(&members, budget, now),
            };
            self.metrics.allocations.push(AllocRecord {
                t: now,
                oru: o,
                service_id: self.services[s].id,
                fraction: budget / site.total_bandwidth,
                bandwidth_hz: budget,
                handovers: 0,
            });
            frozen.extend(grants);
        }
        self.b1_frozen[s] = frozen;
    }

    /// MAC grants + transmission for this tick, under the active policy.
    fn transmit(&mut self, now: f64) {
        let dt = self.mac_dt;
        let n_services = self.services.len();
        let mut grants: Vec<MacAllocation> = vec![MacAllocation::new(); n_services];

        match self.policy {
            Policy::Efl => {
                let Some(plan) = self.plan.as_ref() else {
                    return;
                };
                let window = self.window.as_ref().expect("window set with plan");
                let horizon_s = self.cfg.controller.nearrt_period_s;
                let frac = (((now + dt) - window.start_t) / horizon_s).clamp(0.0, 1.0);
                // Per-client interpolated short-horizon prediction.
                let pos: Vec<Point> = window
                    .now_pos
                    .iter()
                    .zip(&window.horizon_pos)
                    .map(|(a, b)| Point::new(a.x + (b.x - a.x) * frac, a.y + (b.y - a.y) * frac))
                    .collect();
                for (o, site) in self.sites.iter().enumerate() {
                    for s in 0..n_services {
                        if self.services[s].done {
                            continue;
                        }
                        let members: Vec<SliceClient> = self.services[s]
                            .uploads
                            .iter()
                            .filter(|u| {
                                u.status == UploadStatus::Uploading && plan[u.client_id] == o
                            })
                            .map(|u| {
                                // Link adaptation: the MAC sizes grants on
                                // the measured (shadowed) channel at its
                                // short prediction horizon.
                                let g = self.gain_now(u.client_id, &pos[u.client_id], o);
                                SliceClient {
                                    client_id: u.client_id,
                                    channel_gain: g,
                                    se: spectral_efficiency(g, &self.cfg.radio),
                                    remaining_bits: u.remaining_bits(),
                                    deadline_t: u.deadline_t,
                                }
                            })
                            .collect();
                        if members.is_empty() {
                            continue;
                        }
                        let w = self.slice_alloc.bandwidth_hz[o][s];
                        let slice_grants = match self.cfg.controller.mac_order {
                            MacOrder::Gain => schedule(&members, w, now),
                            MacOrder::Cheapest => schedule_cheapest_first(&members, w, now),
                        };
                        if self.cfg.log.mac_csv {
                            for (&cid, &hz) in &slice_grants {
                                self.metrics.mac_grants.push(MacRecord {
                                    t: now,
                                    oru: o,
                                    service_id: self.services[s].id,
                                    client: cid,
                                    hz,
                                });
                            }
                        }
                        grants[s].extend(slice_grants);
                    }
                }
            }
            Policy::Baseline1 => {
                for s in 0..n_services {
                    if self.services[s].done {
                        continue;
                    }
                    grants[s] = self.b1_frozen[s].clone();
                }
            }
            Policy::Baseline2 => {
                // Every tick: attach to the best-gain site, split each site's
                // full bandwidth equally among attached clients. Attachment
                // follows the distance gain (shadow states are far too fast
                // for per-tick handovers to chase); the realized link is
                // still shadowed.
                let truth = self.true_positions();
                let mut attach = Vec::with_capacity(self.clients.len());
                for p in &truth {
                    let mut best = 0usize;
                    let mut best_d = p.distance(&self.sites[0].position);
                    for (o, site) in self.sites.iter().enumerate().skip(1) {
                        let d = p.distance(&site.position);
                        if d < best_d {
                            best = o;
                            best_d = d;
                        }
                    }
                    attach.push(best);
                }
                if let Some(prev) = &self.b2_attach {
                    for (cid, (&a, &b)) in prev.iter().zip(&attach).enumerate() {
                        if a != b {
                            let s = self.clients[cid].service_idx;
                            self.services[s].handover_acc += 1;
                        }
                    }
                }
                let mut counts = vec![0usize; self.sites.len()];
                for &o in &attach {
                    counts[o] += 1;
                }
                for svc in &self.services {
                    if svc.done {
                        continue;
                    }
                    for u in &svc.uploads {
                        let o = attach[u.client_id];
                        let share = self.sites[o].total_bandwidth / counts[o] as f64;
                        grants[svc.idx].insert(u.client_id, share);
                    }
                }
                self.plan = Some(attach.clone());
                self.b2_attach = Some(attach);
            }
        }

        // Nothing transmits before the first assignment exists (warm-up).
        let Some(plan) = self.plan.as_ref() else {
            return;
        };
        let mut site_totals = vec![0.0f64; self.sites.len()];
        for (s, svc_grants) in grants.iter().enumerate() {
            let svc = &self.services[s];
            for u in &svc.uploads {
                if u.status == UploadStatus::Uploading {
                    if let Some(&w) = svc_grants.get(&u.client_id) {
                        site_totals[plan[u.client_id]] += w;
                    }
                }
            }
        }
        for (o, site) in self.sites.iter().enumerate() {
            let ratio = site_totals[o] / site.total_bandwidth;
            if ratio > self.max_alloc_ratio {
                self.max_alloc_ratio = ratio;
            }
        }

        // Transmission at true link quality, then deadline checks.
        for s in 0..n_services {
            if self.services[s].done {
                continue;
            }
            let mut se_true_map = BTreeMap::new();
            let mut active_alloc = 0.0;
            for u in &self.services[s].uploads {
                if u.status == UploadStatus::Uploading {
                    let o = plan[u.client_id];
                    se_true_map.insert(u.client_id, self.se_true(u.client_id, o));
                    active_alloc += grants[s].get(&u.client_id).copied().unwrap_or(0.0);
                }
            }
            self.services[s].alloc_acc += active_alloc;
            apply_allocation(
                &mut self.services[s].uploads,
                &grants[s],
                &se_true_map,
                now,
                dt,
            );
        }
    }
}

/// Build the train/test datasets for one service.
fn build_datasets(
    cfg: &SimConfig,
    client_count: usize,
    ds: &DatasetConfig,
    service_idx: usize,
) -> Result<(Dataset, Dataset), EngineError> {
    match ds {
        DatasetConfig::Synth {
            classes,
            samples_per_client,
            test_per_class,
            features,
        } => {
            let train_per_class = (client_count * samples_per_client).div_ceil(*classes);
            let mut rng = stream(
                cfg.data_seed,
                StreamId::DatasetGen {
                    service: service_idx as u64,
                },
            );
            // One draw so train and test share class centres, then split.
            let full = synth_dataset(*classes, train_per_class + test_per_class, *features, &mut rng)?;
            let per_class = train_per_class + test_per_class;
            let mut train_idx = Vec::new();
            let mut test_idx = Vec::new();
            for class in 0..*classes {
                let base = class * per_class;
                train_idx.extend(base..base + train_per_class);
                test_idx.extend(base + train_per_class..base + per_class);
            }
            Ok((full.subset(&train_idx), full.subset(&test_idx)))
        }
        DatasetConfig::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            downsample_side,
        } => {
            let side = if *downsample_side == 0 {
                None
            } else {
                Some(*downsample_side)
            };
            let train = crate::fl::data::load_idx(train_images, train_labels, side)?;
            let test = crate::fl::data::load_idx(test_images, test_labels, side)?;
            Ok((train, test))
        }
    }
}

/// Execute one full simulation.
pub fn run(cfg: &SimConfig, policy: Policy, seed: u64) -> Result<MetricsLog, EngineError> {
    Ok(Engine::new(cfg, policy, seed)?.run_to_completion())
}
