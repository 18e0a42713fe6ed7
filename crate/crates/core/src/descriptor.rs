//! Long-timescale system descriptor: client and service registries, periodic
//! position-history collection, and dataset-type-based client recruitment.

use crate::geom::Point;
use crate::radio::OruId;
use std::collections::BTreeMap;
use thiserror::Error;

pub type ClientId = usize;
pub type ServiceId = usize;

#[derive(Debug, Error, PartialEq)]
pub enum RegistryError {
    #[error("client {0} is already registered")]
    DuplicateClient(ClientId),
    #[error("service {0} is already registered")]
    DuplicateService(ServiceId),
    #[error("client {0} not registered")]
    UnknownClient(ClientId),
    #[error("position for client {client} at t={t} is not after its last history entry")]
    OutOfOrderSample { client: ClientId, t: f64 },
}

/// A timestamped position sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPosition {
    pub t: f64,
    pub position: Point,
}

/// Registry entry for one client.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDescriptor {
    pub client_id: ClientId,
    /// Dataset label used for recruitment, e.g. "mnist".
    pub dataset_type: String,
    pub dataset_size: usize,
    /// Seconds of local compute per SGD iteration; > 0.
    pub compute_time_per_iteration: f64,
    pub position_history: Vec<TimedPosition>,
    pub current_oru: Option<OruId>,
}

/// Registry entry for one FL service.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceDescriptor {
    pub service_id: ServiceId,
    /// Per-round deadline for receiving local models, seconds.
    pub deadline: f64,
    pub target_accuracy: f64,
    /// Latency weight of this service in the controller objective.
    pub weight: f64,
    /// Stored but not consulted by any control logic.
    pub recruitment_budget: f64,
    /// The one dataset type this service recruits.
    pub accepted_dataset_type: String,
    pub recruited_clients: Vec<ClientId>,
}

/// Single-writer registry owned by the simulation loop.
#[derive(Debug, Default, Clone)]
pub struct Registry {
    clients: BTreeMap<ClientId, ClientDescriptor>,
    services: BTreeMap<ServiceId, ServiceDescriptor>,
}

/// Result of dataset-type-based recruitment.
#[derive(Debug, Clone, PartialEq)]
pub struct RecruitOutcome {
    /// client sets per service, in service-id order.
    pub assigned: BTreeMap<ServiceId, Vec<ClientId>>,
    /// Clients whose dataset type matched no service.
    pub unrecruited: Vec<ClientId>,
}

impl Registry {
    pub fn new() -> Self {
        Registry::default()
    }

    pub fn register_client(&mut self, descriptor: ClientDescriptor) -> Result<(), RegistryError> {
        debug_assert!(descriptor.compute_time_per_iteration > 0.0);
        let id = descriptor.client_id;
        if self.clients.contains_key(&id) {
            return Err(RegistryError::DuplicateClient(id));
        }
        self.clients.insert(id, descriptor);
        Ok(())
    }

    pub fn register_service(&mut self, descriptor: ServiceDescriptor) -> Result<(), RegistryError> {
        debug_assert!(descriptor.deadline > 0.0 && descriptor.weight > 0.0);
        let id = descriptor.service_id;
        if self.services.contains_key(&id) {
            return Err(RegistryError::DuplicateService(id));
        }
        self.services.insert(id, descriptor);
        Ok(())
    }

    pub fn client(&self, id: ClientId) -> Option<&ClientDescriptor> {
        self.clients.get(&id)
    }

    pub fn service(&self, id: ServiceId) -> Option<&ServiceDescriptor> {
        self.services.get(&id)
    }

    pub fn clients(&self) -> impl Iterator<Item = &ClientDescriptor> {
        self.clients.values()
    }

    pub fn services(&self) -> impl Iterator<Item = &ServiceDescriptor> {
        self.services.values()
    }

    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn n_services(&self) -> usize {
        self.services.len()
    }

    pub fn set_current_oru(&mut self, id: ClientId, oru: OruId) {
        if let Some(c) = self.clients.get_mut(&id) {
            c.current_oru = Some(oru);
        }
    }

    /// Append `(t, position)` to each listed client's history. The whole
    /// batch is rejected if any sample would break the strictly-increasing
    /// timestamp invariant.
    pub fn record_positions(
        &mut self,
        t: f64,
        true_positions: &[(ClientId, Point)],
    ) -> Result<(), RegistryError> {
        for &(id, _) in true_positions {
            let c = self
                .clients
                .get(&id)
                .ok_or(RegistryError::UnknownClient(id))?;
            if let Some(last) = c.position_history.last() {
                if t <= last.t {
                    return Err(RegistryError::OutOfOrderSample { client: id, t });
                }
            }
        }
        for &(id, position) in true_positions {
            self.clients
                .get_mut(&id)
                .unwrap()
                .position_history
                .push(TimedPosition { t, position });
        }
        Ok(())
    }

    /// Assign every client whose dataset type matches a service to that
    /// service (lowest service id wins when several accept the same type).
    /// Updates the service descriptors' recruited lists.
    pub fn recruit(&mut self) -> RecruitOutcome {
        let mut assigned: BTreeMap<ServiceId, Vec<ClientId>> =
            self.services.keys().map(|&s| (s, Vec::new())).collect();
        let mut unrecruited = Vec::new();
        for (&cid, client) in &self.clients {
            let target = self
                .services
                .values()
                .find(|s| s.accepted_dataset_type == client.dataset_type)
                .map(|s| s.service_id);
            match target {
                Some(sid) => assigned.get_mut(&sid).unwrap().push(cid),
                None => unrecruited.push(cid),
            }
        }
        for (sid, clients) in &assigned {
            self.services.get_mut(sid).unwrap().recruited_clients = clients.clone();
        }
        RecruitOutcome {
            assigned,
            unrecruited,
        }
    }

    /// Dump the registry as line-delimited text for debugging. One line per
    /// descriptor: `client`/`service`, then `key=value` fields.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for c in self.clients.values() {
            let (x, y) = c
                .position_history
                .last()
                .map(|p| (p.position.x, p.position.y))
                .unwrap_or((f64::NAN, f64::NAN));
            out.push_str(&format!(
                "client id={} dataset_type={} dataset_size={} compute_s_per_iter={} oru={} history_len={} last_x={} last_y={}\n",
                c.client_id,
                c.dataset_type,
                c.dataset_size,
                c.compute_time_per_iteration,
                c.current_oru.map(|o| o as i64).unwrap_or(-1),
                c.position_history.len(),
                x,
                y
            ));
        }
        for s in self.services.values() {
            out.push_str(&format!(
                "service id={} dataset_type={} deadline_s={} weight={} target_accuracy={} budget={} recruited={}\n",
                s.service_id,
                s.accepted_dataset_type,
                s.deadline,
                s.weight,
                s.target_accuracy,
                s.recruitment_budget,
                s.recruited_clients.len()
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn client(id: ClientId, dataset_type: &str) -> ClientDescriptor {
        ClientDescriptor {
            client_id: id,
            dataset_type: dataset_type.to_string(),
            dataset_size: 600,
            compute_time_per_iteration: 0.1,
            position_history: Vec::new(),
            current_oru: None,
        }
    }

    fn service(id: ServiceId, dataset_type: &str) -> ServiceDescriptor {
        ServiceDescriptor {
            service_id: id,
            deadline: 30.0,
            target_accuracy: 0.9,
            weight: 30.0,
            recruitment_budget: 0.0,
            accepted_dataset_type: dataset_type.to_string(),
            recruited_clients: Vec::new(),
        }
    }

    #[test]
    fn register_then_lookup_roundtrips() {
        let mut reg = Registry::new();
        let c = client(3, "mnist");
        reg.register_client(c.clone()).unwrap();
        assert_eq!(reg.client(3), Some(&c));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut reg = Registry::new();
        reg.register_client(client(0, "mnist")).unwrap();
        assert_eq!(
            reg.register_client(client(0, "fashion")),
            Err(RegistryError::DuplicateClient(0))
        );
        reg.register_service(service(1, "mnist")).unwrap();
        assert_eq!(
            reg.register_service(service(1, "mnist")),
            Err(RegistryError::DuplicateService(1))
        );
    }

    #[test]
    fn case_study_registry_sizes() {
        let mut reg = Registry::new();
        for i in 0..16 {
            reg.register_client(client(i, "mnist")).unwrap();
        }
        for i in 16..32 {
            reg.register_client(client(i, "fashion")).unwrap();
        }
        reg.register_service(service(1, "mnist")).unwrap();
        reg.register_service(service(2, "fashion")).unwrap();
        assert_eq!(reg.n_clients(), 32);
        assert_eq!(reg.n_services(), 2);

        let outcome = reg.recruit();
        assert_eq!(outcome.assigned[&1].len(), 16);
        assert_eq!(outcome.assigned[&2].len(), 16);
        assert!(outcome.unrecruited.is_empty());
        assert_eq!(reg.service(1).unwrap().recruited_clients.len(), 16);
    }

    #[test]
    fn unmatched_clients_left_unrecruited() {
        let mut reg = Registry::new();
        reg.register_client(client(0, "cifar")).unwrap();
        reg.register_service(service(1, "mnist")).unwrap();
        reg.register_service(service(2, "fashion")).unwrap();
        let outcome = reg.recruit();
        assert_eq!(outcome.unrecruited, vec![0]);
        assert!(outcome.assigned[&1].is_empty());
    }

    #[test]
    fn recruit_with_no_clients() {
        let mut reg = Registry::new();
        reg.register_service(service(1, "mnist")).unwrap();
        let outcome = reg.recruit();
        assert!(outcome.assigned[&1].is_empty());
        assert!(outcome.unrecruited.is_empty());
    }

    #[test]
    fn history_appends_every_sample_period() {
        let mut reg = Registry::new();
        reg.register_client(client(0, "mnist")).unwrap();
        // 100 s of simulation sampled every 10 s.
        for i in 1..=10 {
            reg.record_positions(i as f64 * 10.0, &[(0, Point::new(1.0, 2.0))])
                .unwrap();
        }
        let history = &reg.client(0).unwrap().position_history;
        assert_eq!(history.len(), 10);
        assert!(history.windows(2).all(|w| w[0].t < w[1].t));
        // stationary client: all entries equal
        assert!(history.iter().all(|p| p.position == Point::new(1.0, 2.0)));
    }

    #[test]
    fn out_of_order_sample_rejected_atomically() {
        let mut reg = Registry::new();
        reg.register_client(client(0, "mnist")).unwrap();
        reg.register_client(client(1, "mnist")).unwrap();
        reg.record_positions(10.0, &[(0, Point::ORIGIN), (1, Point::ORIGIN)])
            .unwrap();
        let err = reg
            .record_positions(10.0, &[(0, Point::new(1.0, 1.0)), (1, Point::ORIGIN)])
            .unwrap_err();
        assert!(matches!(err, RegistryError::OutOfOrderSample { .. }));
        assert_eq!(reg.client(0).unwrap().position_history.len(), 1);
        assert_eq!(reg.client(1).unwrap().position_history.len(), 1);
    }
}
