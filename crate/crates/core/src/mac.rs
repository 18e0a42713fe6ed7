//! Per-slice MAC scheduling: every tick, grant each uploading client enough
//! bandwidth to make its service deadline, serving clients in descending
//! channel-gain order, then spread any leftover across active uploaders so
//! slice bandwidth is never idle while uploads are pending.

use crate::descriptor::ClientId;
use std::collections::BTreeMap;

/// Upload lifecycle of one client within one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UploadStatus {
    Computing,
    Uploading,
    Done,
    Failed,
}

/// Per-client, per-round upload progress against a deadline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UploadState {
    pub client_id: ClientId,
    pub bits_total: f64,
    pub bits_sent: f64,
    /// Absolute deadline, seconds.
    pub deadline_t: f64,
    pub status: UploadStatus,
}

impl UploadState {
    pub fn new(client_id: ClientId, bits_total: f64, deadline_t: f64) -> Self {
        UploadState {
            client_id,
            bits_total,
            bits_sent: 0.0,
            deadline_t,
            status: UploadStatus::Computing,
        }
    }

    pub fn remaining_bits(&self) -> f64 {
        self.bits_total - self.bits_sent
    }
}

/// Result of a requirement computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Requirement {
    Hz(f64),
    /// Deadline already passed, or the link carries nothing.
    Infeasible,
}

/// Bandwidth that finishes the upload exactly at the deadline:
/// `remaining / ((deadline - now) * se)`.
pub fn required_bandwidth(upload: &UploadState, se: f64, now: f64) -> Requirement {
    required_hz(upload.remaining_bits(), upload.deadline_t, se, now)
}

pub(crate) fn required_hz(remaining_bits: f64, deadline_t: f64, se: f64, now: f64) -> Requirement {
    if remaining_bits <= 0.0 {
        return Requirement::Hz(0.0);
    }
    if deadline_t <= now || se <= 0.0 {
        return Requirement::Infeasible;
    }
    Requirement::Hz(remaining_bits / ((deadline_t - now) * se))
}

/// One uploading client as the scheduler sees it. `se` is the link quality
/// at the scheduler's short prediction horizon.
#[derive(Debug, Clone, Copy)]
pub struct SliceClient {
    pub client_id: ClientId,
    pub channel_gain: f64,
    pub se: f64,
    pub remaining_bits: f64,
    pub deadline_t: f64,
}

/// Bandwidth grants for one slice at one tick, Hz per client.
pub type MacAllocation = BTreeMap<ClientId, f64>;

/// Two-pass greedy allocation of `w_slice` Hz among uploading clients.
///
/// Pass 1 walks clients in descending channel gain (ties toward the lowest
/// client id) granting `min(required, remaining)`; a client whose
/// requirement is infeasible gets the remainder only when it is the last
/// one considered, otherwise nothing. Pass 2 splits whatever is left
/// equally among all uploading clients.
pub fn schedule(clients: &[SliceClient], w_slice: f64, now: f64) -> MacAllocation {
    let mut alloc = MacAllocation::new();
    if clients.is_empty() || w_slice <= 0.0 {
        for c in clients {
            alloc.insert(c.client_id, 0.0);
        }
        return alloc;
    }

    let mut order: Vec<usize> = (0..clients.len()).collect();
    order.sort_by(|&a, &b| {
        clients[b]
            .channel_gain
            .partial_cmp(&clients[a].channel_gain)
            .unwrap()
            .then(clients[a].client_id.cmp(&clients[b].client_id))
    });

    let mut remaining = w_slice;
    for (pos, &i) in order.iter().enumerate() {
        let c = &clients[i];
        let grant = match required_hz(c.remaining_bits, c.deadline_t, c.se, now) {
            Requirement::Hz(need) => need.min(remaining),
            Requirement::Infeasible => {
                if pos == order.len() - 1 {
                    remaining
                } else {
                    0.0
                }
            }
        };
        alloc.insert(c.client_id, grant);
        remaining -= grant;
    }

    if remaining > 0.0 {
        // Equal shares of the leftover; the last client takes the residual so
        // the grand total telescopes to exactly w_slice.
        let n = clients.len();
        let share = remaining / n as f64;
        for (pos, &i) in order.iter().enumerate() {
            let extra = if pos == n - 1 {
                remaining - share * (n - 1) as f64
            } else {
                share
            };
            *alloc.get_mut(&clients[i].client_id).unwrap() += extra;
        }
    }
    alloc
}

/// Ablation variant of [`schedule`]: pass 1 serves the cheapest requirement
/// first instead of the best gain (can complete more clients under scarcity;
/// off by default).
pub fn schedule_cheapest_first(clients: &[SliceClient], w_slice: f64, now: f64) -> MacAllocation {
    let mut alloc = MacAllocation::new();
    if clients.is_empty() || w_slice <= 0.0 {
        for c in clients {
            alloc.insert(c.client_id, 0.0);
        }
        return alloc;
    }
    let reqs: Vec<Option<f64>> = clients
        .iter()
        .map(|c| match required_hz(c.remaining_bits, c.deadline_t, c.se, now) {
            Requirement::Hz(w) => Some(w),
            Requirement::Infeasible => None,
        })
        .collect();
    let mut order: Vec<usize> = (0..clients.len()).collect();
    order.sort_by(|&a, &b| {
        let ka = reqs[a].unwrap_or(f64::INFINITY);
        let kb = reqs[b].unwrap_or(f64::INFINITY);
        ka.partial_cmp(&kb)
            .unwrap()
            .then(clients[a].client_id.cmp(&clients[b].client_id))
    });
    let mut remaining = w_slice;
    for (pos, &i) in order.iter().enumerate() {
        let grant = match reqs[i] {
            Some(need) => need.min(remaining),
            None => {
                if pos == order.len() - 1 {
                    remaining
                } else {
                    0.0
                }
            }
        };
        alloc.insert(clients[i].client_id, grant);
        remaining -= grant;
    }
    if remaining > 0.0 {
        let n = clients.len();
        let share = remaining / n as f64;
        for (pos, &i) in order.iter().enumerate() {
            let extra = if pos == n - 1 {
                remaining - share * (n - 1) as f64
            } else {
                share
            };
            *alloc.get_mut(&clients[i].client_id).unwrap() += extra;
        }
    }
    alloc
}

/// Integrate the granted bandwidth over `dt` seconds of transmission at the
/// (true) link efficiency `se_true`, updating progress and status.
pub fn apply_allocation(
    uploads: &mut [UploadState],
    allocation: &MacAllocation,
    se_true: &BTreeMap<ClientId, f64>,
    now: f64,
    dt: f64,
) {
    for u in uploads.iter_mut() {
        if u.status != UploadStatus::Uploading {
            continue;
        }
        let w = allocation.get(&u.client_id).copied().unwrap_or(0.0);
        let se = se_true.get(&u.client_id).copied().unwrap_or(0.0);
        u.bits_sent += se * w * dt;
        if u.bits_sent >= u.bits_total {
            u.bits_sent = u.bits_total;
            u.status = UploadStatus::Done;
        }
    }
    let after = now + dt;
    for u in uploads.iter_mut() {
        if after >= u.deadline_t
            && matches!(u.status, UploadStatus::Uploading | UploadStatus::Computing)
        {
            u.status = UploadStatus::Failed;
        }
    }
}
