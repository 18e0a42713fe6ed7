//! Experiment drivers behind the CLI: single runs, the three-policy
//! comparison, and the service-weight ablation sweep, each persisted as CSV.

use crate::config::SimConfig;
use crate::engine::{run, EngineError};
use crate::metrics::{fmt_f64, write_atomic, MetricsLog, Policy, RoundRecord};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    BadRequest(String),
}

fn write(path: &Path, content: &str) -> Result<(), HarnessError> {
    write_atomic(path, content).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Files produced by one simulation run.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub rounds: PathBuf,
    pub allocations: PathBuf,
    pub mac: Option<PathBuf>,
}

/// Run one simulation and persist its logs under `out_dir`.
pub fn cmd_run(
    cfg: &SimConfig,
    policy: Policy,
    seed: u64,
    out_dir: &Path,
) -> Result<(MetricsLog, RunPaths), HarnessError> {
    let log = run(cfg, policy, seed)?;
    let stem = format!("{}_seed{}", policy, seed);
    let paths = RunPaths {
        rounds: out_dir.join(format!("metrics_{stem}.csv")),
        allocations: out_dir.join(format!("allocations_{stem}.csv")),
        mac: cfg.log.mac_csv.then(|| out_dir.join(format!("mac_{stem}.csv"))),
    };
    write(&paths.rounds, &log.rounds_csv())?;
    write(&paths.allocations, &log.allocations_csv())?;
    if let Some(mac) = &paths.mac {
        write(mac, &log.mac_csv())?;
    }
    Ok((log, paths))
}

/// Aggregate of one (policy, service) cell of the comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub policy: Policy,
    pub service_id: usize,
    pub n_seeds: usize,
    /// Mean successful clients per round, over seeds and rounds.
    pub mean_successful: f64,
    /// Mean last-round accuracy over seeds.
    pub mean_final_accuracy: f64,
}

/// Mean successful clients and final accuracy per service from one run.
fn per_service_stats(rounds: &[RoundRecord], service_id: usize) -> (f64, f64) {
    let rows: Vec<&RoundRecord> = rounds.iter().filter(|r| r.service_id == service_id).collect();
    let mean_successful =
        rows.iter().map(|r| r.successful as f64).sum::<f64>() / rows.len() as f64;
    let final_accuracy = rows.last().map(|r| r.accuracy).unwrap_or(0.0);
    (mean_successful, final_accuracy)
}

fn summarize(
    cfg: &SimConfig,
    policy: Policy,
    runs: &[MetricsLog],
) -> Vec<SummaryRow> {
    cfg.services
        .iter()
        .map(|svc| {
            let stats: Vec<(f64, f64)> = runs
                .iter()
                .map(|log| per_service_stats(&log.rounds, svc.id))
                .collect();
            SummaryRow {
                policy,
                service_id: svc.id,
                n_seeds: runs.len(),
                mean_successful: stats.iter().map(|s| s.0).sum::<f64>() / stats.len() as f64,
                mean_final_accuracy: stats.iter().map(|s| s.1).sum::<f64>() / stats.len() as f64,
            }
        })
        .collect()
}

/// Run every policy over `seeds` and emit the per-policy, per-service means
/// (the policy-comparison data table).
pub fn cmd_compare(
    cfg: &SimConfig,
    seeds: &[u64],
    out_dir: &Path,
) -> Result<Vec<SummaryRow>, HarnessError> {
    if seeds.is_empty() {
        return Err(HarnessError::BadRequest("compare needs at least one seed".into()));
    }
    let mut summary = Vec::new();
    for policy in Policy::ALL {
        let mut runs = Vec::new();
        for &seed in seeds {
            let (log, _) = cmd_run(cfg, policy, seed, out_dir)?;
            runs.push(log);
        }
        summary.extend(summarize(cfg, policy, &runs));
    }
    let mut csv = String::from("policy,service_id,n_seeds,mean_successful,mean_final_accuracy\n");
    for row in &summary {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            row.policy,
            row.service_id,
            row.n_seeds,
            fmt_f64(row.mean_successful),
            fmt_f64(row.mean_final_accuracy)
        ));
    }
    write(&out_dir.join("compare_summary.csv"), &csv)?;
    Ok(summary)
}

/// One cell of the weight-ablation sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub a2: f64,
    pub service_id: usize,
    pub n_seeds: usize,
    pub mean_successful: f64,
    pub mean_final_accuracy: f64,
}

/// Sweep the second service's latency weight (holding the first fixed),
/// running the elastic policy over `seeds` per value. Output rows are
/// ordered by ascending weight.
pub fn cmd_ablate_a2(
    cfg: &SimConfig,
    a2_values: &[f64],
    seeds: &[u64],
    out_dir: &Path,
) -> Result<Vec<AblationRow>, HarnessError> {
    if cfg.services.len() < 2 {
        return Err(HarnessError::BadRequest(
            "the weight ablation needs at least two services".into(),
        ));
    }
    if a2_values.is_empty() || seeds.is_empty() {
        return Err(HarnessError::BadRequest(
            "the weight ablation needs at least one weight and one seed".into(),
        ));
    }
    let mut values = a2_values.to_vec();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values.dedup();

    let mut rows = Vec::new();
    for &a2 in &values {
        let mut swept = cfg.clone();
        swept.services[1].weight = a2;
        let sub_dir = out_dir.join(format!("a2_{a2}"));
        let mut runs = Vec::new();
        for &seed in seeds {
            let (log, _) = cmd_run(&swept, Policy::Efl, seed, &sub_dir)?;
            runs.push(log);
        }
        for s in summarize(&swept, Policy::Efl, &runs) {
            rows.push(AblationRow {
                a2,
                service_id: s.service_id,
                n_seeds: s.n_seeds,
                mean_successful: s.mean_successful,
                mean_final_accuracy: s.mean_final_accuracy,
            });
        }
    }
    let mut csv = String::from("a2,service_id,n_seeds,mean_successful,mean_final_accuracy\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_f64(row.a2),
            row.service_id,
            row.n_seeds,
            fmt_f64(row.mean_successful),
            fmt_f64(row.mean_final_accuracy)
        ));
    }
    write(&out_dir.join("ablate_a2.csv"), &csv)?;
    Ok(rows)
}

/// Parse a rounds CSV back into records (used to cross-check that summaries
/// are recomputable from the per-run files).
pub fn read_rounds_csv(path: &Path) -> Result<Vec<(Policy, u64, RoundRecord)>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line.starts_with("policy,") || line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let parse_err = || HarnessError::BadRequest(format!("malformed CSV row: {line}"));
        if f.len() != 11 {
            return Err(parse_err());
        }
        let policy = Policy::parse(f[0]).ok_or_else(parse_err)?;
        out.push((
            policy,
            f[1].parse().map_err(|_| parse_err())?,
            RoundRecord {
                service_id: f[2].parse().map_err(|_| parse_err())?,
                round: f[3].parse().map_err(|_| parse_err())?,
                successful: f[4].parse().map_err(|_| parse_err())?,
                failed: f[5].parse().map_err(|_| parse_err())?,
                accuracy: f[6].parse().map_err(|_| parse_err())?,
                round_start_s: f[7].parse().map_err(|_| parse_err())?,
                round_end_s: f[8].parse().map_err(|_| parse_err())?,
                mean_alloc_hz: f[9].parse().map_err(|_| parse_err())?,
                handovers: f[10].parse().map_err(|_| parse_err())?,
            },
        ));
    }
    Ok(out)
}
