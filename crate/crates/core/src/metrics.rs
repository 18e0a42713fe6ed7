//! Run metrics and their CSV serialization.
//!
//! Column orders are fixed and floating-point values are printed with 17
//! significant digits, so identical runs produce byte-identical files.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

/// Execution policy of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    Efl,
    Baseline1,
    Baseline2,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Efl, Policy::Baseline1, Policy::Baseline2];

    /// CLI / CSV token.
    pub fn token(&self) -> &'static str {
        match self {
            Policy::Efl => "efl",
            Policy::Baseline1 => "baseline1",
            Policy::Baseline2 => "baseline2",
        }
    }

    /// Header display name.
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Efl => "EFL",
            Policy::Baseline1 => "Baseline1",
            Policy::Baseline2 => "Baseline2",
        }
    }

    pub fn parse(s: &str) -> Option<Policy> {
        match s.to_ascii_lowercase().as_str() {
            "efl" => Some(Policy::Efl),
            "baseline1" => Some(Policy::Baseline1),
            "baseline2" => Some(Policy::Baseline2),
            _ => None,
        }
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

/// One per-(service, round) metrics row.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub service_id: usize,
    pub round: usize,
    pub successful: usize,
    pub failed: usize,
    pub accuracy: f64,
    pub round_start_s: f64,
    pub round_end_s: f64,
    /// Time-averaged bandwidth granted to the service's uploading clients, Hz.
    pub mean_alloc_hz: f64,
    pub handovers: usize,
}

/// One controller (or round-start snapshot) allocation decision.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocRecord {
    pub t: f64,
    pub oru: usize,
    pub service_id: usize,
    pub fraction: f64,
    pub bandwidth_hz: f64,
    /// Handovers of this service's clients decided in this window.
    pub handovers: usize,
}

/// One per-tick MAC grant (high volume; gated by `log.mac_csv`).
#[derive(Debug, Clone, PartialEq)]
pub struct MacRecord {
    pub t: f64,
    pub oru: usize,
    pub service_id: usize,
    pub client: usize,
    pub hz: f64,
}

/// Everything a single run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub policy: Policy,
    pub seed: u64,
    pub config_hash: String,
    pub rounds: Vec<RoundRecord>,
    pub allocations: Vec<AllocRecord>,
    pub mac_grants: Vec<MacRecord>,
}

/// 17 significant digits, locale-independent.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl MetricsLog {
    fn header_line(&self) -> String {
        format!(
            "# policy={} seed={} config_hash={}\n",
            self.policy.name(),
            self.seed,
            self.config_hash
        )
    }

    /// The round log: one row per (service, round).
    pub fn rounds_csv(&self) -> String {
        let mut out = self.header_line();
        out.push_str(
            "policy,seed,service_id,round,successful,failed,accuracy,round_start_s,round_end_s,mean_alloc_hz,handovers\n",
        );
        for r in &self.rounds {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                self.policy,
                self.seed,
                r.service_id,
                r.round,
                r.successful,
                r.failed,
                fmt_f64(r.accuracy),
                fmt_f64(r.round_start_s),
                fmt_f64(r.round_end_s),
                fmt_f64(r.mean_alloc_hz),
                r.handovers
            );
        }
        out
    }

    /// The slice-allocation log: one row per (decision instant, site, service).
    pub fn allocations_csv(&self) -> String {
        let mut out = self.header_line();
        out.push_str("t,oru,service,fraction,bandwidth_hz,handovers\n");
        for a in &self.allocations {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                fmt_f64(a.t),
                a.oru,
                a.service_id,
                fmt_f64(a.fraction),
                fmt_f64(a.bandwidth_hz),
                a.handovers
            );
        }
        out
    }

    /// The per-tick MAC grant log.
    pub fn mac_csv(&self) -> String {
        let mut out = self.header_line();
        out.push_str("t,oru,service,client,hz\n");
        for m in &self.mac_grants {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                fmt_f64(m.t),
                m.oru,
                m.service_id,
                m.client,
                fmt_f64(m.hz)
            );
        }
        out
    }
}

/// Write `content` to `path` atomically (temp file in the same directory,
/// then rename).
pub fn write_atomic(path: &Path, content: &str) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out")
    ));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(content.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting_is_17_digits_and_roundtrips() {
        for v in [0.1, 1.0 / 3.0, 1.5e6, f64::MIN_POSITIVE, 12345.6789] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
        assert_eq!(fmt_f64(0.5), "5.0000000000000000e-1");
    }

    #[test]
    fn csv_shape_and_header() {
        let log = MetricsLog {
            policy: Policy::Baseline2,
            seed: 3,
            config_hash: "abcd".into(),
            rounds: vec![RoundRecord {
                service_id: 1,
                round: 0,
                successful: 9,
                failed: 7,
                accuracy: 0.5,
                round_start_s: 60.0,
                round_end_s: 90.0,
                mean_alloc_hz: 1e5,
                handovers: 2,
            }],
            allocations: vec![],
            mac_grants: vec![],
        };
        let csv = log.rounds_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "# policy=Baseline2 seed=3 config_hash=abcd");
        assert!(lines.next().unwrap().starts_with("policy,seed,service_id"));
        let row = lines.next().unwrap();
        assert!(row.starts_with("baseline2,3,1,0,9,7,"));
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out.csv");
        write_atomic(&path, "a,b\n1,2\n").unwrap();
        write_atomic(&path, "a,b\n3,4\n").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "a,b\n3,4\n");
        // no stray temp files
        let leftovers: Vec<_> = std::fs::read_dir(path.parent().unwrap())
            .unwrap()
            .filter(|e| {
                e.as_ref()
                    .unwrap()
                    .file_name()
                    .to_string_lossy()
                    .ends_with(".tmp")
            })
            .collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn policy_tokens_roundtrip() {
        for p in Policy::ALL {
            assert_eq!(Policy::parse(p.token()), Some(p));
        }
        assert_eq!(Policy::parse("EFL"), Some(Policy::Efl));
        assert_eq!(Policy::parse("nope"), None);
    }
}
