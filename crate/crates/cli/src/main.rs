//! `eflsim`: run and compare multi-service FL-over-RAN simulations.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use eflsim_core::rng::{stream, StreamId};
use eflsim_core::{
    cmd_ablate_a2, cmd_compare, cmd_run, config_reference, parse_config, Policy, SimConfig,
};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "eflsim", version, about = "Simulate concurrent FL services over a sliced RAN")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its metrics CSVs.
    Run {
        /// Config file (TOML); omitted = the shipped case-study scenario.
        #[arg(long)]
        config: Option<PathBuf>,
        /// efl | baseline1 | baseline2
        #[arg(long, default_value = "efl")]
        policy: String,
        /// Run seed; omitted = the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run all three policies over a seed set; write per-run CSVs and the
    /// comparison summary.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed set: "A..B" (inclusive) or a comma list.
        #[arg(long, default_value = "0..4")]
        seeds: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Sweep the second service's latency weight under the elastic policy.
    AblateA2 {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma list of weights.
        #[arg(long, default_value = "10,30,100,300")]
        a2_values: String,
        #[arg(long, default_value = "0..2")]
        seeds: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Generate a synthetic blob dataset as an IDX image/label file pair.
    GenSynth {
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 960)]
        per_class: usize,
        #[arg(long, default_value_t = 196)]
        features: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Print the full config schema with shipped defaults.
    PrintConfigReference,
}

fn load_config(path: &Option<PathBuf>) -> Result<SimConfig> {
    match path {
        Some(p) => Ok(parse_config(p)?),
        None => Ok(SimConfig::case_study()),
    }
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let spec = spec.trim();
    if let Some((a, b)) = spec.split_once("..") {
        let lo: u64 = a.trim().parse().context("bad seed range start")?;
        let hi: u64 = b.trim().parse().context("bad seed range end")?;
        if hi < lo {
            bail!("empty seed range {spec}");
        }
        return Ok((lo..=hi).collect());
    }
    spec.split(',')
        .map(|s| s.trim().parse::<u64>().map_err(|e| anyhow!("bad seed {s:?}: {e}")))
        .collect()
}

fn parse_values(spec: &str) -> Result<Vec<f64>> {
    spec.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| anyhow!("bad value {s:?}: {e}")))
        .collect()
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            policy,
            seed,
            out,
        } => {
            let cfg = load_config(&config)?;
            let policy = Policy::parse(&policy)
                .ok_or_else(|| anyhow!("unknown policy {policy:?}; use efl|baseline1|baseline2"))?;
            let seed = seed.unwrap_or(cfg.seed);
            let (log, paths) = cmd_run(&cfg, policy, seed, &out)?;
            let successful: usize = log.rounds.iter().map(|r| r.successful).sum();
            let failed: usize = log.rounds.iter().map(|r| r.failed).sum();
            println!(
                "{} seed {}: {} rounds, {} successful / {} failed uploads",
                policy.name(),
                seed,
                log.rounds.len(),
                successful,
                failed
            );
            println!("wrote {}", paths.rounds.display());
            println!("wrote {}", paths.allocations.display());
            if let Some(mac) = paths.mac {
                println!("wrote {}", mac.display());
            }
        }
        Command::Compare { config, seeds, out } => {
            let cfg = load_config(&config)?;
            let seeds = parse_seeds(&seeds)?;
            let summary = cmd_compare(&cfg, &seeds, &out)?;
            println!("policy      service  mean_successful  final_accuracy");
            for row in &summary {
                println!(
                    "{:<11} {:<8} {:>15.3} {:>15.3}",
                    row.policy.name(),
                    row.service_id,
                    row.mean_successful,
                    row.mean_final_accuracy
                );
            }
            println!("wrote {}", out.join("compare_summary.csv").display());
        }
        Command::AblateA2 {
            config,
            a2_values,
            seeds,
            out,
        } => {
            let cfg = load_config(&config)?;
            let values = parse_values(&a2_values)?;
            let seeds = parse_seeds(&seeds)?;
            let rows = cmd_ablate_a2(&cfg, &values, &seeds, &out)?;
            println!("a2      service  mean_successful  final_accuracy");
            for row in &rows {
                println!(
                    "{:<7} {:<8} {:>15.3} {:>15.3}",
                    row.a2, row.service_id, row.mean_successful, row.mean_final_accuracy
                );
            }
            println!("wrote {}", out.join("ablate_a2.csv").display());
        }
        Command::GenSynth {
            classes,
            per_class,
            features,
            seed,
            out,
        } => {
            let mut rng = stream(seed, StreamId::DatasetGen { service: 0 });
            let ds = eflsim_core::fl::synth_dataset(classes, per_class, features, &mut rng)?;
            std::fs::create_dir_all(&out)?;
            let images = out.join("synth-images.idx");
            let labels = out.join("synth-labels.idx");
            eflsim_core::fl::write_idx(&ds, &images, &labels)?;
            println!(
                "wrote {} and {} ({} samples, {} classes, {} features)",
                images.display(),
                labels.display(),
                ds.len(),
                classes,
                features
            );
        }
        Command::PrintConfigReference => {
            print!("{}", config_reference());
        }
    }
    Ok(())
}
