use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use histocad_core::PredictionLog;
use histocad_metriq::{build_report, write_report, BootstrapConfig, Level};

#[derive(Parser)]
#[command(name = "metriq", about = "Metrics and calibration reports for prediction logs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Writes report.json and per_class.csv for a prediction log.
    Report {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value = "tile")]
        level: Level,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        resamples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> Result<()> {
    env_logger::init();
    match Cli::parse().command {
        Command::Report { log, level, out, resamples, seed } => {
            let pl = PredictionLog::load(&log).with_context(|| format!("reading {}", log.display()))?;
            let boot = BootstrapConfig { n_resamples: resamples, seed, ..BootstrapConfig::default() };
            let report = build_report(&pl, level, &boot)?;
            let (json, csv) = write_report(&report, &out)?;
            let m = &report.metrics;
            println!(
                "{:?}: accuracy {:.4} sensitivity {:.4} specificity {:.4} f1 {:.4} ({} units)",
                report.level, m.accuracy, m.sensitivity, m.specificity, m.f1, m.total
            );
            println!("wrote {} and {}", json.display(), csv.display());
        }
    }
    Ok(())
}
