//! Command-line front end: run an experiment from a TOML config, regenerate
//! derived tables from a finished run directory, or just validate a config.
//!
//! Exit codes: 0 on success, 1 on any error, 2 when the run succeeded but
//! the completeness gate excluded at least one table cell.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cfbench::harness::{emit_tables, read_run_dir, run_experiment, ExperimentConfig, TableInputs};

#[derive(Parser)]
#[command(name = "cfbench", version, about = "Counterfactual robustness benchmark")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment described by a TOML config file.
    Run {
        /// Path to the experiment config.
        config: PathBuf,
        /// Run directory for artifacts. Defaults to
        /// `<output_dir>/<name>_seed<seed>` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regenerate the derived tables of a finished run directory.
    Tables {
        /// A directory containing manifest.json, records.csv, accuracy.csv.
        run_dir: PathBuf,
    },
    /// Parse and validate a config without running anything.
    Validate {
        /// Path to the experiment config.
        config: PathBuf,
    },
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let cfg = ExperimentConfig::from_toml(&text).map_err(|e| e.to_string())?;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

/// Honor `CFBENCH_WORKERS` for the rayon pool size; default to all cores.
fn configure_workers() -> Result<(), String> {
    let Ok(raw) = std::env::var("CFBENCH_WORKERS") else { return Ok(()) };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| format!("CFBENCH_WORKERS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("cannot size the worker pool: {e}"))
}

fn real_main() -> Result<ExitCode, String> {
    configure_workers()?;
    match Cli::parse().cmd {
        Cmd::Run { config, out } => {
            let cfg = load_config(&config)?;
            let out_dir = out.unwrap_or_else(|| {
                cfg.experiment
                    .output_dir
                    .join(format!("{}_seed{}", cfg.experiment.name, cfg.experiment.seed))
            });
            let outcome = run_experiment(&cfg, &out_dir).map_err(|e| e.to_string())?;
            if outcome.manifest.exclusions.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(2))
            }
        }
        Cmd::Tables { run_dir } => {
            let (cfg, records, accuracy, completeness) =
                read_run_dir(&run_dir).map_err(|e| e.to_string())?;
            let inputs = TableInputs {
                config: &cfg,
                records: &records,
                accuracy: &accuracy,
                completeness: &completeness,
            };
            let report = emit_tables(&inputs, &run_dir).map_err(|e| e.to_string())?;
            println!("rewrote {} under {}", report.written.join(", "), run_dir.display());
            for w in &report.warnings {
                println!("warning: {w}");
            }
            if report.exclusions.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                println!(
                    "{} table cell(s) excluded by the completeness gate",
                    report.exclusions.len()
                );
                Ok(ExitCode::from(2))
            }
        }
        Cmd::Validate { config } => {
            let cfg = load_config(&config)?;
            println!(
                "config ok: {} ({} model(s), {} method(s), {} noise level(s))",
                cfg.experiment.name,
                cfg.models.len(),
                cfg.methods.len(),
                cfg.noise.n_levels
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
