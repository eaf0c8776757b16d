//! Command-line front end: `verify`, `train`, `kernel` and `experiment`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use dualview::io::{
    cmd_experiment, cmd_kernel, cmd_train, cmd_verify, ExperimentConfig, ExperimentName,
    ExperimentRecords,
};
use dualview::{Error, Result};

const EXIT_FAILED_CHECK: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "dualview",
    version,
    about = "Path-space laboratory for gated ReLU networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration file; omitted fields take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Dotted `key=value` override, e.g. `train.epochs=10`. Repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the invariant suite and write verify.json; exit 1 on any failed check.
    Verify,
    /// Train one model and write train_report.json and params.json.
    Train,
    /// Write the Gram matrix of the configured kernel (gram.csv, gram.npkg).
    Kernel,
    /// Run an experiment bundle and write experiment.json plus a CSV.
    Experiment {
        /// permutation-sweep, constant-one or width-sweep (overrides the config).
        name: Option<String>,
    },
    /// Print the effective configuration as TOML.
    Config,
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("DUALVIEW_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::Config(format!(
            "DUALVIEW_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn effective_config(cli: &Cli) -> Result<ExperimentConfig> {
    let base = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let mut cfg = base.with_overrides(&cli.overrides)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Command::Experiment { name: Some(name) } = &cli.command {
        cfg.experiment.name =
            serde_json::from_value::<ExperimentName>(serde_json::Value::String(name.clone()))
                .map_err(|_| Error::Config(format!("unknown experiment {name:?}")))?;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<u8> {
    configure_threads()?;
    let cfg = effective_config(cli)?;
    info!("seed {} output {}", cfg.seed, cfg.out_dir.display());
    match cli.command {
        Command::Config => {
            print!("{}", cfg.to_toml()?);
            Ok(0)
        }
        Command::Verify => {
            let report = cmd_verify(&cfg)?;
            for c in &report.checks {
                let status = match (&c.skipped, c.passed) {
                    (Some(_), _) => "SKIP",
                    (None, true) => "PASS",
                    (None, false) => "FAIL",
                };
                println!(
                    "{status} {:<12} {:<52} {:<28} dev={:.3e} tol={:.1e}",
                    c.section, c.arch, c.name, c.max_deviation, c.tolerance
                );
            }
            println!("report: {}", cfg.out_dir.join("verify.json").display());
            Ok(if report.passed { 0 } else { EXIT_FAILED_CHECK })
        }
        Command::Train => {
            let out = cmd_train(&cfg)?;
            let r = &out.report;
            println!(
                "{} seed {}: loss {:.4} -> {:.4}, train accuracy {:.4}, test accuracy {}",
                r.regime.name(),
                r.seed,
                r.initial_loss,
                r.curves.loss.last().copied().unwrap_or(r.initial_loss),
                r.final_train_accuracy,
                r.final_test_accuracy
                    .map_or("n/a".to_string(), |a| format!("{a:.4}")),
            );
            println!(
                "report: {}",
                cfg.out_dir.join("train_report.json").display()
            );
            Ok(0)
        }
        Command::Kernel => {
            let g = cmd_kernel(&cfg)?;
            let psd = g.check_psd();
            println!(
                "{} Gram matrix, n = {}, fingerprint {}, min eigenvalue {:.3e} (floor {:.3e})",
                g.tag, g.n, g.fingerprint, psd.min_eigenvalue, psd.floor
            );
            println!("written to {}", cfg.out_dir.display());
            Ok(0)
        }
        Command::Experiment { .. } => {
            let report = cmd_experiment(&cfg)?;
            for s in &report.summary {
                println!(
                    "{:<24} runs {:>3}  mean {:.4}  stderr {:.4}",
                    s.group, s.runs, s.mean, s.std_error
                );
            }
            if let ExperimentRecords::Width(rows) = &report.records {
                for r in rows {
                    println!(
                        "width {:>5}  median_rel_dev {:.4}  stderr {:.4}  within 3 SE {:.2}",
                        r.width, r.median_rel_dev, r.stderr, r.within_fraction
                    );
                }
            }
            println!("report: {}", cfg.out_dir.join("experiment.json").display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
