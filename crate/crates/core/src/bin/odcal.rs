use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use odcal::experiment::{cmd_calibrate, cmd_gen_gt, cmd_gen_network, cmd_report, ExperimentConfig};
use odcal::generator::GeneratorConfig;
use odcal::Result;

/// OD demand calibration from segment speeds.
#[derive(Parser)]
#[command(name = "odcal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed (for gen-network: the generator seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic network and write it to the configured network path.
    GenNetwork {
        #[command(flatten)]
        common: Common,
        /// Use the 62-OD, 186-route preset instead of the configured generator.
        #[arg(long)]
        large: bool,
        /// Write the network here instead of the configured network path.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Draw the ground-truth demand and simulate the ground-truth table.
    GenGt {
        #[command(flatten)]
        common: Common,
    },
    /// Run the configured calibrations.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Only this algorithm (metamodel or spsa).
        #[arg(long)]
        algorithm: Option<String>,
        /// Only this congestion threshold.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Evaluate calibrated demands and write the comparison table.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.master_seed = s;
    }
    if let Some(d) = &common.output_dir {
        cfg.output_dir = d.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenNetwork {
            common,
            large,
            output,
        } => {
            let cfg = load(&common)?;
            let mut gen = if large {
                GeneratorConfig {
                    seed: cfg.generator.seed,
                    ..GeneratorConfig::large()
                }
            } else {
                cfg.generator.clone()
            };
            if let Some(s) = common.seed {
                gen.seed = s;
            }
            let path = output.unwrap_or(cfg.network_path);
            let net = cmd_gen_network(&gen, &path)?;
            println!(
                "wrote {} ({} segments, {} OD pairs)",
                path.display(),
                net.n_segments(),
                net.n_od()
            );
        }
        Command::GenGt { common } => {
            let cfg = load(&common)?;
            let gt = cmd_gen_gt(&cfg)?;
            println!(
                "wrote {} ({} segments, {} replications)",
                cfg.ground_truth_path().display(),
                gt.len(),
                gt.n_replications
            );
        }
        Command::Calibrate {
            common,
            algorithm,
            threshold,
        } => {
            let cfg = load(&common)?;
            for out in cmd_calibrate(&cfg, algorithm.as_deref(), threshold)? {
                println!(
                    "{} t={} run {}: best loss {} after {} evaluations",
                    out.algorithm,
                    out.threshold,
                    out.run,
                    out.trace.best_loss,
                    out.trace.consumed()
                );
            }
        }
        Command::Report { common } => {
            let cfg = load(&common)?;
            cmd_report(&cfg)?;
            print!(
                "{}",
                std::fs::read_to_string(cfg.report_path()).map_err(|e| odcal::Error::Io {
                    path: cfg.report_path(),
                    source: e,
                })?
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("odcal: error: {e}");
            ExitCode::FAILURE
        }
    }
}
