//! `heston`: pricing, reduced-basis construction, de-Americanization and
//! calibration from a TOML run configuration.

mod commands;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use heston_calib::calibration::BackendKind;

#[derive(Debug, Parser)]
#[command(name = "heston", version, about = "Heston model pricing and calibration")]
struct Cli {
    /// Run configuration (TOML); defaults apply to anything left out.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured backend.
    #[arg(short, long, global = true)]
    backend: Option<BackendKind>,
    /// Override the output directory.
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
    /// Override the reduced-model container path.
    #[arg(short, long, global = true)]
    model: Option<PathBuf>,
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Mesh and discretization sizes.
    MeshInfo,
    /// Price one put with the configured backend.
    Price {
        /// Calibration parameters xi,rho,gamma,kappa,nu0.
        #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
        theta: Vec<f64>,
        #[arg(long)]
        maturity: f64,
        #[arg(long)]
        strike: f64,
    },
    /// Build a reduced model on the training grid and write its container.
    BuildBasis {
        /// Option style of the basis; defaults to the backend's.
        #[arg(long)]
        style: Option<heston_calib::Style>,
    },
    /// Convert the configured American quotes into pseudo-European ones.
    Deamericanize,
    /// Price the synthetic quote ladder at `data.theta`.
    Synth,
    /// Calibrate to the configured quotes and write the report files.
    Calibrate,
    /// Rewrite summary and residual table from a stored `report.toml`.
    Report {
        /// Directory holding `report.toml`; the output directory by default.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let cfg = commands::resolve_config(cli.config.as_deref(), cli.backend, cli.output, cli.model)?;
    match cli.command {
        Command::MeshInfo => commands::mesh_info(&cfg),
        Command::Price { theta, maturity, strike } => commands::price(&cfg, &theta, maturity, strike),
        Command::BuildBasis { style } => commands::build_basis(&cfg, style),
        Command::Deamericanize => commands::deamericanize(&cfg),
        Command::Synth => commands::synth(&cfg),
        Command::Calibrate => commands::calibrate(&cfg),
        Command::Report { input } => commands::report(&cfg, input),
    }
}
