//! Command-line front end of the simulator.
//!
//! ```text
//! passlab <simulate|dataset|train|eval|outage|sweep> --config PATH --out DIR
//!         [--seed U64] [--mode oracle|trained|random]
//! ```
//!
//! Exit status: 0 ok, 1 usage, 2 config, 3 runtime, 4 property violation.

use std::path::PathBuf;

use clap::{Parser, ValueEnum};

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use config::ScenarioConfig;
pub use error::CliError;
pub use output::RunManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Simulate,
    Dataset,
    Train,
    Eval,
    Outage,
    Sweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Mode {
    #[default]
    Oracle,
    Trained,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Snr,
    SinrMin,
    Power,
    #[value(name = "L")]
    Pas,
    GridResolution,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Snr => "snr",
            Axis::SinrMin => "sinr-min",
            Axis::Power => "power",
            Axis::Pas => "L",
            Axis::GridResolution => "grid-resolution",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "passlab", version, about = "Pinching-antenna beam-training simulator")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Mode::Oracle)]
    pub mode: Mode,
    /// Trained parameters for `--mode trained`.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Dataset file for `train` and `eval`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Number of samples for `dataset`.
    #[arg(long)]
    pub count: Option<usize>,
    /// Sweep axis for `sweep`.
    #[arg(long, value_enum)]
    pub axis: Option<Axis>,
}

pub fn run(cli: &Cli) -> Result<RunManifest, CliError> {
    let cfg = ScenarioConfig::load(&cli.config)?;
    commands::dispatch(cli, cfg)
}
