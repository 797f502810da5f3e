//! The `soilwave` command line: one subcommand per pipeline stage.
//!
//! [`run`] holds the whole program so it can be driven in-process; the binary
//! only forwards the process arguments and standard streams.

use std::ffi::OsString;
use std::io::{Read, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod frame;
pub mod manifest;

pub use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "soilwave", version, about = "Soil humidity estimation from LoRa uplink signal strength")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Flags accepted by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON configuration file for the subcommand.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for every random draw; overrides the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file; standard output when omitted (no manifest is written then).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

/// Record input: CSV, newline-JSON or a binary store; `-` reads standard input.
#[derive(Debug, Clone, Args)]
pub struct Input {
    #[arg(long, short, value_name = "PATH")]
    pub input: String,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic uplinks from a seeded humidity trajectory.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Number of samples per gateway.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Convert CSV or newline-JSON uplinks into a binary store.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
    },
    /// Split each gateway's RSSI and SNR into trailing-mean and residual parts.
    Decompose {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
        /// Trailing window length in samples.
        #[arg(long)]
        window: Option<usize>,
    },
    /// Mean RSSI and SNR per humidity class.
    Aggregate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
        /// Gateway to aggregate; defaults to the one with the most records.
        #[arg(long)]
        gateway: Option<String>,
        #[arg(long)]
        low: Option<f64>,
        #[arg(long)]
        high: Option<f64>,
        #[arg(long)]
        width: Option<f64>,
    },
    /// Pearson correlation matrix of humidity and every gateway's signals.
    Correlate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
    },
    /// Build the normalized, chronologically split feature table.
    Dataset {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
        /// Append one-step lag features (the SVR input layout).
        #[arg(long)]
        lags: bool,
    },
    /// Train an ε-SVR, optionally after a grid search.
    TrainSvr {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        /// Run a grid search first (the configured grid, or the default one).
        #[arg(long)]
        grid: bool,
    },
    /// Train the stacked LSTM.
    TrainLstm {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Evaluate a stored model on the test split of a record set.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        /// Also dump `idx,prediction,target` rows here.
        #[arg(long, value_name = "PATH")]
        predictions: Option<PathBuf>,
    },
    /// Train and evaluate every point of an LSTM hyperparameter grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
        /// Worker threads for grid rows.
        #[arg(long)]
        jobs: Option<usize>,
        /// Multiply every grid epoch count by this factor.
        #[arg(long)]
        epoch_scale: Option<f64>,
        /// Record wall-clock seconds per row (output is then not reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Battery lifetime of a duty-cycled device.
    Lifetime {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        profile: Option<Profile>,
    },
    /// Plot-ready tables.
    PlotData {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
        #[arg(long, value_enum)]
        kind: PlotKind,
        /// Model for `--kind predictions`.
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    Sensor,
    Beacon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    /// Class means for every gateway.
    Classes,
    /// Predicted and true humidity in percent over the test split.
    Predictions,
    /// Aligned humidity and signal time series.
    Series,
}

/// Exit status of a run.
pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Parses `args` (program name first) and executes the subcommand.
pub fn run<I, T>(args: I, stdin: &mut dyn Read, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = sink.write_all(text.as_bytes());
            return code;
        }
    };
    match commands::execute(cli.command, stdin, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let line = format!("{e:#}").replace(['\n', '\r'], " ");
            let _ = writeln!(stderr, "error: {line}");
            if e.downcast_ref::<commands::UsageError>().is_some() {
                let _ = writeln!(stderr, "see `soilwave --help`");
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}
