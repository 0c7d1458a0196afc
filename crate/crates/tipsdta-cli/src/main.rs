//! Command-line interface: mixture separation, synthetic mixture simulation,
//! separation-quality evaluation, and cost-trace inspection.

mod commands;
mod config_file;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "tipsdta", version, about = "Blind source separation with a Student's t PSD tensor source model", max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Separate a multichannel mixture WAV into per-source WAVs.
    Separate(SeparateArgs),
    /// Mix source WAVs (or synthesized test sources) into a mixture WAV.
    Simulate(SimulateArgs),
    /// Score separated estimates against reference sources.
    Eval(EvalArgs),
    /// Summarize a cost trace CSV and check it for monotone descent.
    Trace(TraceArgs),
}

#[derive(Args)]
struct SeparateArgs {
    /// Input mixture WAV (at least two channels).
    mixture: std::path::PathBuf,
    /// Directory for source_N.wav, trace.csv, and model.json.
    #[arg(long, default_value = ".")]
    out_dir: std::path::PathBuf,
    /// Optional key = value config file; command-line flags override it.
    #[arg(long)]
    config: Option<std::path::PathBuf>,
    /// Degree-of-freedom parameter of the source prior ('inf' for Gaussian).
    #[arg(long)]
    nu: Option<String>,
    /// Bases per source.
    #[arg(long)]
    bases: Option<usize>,
    /// Outer iterations.
    #[arg(long)]
    iterations: Option<usize>,
    /// Demixing sweeps per outer iteration.
    #[arg(long)]
    vcd_sweeps: Option<usize>,
    /// Frequency block scheme: pairs, single, or uniform:N.
    #[arg(long)]
    blocks: Option<String>,
    /// Analysis window length in milliseconds.
    #[arg(long)]
    window_ms: Option<f64>,
    /// Analysis hop in milliseconds.
    #[arg(long)]
    hop_ms: Option<f64>,
    /// RNG seed for the model initialization.
    #[arg(long)]
    seed: Option<u64>,
    /// Relative ridge for covariance inversions.
    #[arg(long)]
    ridge: Option<f64>,
    /// Reference channel (1-based) the sources are re-imaged onto.
    #[arg(long)]
    ref_channel: Option<usize>,
    /// Record wall-clock timing in trace.csv (breaks byte-for-byte
    /// reproducibility of reruns).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Source WAVs to mix (equal length and sample rate).
    #[arg(long, num_args = 1.., conflicts_with = "synth")]
    sources: Vec<std::path::PathBuf>,
    /// Synthesize N test sources instead of reading files.
    #[arg(long)]
    synth: Option<usize>,
    /// Duration of synthesized sources in seconds.
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    /// Sample rate of synthesized sources.
    #[arg(long, default_value_t = 16000)]
    sample_rate: u32,
    /// Mixing mode: instantaneous or convolutive.
    #[arg(long, default_value = "instantaneous")]
    mode: String,
    /// RNG seed for mixing matrices and synthesis.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Condition-number bound for random mixing matrices.
    #[arg(long, default_value_t = 10.0)]
    cond_bound: f64,
    /// STFT window used for convolutive (per-bin) mixing, in milliseconds.
    #[arg(long, default_value_t = 64.0)]
    window_ms: f64,
    /// STFT hop for convolutive mixing, in milliseconds.
    #[arg(long, default_value_t = 32.0)]
    hop_ms: f64,
    /// Output mixture WAV.
    #[arg(long)]
    out: std::path::PathBuf,
    /// Ground-truth manifest path (JSON).
    #[arg(long)]
    manifest: Option<std::path::PathBuf>,
    /// Directory to write synthesized source WAVs into.
    #[arg(long)]
    write_sources: Option<std::path::PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Reference source WAVs.
    #[arg(long, num_args = 1..)]
    references: Vec<std::path::PathBuf>,
    /// Estimated source WAVs.
    #[arg(long, num_args = 1..)]
    estimates: Vec<std::path::PathBuf>,
    /// Mixture WAV providing the unseparated baseline.
    #[arg(long)]
    mixture: std::path::PathBuf,
    /// Channel of the mixture to score against (1-based).
    #[arg(long, default_value_t = 1)]
    mixture_channel: usize,
    /// Trial label for the CSV output.
    #[arg(long, default_value_t = 0)]
    trial: usize,
    /// Write the metrics CSV here instead of stdout.
    #[arg(long)]
    out: Option<std::path::PathBuf>,
}

#[derive(Args)]
struct TraceArgs {
    /// Cost trace CSV produced by `separate`.
    trace: std::path::PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Separate(args) => commands::separate(args),
        Command::Simulate(args) => commands::simulate(args),
        Command::Eval(args) => commands::eval(args),
        Command::Trace(args) => commands::trace(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// One diagnostic line per failure class; usage and input problems exit 2,
/// runtime failures exit 1.
pub struct CliError {
    message: String,
    usage: bool,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            usage: true,
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            usage: false,
        }
    }

    fn exit_code(&self) -> u8 {
        if self.usage {
            2
        } else {
            1
        }
    }

    pub fn prefixed(mut self, prefix: &str) -> Self {
        self.message = format!("{prefix}: {}", self.message);
        self
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<tipsdta::Error> for CliError {
    fn from(e: tipsdta::Error) -> Self {
        use tipsdta::Error::*;
        match &e {
            Wav(_) | Io(_) | UnsupportedFormat(_) | InvalidConfig(_) | InputTooShort { .. } => {
                CliError::usage(e.to_string())
            }
            _ => CliError::runtime(e.to_string()),
        }
    }
}
