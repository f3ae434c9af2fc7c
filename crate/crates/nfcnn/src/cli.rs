//! Command-line definitions and dispatch.

use std::ffi::OsString;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands;

/// Exit status of a successful command.
pub const EXIT_OK: u8 = 0;
/// Exit status for invalid flags or arguments.
pub const EXIT_USAGE: u8 = 1;
/// Exit status for runtime failures, including divergence and failed checks.
pub const EXIT_RUNTIME: u8 = 2;

/// An invalid combination of otherwise well-formed arguments.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Debug, Parser)]
#[command(name = "nfcnn", version, about = "Noise-fusion CNN image denoiser")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a directory of clean images.
    Train(commands::train::TrainArgs),
    /// Denoise one image with a trained checkpoint.
    Denoise(commands::denoise::DenoiseArgs),
    /// Synthesize noisy copies of a dataset, denoise them and report PSNR.
    Eval(commands::eval::EvalArgs),
    /// Add Gaussian noise to one image.
    Synth(commands::synth::SynthArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(commands::gradcheck::GradcheckArgs),
    /// Toy-scale comparison of the model with and without fusion blocks.
    Ablate(commands::ablate::AblateArgs),
}

/// Parses `args` (including the program name), runs the command and maps
/// the outcome to an exit status.
pub fn run<I, A>(args: I) -> ExitCode
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train::run(&a),
        Command::Denoise(a) => commands::denoise::run(&a),
        Command::Eval(a) => commands::eval::run(&a),
        Command::Synth(a) => commands::synth::run(&a),
        Command::Gradcheck(a) => commands::gradcheck::run(&a),
        Command::Ablate(a) => commands::ablate::run(&a),
    };
    match result {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.is::<UsageError>() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::from(EXIT_RUNTIME)
            }
        }
    }
}
