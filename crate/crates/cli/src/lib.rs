//! The `ducdlc` command-line tool.
//!
//! Exit codes: 0 success, 2 usage error, 3 data or format error, 4 numerical
//! abort.

pub mod commands;
pub mod error;
pub mod io;
pub mod palette;

use std::ffi::OsString;
use std::io::Write;

use clap::{Parser, Subcommand};

pub use commands::*;
pub use error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "ducdlc", version, about = "Segmentation with guided upsampling and dense local context")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic shapes dataset.
    Gen(GenArgs),
    /// Train a model and write checkpoints plus an epoch log.
    Train(TrainArgs),
    /// Print segmentation metrics of a checkpoint as JSON.
    Eval(EvalArgs),
    /// Segment one image into a colorized and a raw index PNG.
    Infer(InferArgs),
    /// Enlarge an image with guided joint upsampling.
    GuidedUpsample(GuidedUpsampleArgs),
    /// Receptive fields of a stack of dilated convolutions.
    Rf(RfArgs),
}

pub fn dispatch(command: &Command, out: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Infer(a) => cmd_infer(a),
        Command::GuidedUpsample(a) => cmd_guided_upsample(a, out),
        Command::Rf(a) => cmd_rf(a, out),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                2
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    match dispatch(&cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
