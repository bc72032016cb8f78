//! `stegnet`: dataset preparation, training and inspection of the
//! steganalysis network.

mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{AblateArgs, DumpArgs, EmbedArgs, EvalArgs, GradcheckArgs, InferArgs, SynthArgs, TrainArgs};
use crate::error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "stegnet", version, about = "CNN steganalysis of ±1 embedding in grayscale images")]
struct Cli {
    /// Worker threads; 1 gives bitwise-reproducible runs.
    #[arg(long, global = true, env = "STEGNET_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate ±1 embedding on a directory of covers and write a manifest.
    Embed(EmbedArgs),
    /// Generate a synthetic textured cover/stego dataset.
    Synth(SynthArgs),
    /// Train from a `key = value` run configuration.
    Train(TrainArgs),
    /// Train the four activation x SRM-trainability variants and compare them.
    Ablate(AblateArgs),
    /// Print the error rate of a checkpoint on one manifest split.
    Eval(EvalArgs),
    /// Classify a single image.
    Infer(InferArgs),
    /// Compare analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Write the feature maps of one network stage as PGMs and raw f32.
    DumpFeatures(DumpArgs),
}

fn run(cli: Cli) -> CliResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure {n} threads: {e}")))?;
    }
    match &cli.command {
        Command::Embed(a) => commands::embed(a),
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Eval(a) => commands::eval(a),
        Command::Infer(a) => commands::infer(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::DumpFeatures(a) => commands::dump_features(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
