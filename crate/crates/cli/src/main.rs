//! `airway-refine`: synthesize, corrupt, train, refine, evaluate and report.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod failure;
mod manifest;
mod svg;
mod table;

use failure::{classify, render, Kind};

#[derive(Debug, Parser)]
#[command(name = "airway-refine", version, about = "Adversarial refinement of tubular segmentations on synthetic airway trees")]
struct Cli {
    /// Where to write the run manifest (defaults next to the command's output).
    #[arg(long, global = true, value_name = "PATH")]
    manifest: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic airway trees with CT-like images.
    Synth(commands::synth::SynthArgs),
    /// Derive preliminary masks by breaking and pruning ground truth.
    Corrupt(commands::corrupt::CorruptArgs),
    /// Train the refinement GAN on a corrupted dataset.
    Train(commands::train::TrainArgs),
    /// Refine preliminary masks with a trained generator.
    Refine(commands::refine::RefineArgs),
    /// Score predictions against ground truth.
    Eval(commands::eval::EvalArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(commands::gradcheck::GradcheckArgs),
    /// Train and score the loss/discriminator ablation presets.
    Ablate(commands::ablate::AblateArgs),
    /// Render tables and SVG plots from eval and train outputs.
    Report(commands::report::ReportArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.kind().to_string();
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or(&text).trim_start_matches("error: ");
            eprintln!("{}", render(Kind::Usage, first));
            return ExitCode::from(Kind::Usage.code() as u8);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth::run(a, cli.manifest),
        Command::Corrupt(a) => commands::corrupt::run(a, cli.manifest),
        Command::Train(a) => commands::train::run(a, cli.manifest),
        Command::Refine(a) => commands::refine::run(a, cli.manifest),
        Command::Eval(a) => commands::eval::run(a, cli.manifest),
        Command::Gradcheck(a) => commands::gradcheck::run(a, cli.manifest),
        Command::Ablate(a) => commands::ablate::run(a, cli.manifest),
        Command::Report(a) => commands::report::run(a, cli.manifest),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = classify(&e);
            eprintln!("{}", render(kind, &format!("{e:#}")));
            ExitCode::from(kind.code() as u8)
        }
    }
}
