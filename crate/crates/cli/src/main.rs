use std::process::ExitCode;

use clap::{Parser, Subcommand};

use foresight_cli::{commands, Failure};

/// Decision-prediction harness: synthetic data, segmentation, cross-validated
/// training, attention maps, perturbation sweeps, statistics and reports.
#[derive(Debug, Parser)]
#[command(name = "foresight", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Segment trial footage into the five pre-decision periods and write a manifest.
    Prepare(commands::PrepareArgs),
    /// Generate planted-signal synthetic trials.
    Synth(commands::SynthArgs),
    /// Cross-validated training; writes per-fold results and aggregates.
    Train(commands::TrainArgs),
    /// Re-score the saved fold models of a training run.
    Eval(commands::EvalArgs),
    /// Grad-CAM overlays for one segment.
    Explain(commands::ExplainArgs),
    /// Evaluate a training run under spatial and temporal perturbations.
    Perturb(commands::PerturbArgs),
    /// Mixed ANOVA and post-hoc comparisons on long-format accuracy tables.
    Stats(commands::StatsArgs),
    /// Plots and a markdown summary for a training run.
    Report(commands::ReportArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    let outcome = match cli.command {
        Command::Prepare(a) => commands::prepare(a),
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Explain(a) => commands::explain(a),
        Command::Perturb(a) => commands::perturb(a),
        Command::Stats(a) => commands::stats(a),
        Command::Report(a) => commands::report(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            let (kind, message, code) = match failure {
                Failure::Usage(m) => ("validation", m, 2),
                Failure::Runtime(e) => ("runtime", format!("{e:#}"), 1),
            };
            let report = serde_json::json!({ "status": "error", "command": name, "kind": kind, "message": message });
            eprintln!("{report}");
            ExitCode::from(code)
        }
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Prepare(_) => "prepare",
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Explain(_) => "explain",
            Command::Perturb(_) => "perturb",
            Command::Stats(_) => "stats",
            Command::Report(_) => "report",
        }
    }
}
