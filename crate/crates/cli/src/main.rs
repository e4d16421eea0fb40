//! `meshgrow`: generate synthetic cohorts, train, predict, evaluate and run
//! the ablation grid.
//!
//! Exit codes: 0 on success, 2 for usage, configuration or contract errors,
//! 3 when training hits a NaN or infinity.

mod ablate;
mod config;
mod evaluate;
mod gen_data;
mod predict;
mod train;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "meshgrow",
    version,
    about = "Conditional growth prediction for tubular surface meshes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic longitudinal cohort on disk.
    GenData(gen_data::GenDataArgs),
    /// Train a model; writes checkpoints and a CSV log.
    Train(train::TrainArgs),
    /// Predict follow-up meshes for one source mesh.
    Predict(predict::PredictArgs),
    /// Score a checkpoint on one split of a dataset.
    Evaluate(evaluate::EvaluateArgs),
    /// Train and score the backbone × loss × adversary grid.
    Ablate(ablate::AblateArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data::run(a),
        Command::Train(a) => train::run(a),
        Command::Predict(a) => predict::run(a),
        Command::Evaluate(a) => evaluate::run(a),
        Command::Ablate(a) => ablate::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let numeric = e
        .chain()
        .filter_map(|c| c.downcast_ref::<meshgrow::Error>())
        .any(meshgrow::Error::is_numeric_fault);
    if numeric {
        3
    } else {
        2
    }
}
