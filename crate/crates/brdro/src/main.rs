//! Thin binary over [`brdro::cli::dispatch`]: clap argument parsing, error
//! printing, exit-code mapping. No logic lives here.

use brdro::cli::{dispatch, exit_code_for, Command, GlobalArgs};
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "brdro",
    about = "Robust-training toolkit: constrained-adversary DRO, baselines, \
             a group-shift benchmark and an online game solver",
    version
)]
struct Cli {
    /// Experiment config file (key = value sections; defaults when absent).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory (overrides the config's `out`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads for experiment cells (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Seed override applied to training, experiment seeds, and the game.
    #[arg(long, global = true, value_name = "S")]
    seed: Option<u64>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw the configured synthetic dataset and write dataset.csv.
    Generate,
    /// Train the configured methods across seeds; write per-cell reports
    /// and summary CSVs.
    Train,
    /// Train across a sweep axis (sweep_param x sweep_values x seeds x
    /// methods).
    Sweep,
    /// Play the finite-group CVaR game and check the convergence rate.
    Game,
    /// Finite-difference-check every registered gradient bundle.
    Gradcheck,
    /// Recompute summary_median.csv from an existing summary.csv.
    Report,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let args = GlobalArgs {
        config: cli.config,
        out: cli.out,
        jobs: cli.jobs,
        seed: cli.seed,
    };
    let cmd = match cli.cmd {
        Cmd::Generate => Command::Generate,
        Cmd::Train => Command::Train,
        Cmd::Sweep => Command::Sweep,
        Cmd::Game => Command::Game,
        Cmd::Gradcheck => Command::Gradcheck,
        Cmd::Report => Command::Report,
    };
    match dispatch(cmd, &args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(u8::try_from(exit_code_for(&e)).unwrap_or(1))
        }
    }
}
