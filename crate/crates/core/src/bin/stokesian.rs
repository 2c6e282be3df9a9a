use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stokesian::cli::{run, Command, Overrides};

#[derive(Parser)]
#[command(name = "stokesian", version, about = "Shape-driven locomotion on SE(2)")]
struct Args {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate the scenario's gait and write the trajectory.
    Simulate(Common),
    /// Sample the connection over a shape grid.
    Sweep(Common),
    /// Search the scenario's gait family for the largest displacement.
    Optimize(Common),
    /// Run invariant suites; exits with 1 if any fails.
    Verify(Common),
}

#[derive(clap::Args)]
struct Common {
    scenario: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    cycles: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let (command, common) = match args.command {
        Cmd::Simulate(c) => (Command::Simulate, c),
        Cmd::Sweep(c) => (Command::Sweep, c),
        Cmd::Optimize(c) => (Command::Optimize, c),
        Cmd::Verify(c) => (Command::Verify, c),
    };
    let overrides = Overrides {
        out: common.out,
        step: common.step,
        cycles: common.cycles,
        seed: common.seed,
    };
    match run(command, &common.scenario, &overrides) {
        Ok(outcome) => {
            for line in &outcome.report {
                println!("{line}");
            }
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
