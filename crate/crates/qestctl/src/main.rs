use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qestctl::{resolve_threads, run, Command, RunOptions};

#[derive(Parser)]
#[command(name = "qestctl", version, about = "Pulse design and Δ estimation for a driven, damped spin")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Trajectory with the requested information metrics.
    Simulate(Args),
    /// Run the scenario's optimizer request.
    Optimize(Args),
    /// Simulated measurements, MLE and bootstrap.
    Estimate(Args),
    /// Final Bloch vectors over a range of offsets.
    Sweep(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Replaces every seed in the scenario.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (QESTCTL_THREADS takes precedence).
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Sub::Simulate(a) => (Command::Simulate, a),
        Sub::Optimize(a) => (Command::Optimize, a),
        Sub::Estimate(a) => (Command::Estimate, a),
        Sub::Sweep(a) => (Command::Sweep, a),
    };
    let env = std::env::var("QESTCTL_THREADS").ok();
    let result = resolve_threads(args.threads, env.as_deref()).and_then(|threads| {
        run(command, &args.scenario, &args.out, &RunOptions { seed: args.seed, threads })
    });
    match result {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", f.display());
            }
            if outcome.boundary {
                eprintln!("warning: maximum likelihood estimate lies on the prior boundary");
                return ExitCode::from(4);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("qestctl: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
