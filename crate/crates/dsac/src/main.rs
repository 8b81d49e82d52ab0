//! Binary entry point: dispatches the parsed command and maps every error
//! path to a nonzero exit status.

use std::process::ExitCode;

use clap::Parser;
use dsac::cli::{self, Cli, Command};

fn run(cli: &Cli) -> dsac::error::Result<bool> {
    match &cli.command {
        Command::Train(args) => {
            let outcome = cli::cmd_train(args)?;
            println!("config {} -> {}", outcome.config_hash, outcome.config_path.display());
            for (seed, report) in &outcome.reports {
                for w in &report.warnings {
                    eprintln!("warning: seed {seed}: {w}");
                }
                println!(
                    "seed {seed}: {} steps, {} metric rows, final eval mean {} (std {}), \
                     failure rate {} -> {}",
                    report.steps,
                    report.metrics_rows,
                    report.final_eval.mean,
                    report.final_eval.std,
                    report.final_eval.failure_rate,
                    report.metrics_path.display()
                );
            }
            Ok(true)
        }
        Command::Evaluate(args) => {
            let outcome = cli::cmd_evaluate(args)?;
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            if outcome.summary.empty {
                println!("empty summary -> {}", outcome.summary_path.display());
            } else {
                println!(
                    "{} episodes: mean {} (std {}), failure rate {}, risk value {} -> {}",
                    outcome.summary.episodes,
                    outcome.summary.mean,
                    outcome.summary.std,
                    outcome.summary.failure_rate,
                    outcome.summary.risk_value,
                    outcome.summary_path.display()
                );
            }
            Ok(true)
        }
        Command::Verify(args) => {
            let outcome = cli::cmd_verify(args)?;
            let report = std::fs::read_to_string(&outcome.report_path)?;
            print!("{report}");
            if !outcome.all_passed {
                eprintln!("error: verification failed; see {}", outcome.report_path.display());
            }
            Ok(outcome.all_passed)
        }
        Command::PlotData(args) => {
            let outcome = cli::cmd_plot_data(args)?;
            println!(
                "aggregated {} seeds over {} steps -> {}",
                outcome.seeds,
                outcome.rows,
                outcome.data_path.display()
            );
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
