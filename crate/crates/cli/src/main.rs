//! Command-line entry point for the editing toolkit.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use saulkit::editkit::method_catalog;
use saulkit::runner::{cmd_edit, cmd_eval, cmd_report, selftest, RunnerError, TableFormat};

#[derive(Parser)]
#[command(
    name = "saulkit",
    version,
    about = "Mass model editing for autoregressive language models: fine-tuning with \
             sentence concatenation of augmented random facts, its ablation baselines, \
             and the full evaluation metric suite."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the edit pipeline from a config file; one run directory per method.
    #[command(after_help = "Layer indices in `editor.layers` are 0-based block \
        indices: `single:20` trains the block a 1-based convention calls the \
        21st layer, and `range:2-7` trains 1-based layers 3 through 8. The \
        default output root is $SAULKIT_OUT, then ./runs.")]
    Edit {
        /// Flat key-value config file.
        #[arg(long)]
        config: PathBuf,
        /// Output root for run directories.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a completed run directory and write per-case and aggregate reports.
    Eval {
        /// Run directory produced by `edit`.
        #[arg(long)]
        run: PathBuf,
    },
    /// Collect aggregate reports from run directories into one table.
    Report {
        /// Run directories to summarize, in row order.
        #[arg(long, num_args = 1..)]
        runs: Vec<PathBuf>,
        /// Table format: md or csv.
        #[arg(long, default_value = "md")]
        format: String,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the supported editing methods and their resource needs.
    Methods,
    /// Run the gradient finite-difference check and the metric oracles.
    Selftest,
}

fn run(cli: Cli) -> Result<(), RunnerError> {
    match cli.command {
        Command::Edit { config, out } => {
            let dirs = cmd_edit(&config, out.as_deref())?;
            for dir in dirs {
                println!("{}", dir.display());
            }
            Ok(())
        }
        Command::Eval { run } => {
            let report = cmd_eval(&run)?;
            println!(
                "{}: efficacy {:.1}, generality {}, locality {}, score {}, cases {}",
                report.run_ref,
                report.efficacy,
                opt(report.generality),
                opt(report.locality),
                opt(report.score),
                report.n_cases,
            );
            Ok(())
        }
        Command::Report { runs, format, out } => {
            let format = TableFormat::parse(&format)?;
            let table = cmd_report(&runs, format)?;
            match out {
                Some(path) => std::fs::write(&path, &table).map_err(|e| {
                    RunnerError::Config(format!("cannot write {}: {e}", path.display()))
                })?,
                None => print!("{table}"),
            }
            Ok(())
        }
        Command::Methods => {
            for info in method_catalog() {
                let mut needs = Vec::new();
                if info.needs_pool {
                    needs.push("random facts");
                }
                if info.needs_prefixes {
                    needs.push("paraphrase prefixes");
                }
                let needs = if needs.is_empty() {
                    "none".to_string()
                } else {
                    needs.join(", ")
                };
                println!(
                    "{:8}  {}  (requires: {})",
                    info.method.tag(),
                    info.description,
                    needs
                );
            }
            Ok(())
        }
        Command::Selftest => {
            for line in selftest()? {
                println!("ok: {line}");
            }
            Ok(())
        }
    }
}

fn opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.1}"),
        None => "-".to_string(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
