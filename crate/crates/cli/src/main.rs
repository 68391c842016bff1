use std::path::PathBuf;
use std::process::ExitCode;

use augeig_cli::config::KEYS;
use augeig_cli::experiment::{fmt_f64, EXIT_CONFIG, SCHEMAS};
use augeig_cli::{apply_quick, parse_config, run_experiment, ExperimentSpec};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "augeig", version, about = "Eigenwise parallel augmented subspace eigensolver", after_long_help = SCHEMAS)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its reports.
    #[command(after_long_help = SCHEMAS)]
    Run {
        /// Experiment file of `key = value` lines (see `augeig keys`).
        #[arg(long, required_unless_present = "quick")]
        config: Option<PathBuf>,
        /// Output directory, overriding the file's `output`.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Worker threads, overriding the file's `workers`.
        #[arg(long)]
        workers: Option<usize>,
        /// Small laplace2d preset (4 divisions, 4 levels, 10 eigenpairs).
        #[arg(long)]
        quick: bool,
    },
    /// Validate an experiment file without running it.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
    /// List the keys accepted in experiment files.
    Keys,
}

fn load(path: &std::path::Path) -> Result<ExperimentSpec, (i32, String)> {
    let text = std::fs::read_to_string(path).map_err(|e| (EXIT_CONFIG, format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| (EXIT_CONFIG, format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), (i32, String)> {
    match cli.command {
        Command::Keys => {
            for (k, help) in KEYS {
                println!("{k:<20} {help}");
            }
            Ok(())
        }
        Command::Check { config } => {
            let spec = load(&config)?;
            println!(
                "{}: ok ({}, {} levels, {} eigenpairs)",
                config.display(),
                spec.solver.problem,
                spec.solver.levels,
                spec.solver.eigenpairs
            );
            Ok(())
        }
        Command::Run {
            config,
            output,
            workers,
            quick,
        } => {
            let mut spec = match &config {
                Some(path) => load(path)?,
                None => parse_config("").map_err(|e| (EXIT_CONFIG, e.to_string()))?,
            };
            if quick {
                apply_quick(&mut spec);
            }
            if let Some(dir) = output {
                spec.output = dir;
            }
            if workers.is_some() {
                spec.solver.workers = workers;
            }
            let outcome = run_experiment(&spec).map_err(|e| (e.exit_code(), e.to_string()))?;
            for r in &outcome.runs {
                println!(
                    "levels {} steps {}: {} DOFs, {:.3} s, orthogonality {}",
                    r.levels,
                    r.finest_corrections,
                    r.report.finest_dofs,
                    r.report.wall_seconds,
                    fmt_f64(r.report.orthogonality)
                );
                for (i, p) in r.report.pairs.iter().enumerate() {
                    let reference = r.reference.as_ref().and_then(|v| v.get(i));
                    match reference {
                        Some(x) => println!("  {i:>3}  {:<24} ref {}", fmt_f64(p.eigenvalue), fmt_f64(*x)),
                        None => println!("  {i:>3}  {}", fmt_f64(p.eigenvalue)),
                    }
                }
            }
            println!("wrote {} files to {}", outcome.files.len(), spec.output.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code as u8)
        }
    }
}
