//! `bopo`: train preference-optimised construction policies, evaluate them
//! on benchmarks, run dispatching rules and reference solvers, sweep
//! ablation grids and plot training curves.

mod bench;
mod evaluate;
mod options;
mod plot;
mod sweep;
mod table;
mod train;

use std::fs;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

/// Flag combination the command cannot honour; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

#[derive(Parser)]
#[command(name = "bopo", version, about = "Best-anchored preference optimisation for combinatorial problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write checkpoint, curve and manifest into a directory.
    Train(train::TrainArgs),
    /// Evaluate a checkpoint or a dispatching rule on benchmark instances.
    Eval(evaluate::EvalArgs),
    /// Tabulate every dispatching rule on scheduling instances.
    Pdr(evaluate::PdrArgs),
    /// Emit a reference table of exact or heuristic objectives.
    Oracle(evaluate::OracleArgs),
    /// Write random instances as benchmark files.
    Generate(bench::GenerateArgs),
    /// Train every cell of a hyperparameter grid under one instance budget.
    Sweep(sweep::SweepArgs),
    /// Render training curves as SVG.
    Plot(plot::PlotArgs),
}

/// Writes to `path`, or to stdout when no path is given.
pub fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => train::run(a),
        Command::Eval(a) => evaluate::run_eval(a),
        Command::Pdr(a) => evaluate::run_pdr(a),
        Command::Oracle(a) => evaluate::run_oracle(a),
        Command::Generate(a) => bench::run_generate(a),
        Command::Sweep(a) => sweep::run(a),
        Command::Plot(a) => plot::run(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("usage error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
