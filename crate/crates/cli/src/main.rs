//! `hallucinate`: command-line harness for SAM hallucination experiments.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::commands::Output;
use crate::config::ExperimentConfig;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "hallucinate", version, about = "SAM hallucinated-minimizer experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for grid and sweep parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Run GD, SAM or the switching schedule and classify the terminal point.
    Run,
    /// Sample f, f^SAM and the shifted gradient field on a 2D grid.
    Field,
    /// Sweep over rho, seeds and modes.
    Sweep,
    /// Construct a hallucinated minimizer from a superlevel component.
    Construct,
    /// Trace the manifold of hallucinated minimizers along a curve of minimizers.
    Continue,
    /// Evaluate f and f^SAM on a 2D plane through a point.
    Slice,
    /// Train the MLP classifier and report the terminal point.
    TrainMlp,
}

fn execute(cli: &Cli, out_dir: &mut Option<PathBuf>) -> Result<(), CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let cfg = ExperimentConfig::load(path)?;
    let dir = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| CliError::Config("no output directory (--out or `output_dir`)".into()))?;
    let out = Output::create(&dir)?;
    *out_dir = Some(dir);
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Run => commands::run(&cfg, &out),
        Command::Field => commands::field(&cfg, &out),
        Command::Sweep => commands::sweep(&cfg, &out),
        Command::Construct => commands::construct(&cfg, &out),
        Command::Continue => commands::continuation(&cfg, &out),
        Command::Slice => commands::slice(&cfg, &out),
        Command::TrainMlp => commands::train_mlp(&cfg, &out),
    }
}

fn write_failure(dir: &std::path::Path, err: &CliError) {
    let mut report = json!({ "error": err.to_string() });
    if let CliError::Core(hallucinate::Error::Diverged { step, last_finite }) = err {
        report["step"] = json!(step);
        report["last_finite"] = json!(last_finite.iter().collect::<Vec<_>>());
    }
    let path = dir.join("failure.json");
    let written = hallucinate::export::write_atomic(&path, |w| {
        serde_json::to_writer_pretty(&mut *w, &report)?;
        writeln!(w)
    });
    if let Err(e) = written {
        eprintln!("could not write {}: {e}", path.display());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut out_dir = None;
    match execute(&cli, &mut out_dir) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let code = err.exit_code();
            if code == 1 {
                if let Some(dir) = &out_dir {
                    write_failure(dir, &err);
                }
            }
            ExitCode::from(code)
        }
    }
}
