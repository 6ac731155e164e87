//! `rsan` — generate synthetic benchmarks, train, evaluate, ablate, sweep and
//! export saliency maps. Every command reads a `key=value` config file and
//! writes a `.echo` of the resolved settings next to its outputs.
//!
//! Failures print one line to stderr:
//! `error kind=<kind> [offset=<n> expected="<..>"] message="<..>"`.

mod commands;
mod run_config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rsan::{Result, RsanError};

use commands::Ctx;
use run_config::RunConfig;

#[derive(Parser)]
#[command(name = "rsan", version, about = "Region-to-attribute saliency zero-shot learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (`key=value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed (`bench_seed` for generate, `seed` otherwise).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic benchmark: dataset.feat and words.txt.
    Generate(Common),
    /// Train a model; writes checkpoint.ckpt (best), last.ckpt and train_log.csv.
    Train(Common),
    /// Evaluate a checkpoint; appends a row to metrics.csv.
    Eval(Common),
    /// Train every ablation row; writes ablation.csv.
    Ablate(Common),
    /// One-axis sweep; writes sweep_<axis>.csv.
    Sweep(Common),
    /// Export saliency maps as CSV and PGM.
    Visualize(Common),
}

fn quote(s: &str) -> String {
    let escaped = s.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', "\\n");
    format!("\"{escaped}\"")
}

fn error_line(e: &RsanError) -> String {
    let mut line = format!("error kind={}", e.kind());
    if let RsanError::Format { offset, expected } = e {
        line.push_str(&format!(" offset={offset} expected={}", quote(expected)));
    }
    line.push_str(&format!(" message={}", quote(&e.to_string())));
    line
}

fn run(command: Command) -> Result<()> {
    let is_generate = matches!(command, Command::Generate(_));
    let (common, f): (Common, fn(&Ctx) -> Result<()>) = match command {
        Command::Generate(c) => (c, commands::generate_cmd),
        Command::Train(c) => (c, commands::train_cmd),
        Command::Eval(c) => (c, commands::eval_cmd),
        Command::Ablate(c) => (c, commands::ablate_cmd),
        Command::Sweep(c) => (c, commands::sweep_cmd),
        Command::Visualize(c) => (c, commands::visualize_cmd),
    };
    let mut rc = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        if is_generate {
            rc.bench.seed = seed;
        } else {
            rc.train.seed = seed;
        }
    }
    std::fs::create_dir_all(&common.out)?;
    f(&Ctx { rc, out: common.out })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error kind=usage message={}", quote(first));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
