use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ergosde_cli::{run, Command, Format, RunConfig};

/// Exit codes: 0 pass, 1 fail, 2 inconclusive, 3 usage or configuration error.
#[derive(Parser)]
#[command(name = "ergosde", version, about = "Long-time simulation and ergodic error experiments for SDEs")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed; TOML integers cap it at 2^63 − 1.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(..=i64::MAX as u64))]
    seed: Option<u64>,
    /// Worker threads (default: number of cores). Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory (default `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Sample the monotonicity, coercivity and growth conditions.
    CheckAssumptions,
    /// Long-run time average of φ plus a thinned trace.
    Simulate,
    /// Ergodic error over the τ grid and the fitted order.
    Converge,
    /// Both sides of the ergodic error representation.
    SteinVerify,
    /// Divergence of a reference scheme against modified schemes.
    BlowupDemo,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::CheckAssumptions => Command::CheckAssumptions,
            Cmd::Simulate => Command::Simulate,
            Cmd::Converge => Command::Converge,
            Cmd::SteinVerify => Command::SteinVerify,
            Cmd::BlowupDemo => Command::BlowupDemo,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 3 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}

fn execute(cli: Cli) -> ergosde_cli::Result<u8> {
    let base = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cfg = base.resolved(cli.seed, cli.out, cli.format);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.workers.unwrap_or(0)).build()?;
    let command = Command::from(cli.command);
    let outcome = pool.install(|| run(command, &cfg))?;
    println!("{} {}: {}", command.name(), outcome.verdict, outcome.summary);
    for f in &outcome.files {
        println!("  wrote {}", f.display());
    }
    Ok(outcome.verdict.exit_code() as u8)
}
