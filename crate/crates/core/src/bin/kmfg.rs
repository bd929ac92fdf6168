use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kinetic_mfg::cli_io::{self, RunConfig, RunSummary};
use kinetic_mfg::Error;

/// Kinetic mean field game solver and verification suite.
#[derive(Parser)]
#[command(name = "kmfg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve an instance and write convergence, fields and diagnostics.
    Solve(ConfigArgs),
    /// Recompute diagnostics from the fields stored in a run directory.
    Verify {
        /// Directory written by `solve`, `sweep` or `oracle`.
        run_dir: PathBuf,
    },
    /// Solve a tiny instance with the brute-force reference solver.
    Oracle(ConfigArgs),
    /// Solve, then evaluate the regularity, commutator and translation ladders.
    Sweep(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Configuration file; defaults apply to every key it omits.
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set grid.nx=8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn load(args: &ConfigArgs) -> Result<RunConfig, Error> {
    let text = match &args.config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?,
        None => String::new(),
    };
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    for o in &args.overrides {
        let (key, value) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{o}` is not KEY=VALUE")))?;
        let key = key.trim();
        // later settings replace earlier ones instead of tripping the duplicate check
        lines.retain(|l| l.split('#').next().and_then(|c| c.split_once('=')).map(|(k, _)| k.trim()) != Some(key));
        lines.push(format!("{key} = {}", value.trim()));
    }
    cli_io::parse_config(&lines.join("\n"))
}

fn report(summary: &RunSummary) {
    println!("{}", summary.dir.display());
    for row in &summary.diagnostics {
        match row.param {
            Some(p) => println!("  {:<34} {:>12.4e}  {:.6e}", row.name, p, row.value),
            None => println!("  {:<34} {:>12}  {:.6e}", row.name, "", row.value),
        }
    }
    if !summary.converged {
        eprintln!("solver stopped before reaching the tolerances");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(a) => load(a).and_then(|c| cli_io::run(&c)),
        Command::Sweep(a) => load(a).and_then(|c| cli_io::sweep(&c)),
        Command::Oracle(a) => load(a).and_then(|c| cli_io::run_oracle(&c)),
        Command::Verify { run_dir } => cli_io::verify(run_dir),
    };
    match result {
        Ok(summary) => {
            report(&summary);
            ExitCode::from(summary.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
