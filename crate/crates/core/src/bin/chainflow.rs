use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use chainflow::cli::{run, Command};
use chainflow::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "chainflow",
    version,
    about = "Supply-chain simulation and switching-time optimization"
)]
struct Args {
    #[command(subcommand)]
    command: Sub,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override one entry, e.g. `--set control.taus=[1.0,3.0]`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Output directory; defaults to `output.directory`, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Sub {
    /// Simulate once and write queue, outflow and cost traces.
    Simulate(Common),
    /// Run the quantized steepest descent.
    Optimize(Common),
    /// Compare the grid solver against front tracking over refinement levels.
    Compare(Common),
    /// Check tangent gradients against central finite differences.
    Gradcheck(Common),
}

fn main() -> ExitCode {
    let args = Args::parse();
    let (command, common) = match args.command {
        Sub::Simulate(c) => (Command::Simulate, c),
        Sub::Optimize(c) => (Command::Optimize, c),
        Sub::Compare(c) => (Command::Compare, c),
        Sub::Gradcheck(c) => (Command::Gradcheck, c),
    };
    let text = match std::fs::read_to_string(&common.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {}: {e}", common.config.display());
            return ExitCode::from(2);
        }
    };
    let outcome = RunConfig::parse(&text, &common.set)
        .map_err(|e| format!("{}: {e}", common.config.display()))
        .and_then(|cfg| {
            let dir = common
                .out
                .clone()
                .or_else(|| cfg.output.directory.as_ref().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("out"));
            run(command, &cfg)
                .map(|o| (o, dir))
                .map_err(|e| format!("{command}: {e}"))
        });
    let (outcome, dir) = match outcome {
        Ok(x) => x,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    if let Err(e) = outcome.write_to(&dir) {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    print!("{}", outcome.stdout);
    ExitCode::from(outcome.exit_code as u8)
}
