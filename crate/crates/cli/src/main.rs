use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use coagkin::kernel::KernelSpec;
use coagkin::CoagulationKernel;

mod commands;
mod config;

const SCHEMA: &str = include_str!("../schema/run_config.schema.json");

/// Truncated discrete coagulation solver and verification harness.
#[derive(Parser)]
#[command(name = "coagkin", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one configuration and write CSV, JSON and SVG outputs.
    Simulate { config: PathBuf },
    /// Run the configured experiment; exit 0 iff it passes.
    Verify { config: PathBuf },
    /// Built-in kernels.
    Kernels {
        #[command(subcommand)]
        action: KernelsAction,
    },
    /// Run-configuration JSON schema.
    Schema {
        #[command(subcommand)]
        action: SchemaAction,
    },
}

#[derive(Subcommand)]
enum KernelsAction {
    List,
}

#[derive(Subcommand)]
enum SchemaAction {
    Print,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { commands::EXIT_CONFIG } else { 0 });
        }
    };
    if let Err(e) = ctrlc::set_handler(coagkin::stop::request_stop) {
        eprintln!("warning: cannot install Ctrl-C handler: {e}");
    }
    let result = match cli.command {
        Command::Simulate { config } => config::load(&config).map_err(Into::into).and_then(|l| commands::simulate(&l)),
        Command::Verify { config } => config::load(&config).map_err(Into::into).and_then(|l| commands::verify(&l)),
        Command::Kernels { action: KernelsAction::List } => {
            for k in CoagulationKernel::catalog() {
                let spec = serde_json::to_string(&KernelSpec::from_kernel(&k)).unwrap_or_default();
                println!("{k}\t{spec}");
            }
            Ok(commands::EXIT_OK)
        }
        Command::Schema { action: SchemaAction::Print } => {
            print!("{SCHEMA}");
            Ok(commands::EXIT_OK)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
