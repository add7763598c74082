use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stochevo_harness::{load_config, output_dir, run, ExperimentName};

#[derive(Parser)]
#[command(name = "stochevo", version, about = "Run stochastic evolution experiments from TOML configs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Override a config field, e.g. `--set numerics.dt=5e-4`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Parse and check a config without running it.
    Validate {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// List the registered experiments.
    List,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::List => {
            for e in ExperimentName::ALL {
                println!("{:<26} {}", e.as_str(), e.description());
            }
            0
        }
        Command::Validate { config, overrides } => match load_config(&config, &overrides) {
            Ok(cfg) => {
                println!("ok: {} -> {}", cfg.experiment, output_dir(&cfg).display());
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
        Command::Run { config, overrides } => match load_config(&config, &overrides) {
            Ok(cfg) => {
                let dir = output_dir(&cfg);
                let report = run(&cfg, &dir);
                if let Some(out) = &report.output {
                    for a in &out.assertions {
                        println!("{} {}: {}", if a.passed { "PASS" } else { "FAIL" }, a.name, a.detail);
                    }
                }
                if let Some(e) = &report.error {
                    eprintln!("error: {e}");
                }
                println!("output: {}", dir.display());
                report.exit_code()
            }
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
    };
    ExitCode::from(code as u8)
}
