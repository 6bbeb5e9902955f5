use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kgflow::config::RunConfig;
use kgflow::scenarios;
use kgflow::KgError;

/// Cubic Klein-Gordon simulator and analysis harness.
#[derive(Parser)]
#[command(name = "kgflow", disable_version_flag = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by a config file.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (overrides `output`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// `key.path=value`, repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Merge the run summaries under a directory and flag constant drift.
    Report {
        dir: PathBuf,
        /// Summary whose constants act as the baseline (default: first found).
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Where to write the merged report (default: DIR/report.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the version.
    Version,
}

fn usage_error(e: KgError) -> ExitCode {
    eprintln!("kgflow: {e}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Version => {
            println!("kgflow {}", env!("CARGO_PKG_VERSION"));
            ExitCode::SUCCESS
        }
        Command::Run {
            config,
            out,
            seed,
            overrides,
        } => {
            let mut cfg = match RunConfig::load(config.as_deref(), &overrides) {
                Ok(c) => c,
                Err(e) => return usage_error(e),
            };
            if let Some(o) = out {
                cfg.output = o;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            match scenarios::run(&cfg) {
                Ok(outcome) => {
                    for c in outcome.summary["criteria"].as_array().into_iter().flatten() {
                        let verdict = if c["pass"].as_bool() == Some(true) { "PASS" } else { "FAIL" };
                        println!("{verdict} {}", c["name"].as_str().unwrap_or("?"));
                    }
                    println!(
                        "{} {} -> {}",
                        if outcome.pass { "PASS" } else { "FAIL" },
                        cfg.scenario.name(),
                        cfg.output.display()
                    );
                    if outcome.pass {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(1)
                    }
                }
                Err(e @ KgError::Config { .. }) => usage_error(e),
                Err(e) => {
                    eprintln!("kgflow: {} failed: {e}", cfg.scenario.name());
                    ExitCode::from(1)
                }
            }
        }
        Command::Report { dir, baseline, out } => {
            let rep = match scenarios::report(&dir, baseline.as_deref()) {
                Ok(r) => r,
                Err(e) => return usage_error(e),
            };
            let text = serde_json::to_string_pretty(&rep.summary).expect("report serializes") + "\n";
            let dest = out.unwrap_or_else(|| dir.join("report.json"));
            if let Err(e) = std::fs::write(&dest, &text) {
                eprintln!("kgflow: cannot write {}: {e}", dest.display());
                return ExitCode::from(1);
            }
            print!("{text}");
            if rep.found == 0 {
                eprintln!("kgflow: no run summaries under {}", dir.display());
                ExitCode::from(2)
            } else if rep.drift_flagged {
                eprintln!("kgflow: empirical constants drifted more than 50% from the baseline");
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
    }
}
