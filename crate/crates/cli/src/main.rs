// SPDX-License-Identifier: Apache-2.0

//! `tourcast`: run a session server, scripted scenarios and log replays.
//!
//! Exit codes: 0 success, 1 failure (assertion, runtime or I/O), 2 invalid
//! configuration, world or scenario.

mod client;
mod config;
mod server;

use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use tracing::error;

use tourcast_core::harness::record::{replay, ReplayError};
use tourcast_core::harness::{load_scenario_file, run_scenario};
use tourcast_core::Session;

#[derive(Parser)]
#[command(name = "tourcast", version, about = "Session server and scenario harness for guided virtual city tours")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the session server.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "TOURCAST_PORT")]
        port: Option<u16>,
        #[arg(long, env = "TOURCAST_TICK_RATE")]
        tick_rate: Option<f64>,
        /// World file, overriding the one named in the config.
        #[arg(long)]
        world: Option<PathBuf>,
        #[arg(long)]
        bind: Option<String>,
        /// Record every applied event to this file for later replay.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Scripted scenarios.
    Scenario {
        #[command(subcommand)]
        command: ScenarioCommand,
    },
    /// Replay an event log offline and print the resulting state hash.
    Replay {
        log: PathBuf,
        /// Print the final canonical snapshot instead of the summary.
        #[arg(long)]
        snapshot: bool,
    },
    /// Fetch the current state from a running server.
    Snapshot {
        /// host:port, tcp://host:port or ws://host:port
        endpoint: String,
        #[arg(long, default_value_t = 5.0)]
        timeout: f64,
    },
}

#[derive(Subcommand)]
enum ScenarioCommand {
    /// Run a scenario on simulated time and print its report.
    Run {
        path: PathBuf,
        /// Also write the report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write the full event log here.
        #[arg(long)]
        log: Option<PathBuf>,
    },
}

const CONFIG_ERROR: u8 = 2;

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}

fn config_error(e: impl std::fmt::Display) -> ExitCode {
    error!("{e}");
    ExitCode::from(CONFIG_ERROR)
}

fn run(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Serve { config, port, tick_rate, world, bind, log } => {
            let overrides = config::Overrides { port, tick_rate, world, bind };
            let resolved = match config::load(&config, &overrides) {
                Ok(r) => r,
                Err(e) => return Ok(config_error(format!("{e:#}"))),
            };
            let session = match Session::new(resolved.world, resolved.session) {
                Ok(s) => s,
                Err(e) => return Ok(config_error(e)),
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = server::bind(&format!("{}:{}", resolved.bind, resolved.port)).await?;
                let shutdown = async {
                    let _ = tokio::signal::ctrl_c().await;
                };
                server::serve(listener, session, log.as_deref(), shutdown).await
            })?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Scenario { command: ScenarioCommand::Run { path, report, log } } => {
            let loaded = match load_scenario_file(&path) {
                Ok(l) => l,
                Err(e) => return Ok(config_error(e)),
            };
            let run = match run_scenario(&loaded) {
                Ok(r) => r,
                Err(e) => return Ok(config_error(e)),
            };
            let text = serde_json::to_string_pretty(&run.report)?;
            println!("{text}");
            if let Some(p) = report {
                std::fs::write(&p, format!("{text}\n"))?;
            }
            if let Some(p) = log {
                run.recorder.write_log(std::io::BufWriter::new(std::fs::File::create(&p)?))?;
            }
            for f in &run.report.failures {
                error!(step = f.step, at = f.at, "{}", f.message);
            }
            Ok(if run.report.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Replay { log, snapshot } => {
            let file = std::fs::File::open(&log).map_err(|e| anyhow::anyhow!("{}: {e}", log.display()))?;
            let outcome = match replay(BufReader::new(file)) {
                Ok(o) => o,
                Err(e @ ReplayError::Io(_)) => return Err(e.into()),
                Err(e) => return Ok(config_error(e)),
            };
            if snapshot {
                println!("{}", outcome.snapshot.canonical_json());
            } else {
                let summary = serde_json::json!({
                    "events_applied": outcome.events_applied,
                    "truncated_at_line": outcome.truncated_at_line,
                    "hash": outcome.hash,
                });
                println!("{}", serde_json::to_string_pretty(&summary)?);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Snapshot { endpoint, timeout } => {
            let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
            let snap = rt.block_on(client::fetch_snapshot(&endpoint, Duration::from_secs_f64(timeout)))?;
            println!("{}", snap.canonical_json());
            Ok(ExitCode::SUCCESS)
        }
    }
}
