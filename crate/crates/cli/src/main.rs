//! `cbpr`: run payment scenarios, replay audit trails and print gas reports.
//!
//! Exit status: 0 on success, 1 on errors, 2 for an invalid scenario or
//! corrupt trail, 3 when a run finished but some transaction was rejected.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use cbpr_core::ledger::NetworkSnapshot;
use cbpr_core::metering::{compute_fee, render_table, report, CallRecord, CostTable};
use cbpr_core::relay::OutcomeStatus;
use cbpr_core::scenario::{
    generate_scenario, load_scenario, replay_trail, run_to_dir, GeneratorParams, RunOptions, ScenarioError,
};
use rust_decimal::Decimal;

#[derive(Parser)]
#[command(name = "cbpr", version, about = "Cross-border payment relay simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file and list every problem found.
    Validate { config: PathBuf },
    /// Run a scenario and write its artifacts.
    Run {
        config: PathBuf,
        /// Directory receiving the artifacts; created if missing.
        #[arg(long)]
        out: PathBuf,
        /// TOML cost table replacing the scenario's.
        #[arg(long)]
        cost_table: Option<PathBuf>,
        /// Run transactions on disjoint agents concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Replay an audit trail from an initial snapshot.
    Replay {
        trail: PathBuf,
        snapshot: PathBuf,
        /// Final snapshot the replay must reproduce.
        #[arg(long)]
        expect: Option<PathBuf>,
    },
    /// Aggregate call records into a gas report.
    Report {
        /// `gas_records.jsonl` from a run.
        records: PathBuf,
        /// Emit JSON instead of the text table.
        #[arg(long)]
        json: bool,
        /// Also price the average call of each operation, in Gwei per unit.
        #[arg(long)]
        gas_price: Option<String>,
    },
    /// Write a random scenario.
    Generate {
        #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u64).range(..=i64::MAX as u64))]
        seed: u64,
        /// Output file; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CBPR_LOG", "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<ScenarioError>() {
                Some(ScenarioError::Parse(_) | ScenarioError::Validation(_) | ScenarioError::CorruptTrail(_)) => {
                    ExitCode::from(2)
                }
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Validate { config } => {
            let cfg = load_scenario(&config)?;
            println!(
                "{}: ok ({} agents, {} accounts, {} transactions)",
                config.display(),
                cfg.agents.len(),
                cfg.accounts.len(),
                cfg.transactions.len()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Run {
            config,
            out,
            cost_table,
            parallel,
        } => {
            let mut cfg = load_scenario(&config)?;
            if let Some(path) = cost_table {
                let text = read(&path)?;
                cfg.cost_table = CostTable::from_toml(&text).with_context(|| path.display().to_string())?;
            }
            let sim = run_to_dir(&cfg, &out, RunOptions { parallel })?;
            for summary in sim.outcome_summaries() {
                let reason = summary.reason.map(|r| format!(" ({r})")).unwrap_or_default();
                println!("{} {:?}{reason}", summary.end_to_end_id, summary.status);
            }
            println!(
                "settled {}, returned {}, rejected {}; artifacts in {}",
                sim.count(OutcomeStatus::Settled),
                sim.count(OutcomeStatus::Returned),
                sim.rejected(),
                out.display()
            );
            Ok(if sim.rejected() > 0 {
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Replay {
            trail,
            snapshot,
            expect,
        } => {
            let initial = read_snapshot(&snapshot)?;
            let replayed = replay_trail(&read(&trail)?, &initial)?;
            if let Some(path) = expect {
                if read_snapshot(&path)? != replayed.final_snapshot {
                    anyhow::bail!("replayed balances differ from {}", path.display());
                }
            }
            println!(
                "replayed {} entries ({} events, {} transactions); final snapshot {}",
                replayed.entries,
                replayed.events,
                replayed.transactions,
                replayed.final_snapshot.digest()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Report {
            records,
            json,
            gas_price,
        } => {
            let text = read(&records)?;
            let records = text
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(n, l)| {
                    serde_json::from_str::<CallRecord>(l).with_context(|| format!("{}:{}", records.display(), n + 1))
                })
                .collect::<Result<Vec<_>>>()?;
            let rows = report(&records);
            if json {
                println!("{}", serde_json::to_string_pretty(&rows)?);
            } else {
                print!("{}", render_table(&rows));
            }
            if let Some(price) = gas_price {
                let price = Decimal::from_str(&price).with_context(|| format!("gas price '{price}'"))?;
                for row in &rows {
                    println!(
                        "{}: {} ETH per average call",
                        row.operation,
                        compute_fee(row.avg, price)?
                    );
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Generate { seed, out } => {
            let text = generate_scenario(seed, &GeneratorParams::default()).to_toml();
            match out {
                Some(path) => fs::write(&path, text).with_context(|| path.display().to_string())?,
                None => print!("{text}"),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_snapshot(path: &Path) -> Result<NetworkSnapshot> {
    serde_json::from_str(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}
