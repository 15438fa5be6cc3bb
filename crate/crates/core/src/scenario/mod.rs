//! Deterministic scenario runs.
//!
//! A scenario declares agents, accounts, rates and an ordered list of
//! transactions. Running it builds one ledger per agent, drives every
//! transaction through the relay and records an audit trail that can be
//! replayed against the initial snapshot.

mod artifacts;
pub mod audit;
pub mod config;
pub mod generate;


use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::clock::SimClock;
use crate::iso20022::{build_pacs002, CodecError, DebtorInstruction, PaymentStatus};
use crate::ledger::{AgentId, AgentLedger, Amount, EventRecord, LedgerError, NetworkSnapshot};
use crate::metering::CallRecord;
use crate::relay::{
    compose_payment, run_transaction_with, AgentDirectory, Conversion, FifoScheduler, HopMessage, OutcomeStatus,
    PaymentRequest, RelayError, RelayObserver, Route, TransactionOutcome,
};

pub use artifacts::{write_artifacts, OutcomeSummary};
pub use audit::{replay_trail, AuditRecord, ReplayReport, AUDIT_FORMAT};
pub use config::{load_scenario, parse_scenario, ParseError, ScenarioConfig, TransactionConfig, ValidationError};
pub use generate::{generate_scenario, GeneratorParams};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("parse error at {0}")]
    Parse(ParseError),
    #[error("invalid scenario: {0}")]
    Validation(ValidationError),
    #[error("ledger {agent}: {source}")]
    Ledger { agent: AgentId, source: LedgerError },
    #[error(transparent)]
    Relay(#[from] RelayError),
    #[error("corrupt audit trail: {0}")]
    CorruptTrail(String),
    #[error("snapshot: {0}")]
    Snapshot(String),
}

impl ScenarioError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

impl From<CodecError> for ScenarioError {
    fn from(e: CodecError) -> Self {
        Self::Relay(RelayError::Codec(e))
    }
}

/// Agents of a scenario, ready to run transactions.
#[derive(Debug)]
pub struct Network {
    directory: AgentDirectory,
}

impl Network {
    /// Deploys a ledger per agent, opens and funds the declared accounts and
    /// installs the rate table on every agent. Setup runs in clock region 0.
    pub fn build(config: &ScenarioConfig) -> Result<Self, ScenarioError> {
        let mut clock = SimClock::default();
        let costs = Arc::new(config.cost_table.clone());
        let mut directory = AgentDirectory::new();
        for agent in &config.agents {
            let mut ledger = AgentLedger::with_cost_table(agent.bic.clone(), agent.deployer.clone(), costs.clone());
            let setup = |e| ScenarioError::Ledger {
                agent: agent.bic.clone(),
                source: e,
            };
            for acc in config.accounts.iter().filter(|a| a.agent == agent.bic) {
                ledger
                    .create_account(&agent.deployer, acc.spec.clone(), clock.tick())
                    .map_err(setup)?;
                if acc.balance.is_positive() {
                    ledger
                        .deposit(&agent.deployer, &acc.spec.account_number, acc.balance, clock.tick())
                        .map_err(setup)?;
                }
            }
            directory.register(ledger, agent.deployer.clone())?;
        }
        for agent in &config.agents {
            for fx in &config.fx_rates {
                directory.set_rate(&agent.bic, fx.from, fx.to, fx.rate)?;
            }
        }
        Ok(Self { directory })
    }

    pub fn directory(&self) -> &AgentDirectory {
        &self.directory
    }

    pub fn snapshot(&self) -> NetworkSnapshot {
        self.directory.snapshot()
    }

    /// Metered calls of every ledger, ordered by time.
    pub fn call_records(&self) -> Vec<CallRecord> {
        let mut records = Vec::new();
        for agent in self.directory.agents() {
            let _ = self.directory.with_ledger(agent, |l| records.extend(l.call_records()));
        }
        records.sort_by(|a, b| (a.timestamp, &a.ledger, &a.operation).cmp(&(b.timestamp, &b.ledger, &b.operation)));
        records
    }

    /// Runs transaction `index` of a scenario to completion, then reads the
    /// debtor and creditor balances through the metered accessor.
    pub fn execute(&self, index: usize, tx: &TransactionConfig) -> Result<TransactionRun, ScenarioError> {
        let mut clock = SimClock::for_transaction(index);
        let route = Route {
            path: tx.path.clone(),
            creditor_account: Some(tx.creditor_account.clone()),
        };
        let request = PaymentRequest {
            end_to_end_id: tx.end_to_end_id.clone(),
            amount: tx.amount,
            debtor_name: tx.debtor_name.clone(),
            debtor_account: tx.debtor_account.clone(),
            creditor_name: tx.creditor_name.clone(),
            creditor_account: tx.creditor_account.clone(),
        };
        let msg = compose_payment(&request, &route, clock.stamp())?;
        let instruction = DebtorInstruction::from_message(&msg)?;
        let mut observer = TrailObserver::default();
        let result = run_transaction_with(
            &instruction,
            &route,
            &self.directory,
            &mut clock,
            &mut FifoScheduler::default(),
            &mut observer,
        );
        let outcome = match result {
            Ok(outcome) => outcome,
            Err(e) if observer.entries.is_empty() => {
                let reason = e.to_string();
                log::warn!("{}: rejected before settlement: {reason}", tx.end_to_end_id);
                TransactionOutcome {
                    end_to_end_id: tx.end_to_end_id.clone(),
                    status: OutcomeStatus::Rejected,
                    hops_executed: 0,
                    final_report: build_pacs002(&msg, PaymentStatus::Rjct, Some(reason.clone()))?,
                    events: Vec::new(),
                    messages: vec![HopMessage {
                        agent: tx.debtor_agent.clone(),
                        xml: instruction.iso_message.clone(),
                    }],
                    conversions: Vec::new(),
                    returns: Vec::new(),
                    failure_reason: Some(reason),
                }
            }
            Err(e) => return Err(e.into()),
        };
        let debtor_balance = self.metered_balance(&tx.debtor_agent, &tx.debtor_account, &mut clock)?;
        let creditor_balance = self.metered_balance(&tx.creditor_agent, &tx.creditor_account, &mut clock)?;
        log::info!(
            "{} {:?} after {} hop(s)",
            tx.end_to_end_id,
            outcome.status,
            outcome.hops_executed
        );
        Ok(TransactionRun {
            index,
            transaction: tx.clone(),
            outcome,
            entries: observer.entries,
            debtor_balance,
            creditor_balance,
        })
    }

    fn metered_balance(&self, agent: &AgentId, account: &str, clock: &mut SimClock) -> Result<Amount, ScenarioError> {
        self.directory
            .with_ledger(agent, |l| l.get_balance(account, clock.tick()))?
            .map_err(|source| ScenarioError::Ledger {
                agent: agent.clone(),
                source,
            })
    }
}

/// Something that happened during a transaction, in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrailEntry {
    /// A ledger event and the digest of the emitting ledger's balances
    /// right after it.
    Event {
        event: EventRecord,
        balances_digest: String,
    },
    Fx(Conversion),
}

#[derive(Default)]
struct TrailObserver {
    entries: Vec<TrailEntry>,
}

impl RelayObserver for TrailObserver {
    fn on_event(&mut self, event: &EventRecord, ledger: &AgentLedger) {
        self.entries.push(TrailEntry::Event {
            event: event.clone(),
            balances_digest: ledger.snapshot().digest(),
        });
    }

    fn on_conversion(&mut self, conversion: &Conversion) {
        self.entries.push(TrailEntry::Fx(conversion.clone()));
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransactionRun {
    pub index: usize,
    pub transaction: TransactionConfig,
    pub outcome: TransactionOutcome,
    pub entries: Vec<TrailEntry>,
    pub debtor_balance: Amount,
    pub creditor_balance: Amount,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Run transactions with disjoint agent sets concurrently.
    pub parallel: bool,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub seed: u64,
    pub initial: NetworkSnapshot,
    pub final_snapshot: NetworkSnapshot,
    pub runs: Vec<TransactionRun>,
    pub call_records: Vec<CallRecord>,
    pub trail: Vec<AuditRecord>,
}

impl Simulation {
    pub fn rejected(&self) -> usize {
        self.count(OutcomeStatus::Rejected)
    }

    pub fn count(&self, status: OutcomeStatus) -> usize {
        self.runs.iter().filter(|r| r.outcome.status == status).count()
    }
}

/// Runs every transaction of `config` in declaration order.
///
/// With `parallel`, transactions are grouped into waves whose agent sets are
/// pairwise disjoint and which never overtake an earlier transaction sharing
/// an agent, so each ledger sees the same call sequence as a sequential run
/// and the outputs are identical.
pub fn simulate(config: &ScenarioConfig, options: RunOptions) -> Result<Simulation, ScenarioError> {
    let network = Network::build(config)?;
    let initial = network.snapshot();
    let txs = &config.transactions;
    let mut runs = Vec::with_capacity(txs.len());
    if options.parallel {
        for wave in waves(txs) {
            let results: Vec<Result<TransactionRun, ScenarioError>> =
                wave.par_iter().map(|&i| network.execute(i, &txs[i])).collect();
            for r in results {
                runs.push(r?);
            }
        }
        runs.sort_by_key(|r| r.index);
    } else {
        for (i, tx) in txs.iter().enumerate() {
            runs.push(network.execute(i, tx)?);
        }
    }
    let final_snapshot = network.snapshot();
    let trail = audit::build_trail(config.seed, &initial, &final_snapshot, &runs);
    Ok(Simulation {
        seed: config.seed,
        initial,
        final_snapshot,
        runs,
        call_records: network.call_records(),
        trail,
    })
}

/// Groups transaction indices into waves of pairwise disjoint agent sets.
/// A transaction joins the current wave only if no earlier pending
/// transaction touches any of its agents.
pub fn waves(txs: &[TransactionConfig]) -> Vec<Vec<usize>> {
    let mut pending: Vec<usize> = (0..txs.len()).collect();
    let mut out = Vec::new();
    while !pending.is_empty() {
        let mut blocked: BTreeSet<&AgentId> = BTreeSet::new();
        let mut wave = Vec::new();
        let mut rest = Vec::new();
        for i in pending {
            let footprint: BTreeSet<&AgentId> = txs[i].path.iter().collect();
            if footprint.is_disjoint(&blocked) {
                wave.push(i);
            } else {
                rest.push(i);
            }
            blocked.extend(footprint);
        }
        out.push(wave);
        pending = rest;
    }
    out
}

/// Loads, runs and writes all artifacts into `out_dir`.
pub fn run_to_dir(config: &ScenarioConfig, out_dir: &Path, options: RunOptions) -> Result<Simulation, ScenarioError> {
    let sim = simulate(config, options)?;
    write_artifacts(&sim, out_dir)?;
    Ok(sim)
}
