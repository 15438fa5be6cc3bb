//! Event-driven relay between agent ledgers.
//!
//! The relay plays the role of each bank's client software: it reacts to a
//! ledger event, crafts the message for the next agent on the declared path
//! and invokes that agent's ledger. A failed hop turns the flow around and
//! walks pacs.004 returns back to the debtor agent, so every ledger ends where
//! it started.
//!
//! Execution is synchronous and ordered by a [`Scheduler`]; the default FIFO
//! scheduler makes every run deterministic.

mod directory;

use std::collections::VecDeque;

use rust_decimal::{Decimal, RoundingStrategy};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::SimClock;
use crate::iso20022::{
    advance_message, build_pacs002, build_pacs004, parse_pacs004, parse_pacs008, serialize_pacs008, CodecError,
    CreditTransferTxInfo, CurrencyCode, DebtorInstruction, MessageStamp, Pacs002Report, Pacs004Return, Pacs008Message,
    PaymentStatus, MAX_INTERMEDIARIES,
};
use crate::ledger::{AgentId, AgentLedger, Amount, EventKind, EventRecord, LedgerError};

pub use directory::{AgentDirectory, AgentEntry};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RelayError {
    #[error("agent {0} is not in the directory")]
    UnknownAgent(AgentId),
    #[error("{agent} has no nostro relationship with {counterparty}")]
    MissingNostroRelationship { agent: AgentId, counterparty: AgentId },
    #[error("{agent} has no rate for {from}/{to}")]
    MissingRate {
        agent: AgentId,
        from: CurrencyCode,
        to: CurrencyCode,
    },
    #[error("rate {0} must be positive")]
    InvalidRate(Decimal),
    #[error("{amount} converts to zero in {target}")]
    ConversionUnderflow { amount: Amount, target: CurrencyCode },
    #[error("agent {0} registered twice")]
    DuplicateAgent(AgentId),
    #[error("invalid route: {0}")]
    InvalidRoute(String),
    #[error("event from {0} is not part of this route")]
    OffRoute(AgentId),
    #[error("message error: {0}")]
    Codec(#[from] CodecError),
    #[error("return at {agent} failed: {source}")]
    ReturnFailed { agent: AgentId, source: LedgerError },
    #[error("{agent} holds no settled leg for {end_to_end_id}")]
    UnknownTransaction { agent: AgentId, end_to_end_id: String },
}

/// The declared chain of agents a payment travels, debtor agent first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    pub path: Vec<AgentId>,
    /// Account credited at the creditor agent; defaults to the message's
    /// `CdtrAcct`.
    pub creditor_account: Option<String>,
}

impl Route {
    pub fn new(path: Vec<AgentId>) -> Self {
        Self {
            path,
            creditor_account: None,
        }
    }

    pub fn position(&self, agent: &AgentId) -> Option<usize> {
        self.path.iter().position(|a| a == agent)
    }

    pub fn is_last(&self, index: usize) -> bool {
        index + 1 == self.path.len()
    }
}

/// Customer-level facts of a payment before it becomes a message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaymentRequest {
    pub end_to_end_id: String,
    pub amount: Amount,
    pub debtor_name: String,
    pub debtor_account: String,
    pub creditor_name: String,
    pub creditor_account: String,
}

/// The pacs.008 the debtor agent sends to the second agent of `route`.
///
/// Intermediaries are listed in `IntrmyAgt1..3` when the path has room for
/// them; longer paths rely on the route alone.
pub fn compose_payment(
    request: &PaymentRequest,
    route: &Route,
    stamp: MessageStamp,
) -> Result<Pacs008Message, RelayError> {
    let path = &route.path;
    if path.len() < 2 {
        return Err(RelayError::InvalidRoute("a path needs at least two agents".into()));
    }
    let middle = &path[1..path.len() - 1];
    let tx = CreditTransferTxInfo {
        end_to_end_id: request.end_to_end_id.clone(),
        settlement_amount: request.amount,
        debtor_name: request.debtor_name.clone(),
        debtor_account: request.debtor_account.clone(),
        debtor_agent: path[0].clone(),
        creditor_name: request.creditor_name.clone(),
        creditor_account: request.creditor_account.clone(),
        creditor_agent: path[path.len() - 1].clone(),
        intermediary_agents: if middle.len() <= MAX_INTERMEDIARIES {
            middle.to_vec()
        } else {
            Vec::new()
        },
        payment_id_extras: Vec::new(),
        extras: Vec::new(),
    };
    Ok(Pacs008Message::assemble(
        stamp.msg_id,
        stamp.creation_time,
        path[0].clone(),
        path[1].clone(),
        vec![tx],
    )?)
}

/// One currency conversion at a nostro boundary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversion {
    pub agent: AgentId,
    pub from: Amount,
    pub to: Amount,
    pub rate: Decimal,
}

/// `amount * rate` rounded half-to-even to `target`'s minor units.
pub fn convert_at_boundary(amount: Amount, target: CurrencyCode, rate: Decimal) -> Result<Amount, RelayError> {
    if rate <= Decimal::ZERO {
        return Err(RelayError::InvalidRate(rate));
    }
    let product = amount
        .value()
        .checked_mul(rate)
        .ok_or_else(|| CodecError::InvalidAmount(format!("{amount} x {rate} overflows")))?;
    let rounded = product.round_dp_with_strategy(target.minor_units(), RoundingStrategy::MidpointNearestEven);
    let converted = Amount::new(target, rounded)?;
    if !converted.is_positive() {
        return Err(RelayError::ConversionUnderflow { amount, target });
    }
    Ok(converted)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RelayAction {
    /// Invoke `make_transfer` on `agent`'s ledger.
    MakeTransfer {
        agent: AgentId,
        sender: AgentId,
        /// The message as delivered to `agent`.
        received: Vec<u8>,
        /// Instruction handed to the ledger: built from `received` on the
        /// final hop, from the message advanced to the next agent otherwise.
        instruction: DebtorInstruction,
        final_hop: bool,
        creditor_account: Option<String>,
        conversion: Option<Conversion>,
    },
    /// Deliver a status report to the debtor agent.
    ReportStatus { to: AgentId, report: Pacs002Report },
    /// Invoke `return_transfer` on `agent`'s ledger.
    Return { agent: AgentId, ret: Pacs004Return },
    /// The return chain reached the debtor agent.
    ReturnComplete { agent: AgentId },
}

/// Reacts to one ledger event.
pub fn handle_event(
    event: &EventRecord,
    route: &Route,
    directory: &AgentDirectory,
    clock: &mut SimClock,
) -> Result<RelayAction, RelayError> {
    let index = route
        .position(&event.agent)
        .ok_or_else(|| RelayError::OffRoute(event.agent.clone()))?;
    match event.kind {
        EventKind::MakeTransfer | EventKind::PassISOMessageAlong => {
            let next_index = index + 1;
            let next = route
                .path
                .get(next_index)
                .ok_or_else(|| RelayError::InvalidRoute(format!("{} is the last agent", event.agent)))?;
            let msg = parse_pacs008(&event.iso_message)?;
            deliver(&msg, &event.agent, next, next_index, route, directory, clock)
        }
        EventKind::CreditConfirmed => {
            let msg = parse_pacs008(&event.iso_message)?;
            Ok(RelayAction::ReportStatus {
                to: route.path[0].clone(),
                report: build_pacs002(&msg, PaymentStatus::Acsc, None)?,
            })
        }
        EventKind::TransferReturned => {
            if index == 0 {
                return Ok(RelayAction::ReturnComplete {
                    agent: event.agent.clone(),
                });
            }
            let reason = parse_pacs004(&event.iso_message)?.return_reason;
            let ret = return_to(
                &route.path[index - 1],
                &event.agent,
                &event.end_to_end_id,
                &reason,
                directory,
            )?;
            Ok(RelayAction::Return {
                agent: route.path[index - 1].clone(),
                ret,
            })
        }
    }
}

/// Builds the action delivering `msg` (addressed to `next`) from `sender`.
fn deliver(
    msg: &Pacs008Message,
    sender: &AgentId,
    next: &AgentId,
    next_index: usize,
    route: &Route,
    directory: &AgentDirectory,
    clock: &mut SimClock,
) -> Result<RelayAction, RelayError> {
    if &msg.group_header.instructed_agent != next {
        return Err(RelayError::InvalidRoute(format!(
            "message is addressed to {}, route continues with {next}",
            msg.group_header.instructed_agent
        )));
    }
    let entry = directory.entry(next)?;
    let inbound = entry.nostro_currency(sender)?;
    let amount = msg.single_transaction()?.settlement_amount;
    let (received, conversion) = if amount.currency == inbound {
        (msg.clone(), None)
    } else {
        let rate = entry.rate(amount.currency, inbound)?;
        let converted = convert_at_boundary(amount, inbound, rate)?;
        let conversion = Conversion {
            agent: next.clone(),
            from: amount,
            to: converted,
            rate,
        };
        (msg.with_settlement_amount(converted)?, Some(conversion))
    };
    let received_xml = serialize_pacs008(&received)?;
    let final_hop = route.is_last(next_index);
    let instruction = if final_hop {
        DebtorInstruction::from_parsed(&received, &received_xml)?
    } else {
        let after = &route.path[next_index + 1];
        let outgoing = advance_message(&received, next, after, clock.stamp())?;
        DebtorInstruction::from_message(&outgoing)?
    };
    Ok(RelayAction::MakeTransfer {
        agent: next.clone(),
        sender: sender.clone(),
        received: received_xml,
        instruction,
        final_hop,
        creditor_account: if final_hop {
            route.creditor_account.clone()
        } else {
            None
        },
        conversion,
    })
}

/// pacs.004 asking `agent` to reverse its leg, issued by `returning`.
fn return_to(
    agent: &AgentId,
    returning: &AgentId,
    end_to_end_id: &str,
    reason: &str,
    directory: &AgentDirectory,
) -> Result<Pacs004Return, RelayError> {
    let settled = directory.with_ledger(agent, |l| {
        l.settled_leg(end_to_end_id).map(|leg| leg.iso_message.clone())
    })?;
    let xml = settled.ok_or_else(|| RelayError::UnknownTransaction {
        agent: agent.clone(),
        end_to_end_id: end_to_end_id.to_string(),
    })?;
    let original = parse_pacs008(&xml)?;
    Ok(build_pacs004(&original, reason, returning.clone(), agent.clone())?)
}

/// Orders pending relay actions.
pub trait Scheduler {
    fn schedule(&mut self, action: RelayAction);
    fn next_action(&mut self) -> Option<RelayAction>;
}

#[derive(Debug, Default)]
pub struct FifoScheduler {
    queue: VecDeque<RelayAction>,
}

impl Scheduler for FifoScheduler {
    fn schedule(&mut self, action: RelayAction) {
        self.queue.push_back(action);
    }

    fn next_action(&mut self) -> Option<RelayAction> {
        self.queue.pop_front()
    }
}

/// Hooks invoked while a transaction runs.
pub trait RelayObserver {
    /// Called with the emitting ledger still locked, right after the event.
    fn on_event(&mut self, _event: &EventRecord, _ledger: &AgentLedger) {}
    fn on_conversion(&mut self, _conversion: &Conversion) {}
}

pub struct NoopObserver;

impl RelayObserver for NoopObserver {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutcomeStatus {
    Settled,
    Returned,
    Rejected,
}

/// A pacs.008 as delivered to an agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HopMessage {
    pub agent: AgentId,
    pub xml: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransactionOutcome {
    pub end_to_end_id: String,
    pub status: OutcomeStatus,
    /// Forward ledger calls that succeeded, `initiate_transfer` included.
    pub hops_executed: usize,
    pub final_report: Pacs002Report,
    pub events: Vec<(AgentId, EventRecord)>,
    pub messages: Vec<HopMessage>,
    pub conversions: Vec<Conversion>,
    pub returns: Vec<Pacs004Return>,
    pub failure_reason: Option<String>,
}

pub fn run_transaction(
    initial: &DebtorInstruction,
    route: &Route,
    directory: &AgentDirectory,
    clock: &mut SimClock,
) -> Result<TransactionOutcome, RelayError> {
    run_transaction_with(
        initial,
        route,
        directory,
        clock,
        &mut FifoScheduler::default(),
        &mut NoopObserver,
    )
}

/// Checks the declared path against the directory and the instruction.
pub fn validate_route(
    initial: &DebtorInstruction,
    route: &Route,
    directory: &AgentDirectory,
) -> Result<(), RelayError> {
    let path = &route.path;
    if path.len() < 2 {
        return Err(RelayError::InvalidRoute("a path needs at least two agents".into()));
    }
    for (i, agent) in path.iter().enumerate() {
        directory.entry(agent)?;
        if path[..i].contains(agent) {
            return Err(RelayError::InvalidRoute(format!("{agent} appears twice")));
        }
    }
    for pair in path.windows(2) {
        for (agent, counterparty) in [(&pair[0], &pair[1]), (&pair[1], &pair[0])] {
            directory.entry(agent)?.nostro_account(counterparty)?;
        }
    }
    if initial.debtor_agent != path[0] {
        return Err(RelayError::InvalidRoute(format!(
            "path starts at {}, debtor agent is {}",
            path[0], initial.debtor_agent
        )));
    }
    if initial.next_agent != path[1] {
        return Err(RelayError::InvalidRoute(format!(
            "message is instructed to {}, path continues with {}",
            initial.next_agent, path[1]
        )));
    }
    let msg = parse_pacs008(&initial.iso_message)?;
    let creditor_agent = &msg.single_transaction()?.creditor_agent;
    let last = &path[path.len() - 1];
    if creditor_agent != last {
        return Err(RelayError::InvalidRoute(format!(
            "path ends at {last}, creditor agent is {creditor_agent}"
        )));
    }
    Ok(())
}

/// Drives one transaction to completion.
///
/// Route problems are returned as errors before any ledger is touched. A
/// failure of `initiate_transfer` yields `Rejected`; a failure further down
/// the chain is unwound and yields `Returned`.
pub fn run_transaction_with(
    initial: &DebtorInstruction,
    route: &Route,
    directory: &AgentDirectory,
    clock: &mut SimClock,
    scheduler: &mut dyn Scheduler,
    observer: &mut dyn RelayObserver,
) -> Result<TransactionOutcome, RelayError> {
    validate_route(initial, route, directory)?;
    let original = parse_pacs008(&initial.iso_message)?;
    let mut outcome = TransactionOutcome {
        end_to_end_id: original.single_transaction()?.end_to_end_id.clone(),
        status: OutcomeStatus::Rejected,
        hops_executed: 0,
        final_report: build_pacs002(&original, PaymentStatus::Acsc, None)?,
        events: Vec::new(),
        messages: vec![HopMessage {
            agent: route.path[0].clone(),
            xml: initial.iso_message.clone(),
        }],
        conversions: Vec::new(),
        returns: Vec::new(),
        failure_reason: None,
    };

    let debtor_agent = &route.path[0];
    let first = directory.with_entry(debtor_agent, |entry, ledger| {
        let result = ledger.initiate_transfer(&entry.operator, initial, clock.tick());
        if let Ok(event) = &result {
            observer.on_event(event, ledger);
        }
        result
    })?;
    let event = match first {
        Ok(event) => event,
        Err(e) => {
            let reason = e.to_string();
            outcome.final_report = build_pacs002(&original, PaymentStatus::Rjct, Some(reason.clone()))?;
            outcome.failure_reason = Some(reason);
            return Ok(outcome);
        }
    };
    outcome.hops_executed = 1;
    outcome.events.push((debtor_agent.clone(), event.clone()));
    react(&event, route, directory, clock, scheduler, &mut outcome)?;

    while let Some(action) = scheduler.next_action() {
        match action {
            RelayAction::MakeTransfer {
                agent,
                sender,
                received,
                instruction,
                final_hop,
                creditor_account,
                conversion,
            } => {
                if let Some(c) = &conversion {
                    observer.on_conversion(c);
                    outcome.conversions.push(c.clone());
                }
                outcome.messages.push(HopMessage {
                    agent: agent.clone(),
                    xml: received,
                });
                let result = directory.with_entry(&agent, |entry, ledger| {
                    let result = ledger.make_transfer(
                        &entry.operator,
                        &instruction,
                        &sender,
                        final_hop,
                        creditor_account.as_deref(),
                        clock.tick(),
                    );
                    if let Ok(event) = &result {
                        observer.on_event(event, ledger);
                    }
                    result
                })?;
                match result {
                    Ok(event) => {
                        outcome.hops_executed += 1;
                        outcome.events.push((agent, event.clone()));
                        react(&event, route, directory, clock, scheduler, &mut outcome)?;
                    }
                    Err(e) => fail_hop(&sender, &agent, e.to_string(), directory, scheduler, &mut outcome)?,
                }
            }
            RelayAction::ReportStatus { report, .. } => {
                outcome.status = OutcomeStatus::Settled;
                outcome.final_report = report;
            }
            RelayAction::Return { agent, ret } => {
                outcome.returns.push(ret.clone());
                let result = directory.with_entry(&agent, |entry, ledger| {
                    let result = ledger.return_transfer(&entry.operator, &ret, clock.tick());
                    if let Ok(event) = &result {
                        observer.on_event(event, ledger);
                    }
                    result
                })?;
                let event = result.map_err(|source| RelayError::ReturnFailed {
                    agent: agent.clone(),
                    source,
                })?;
                outcome.events.push((agent, event.clone()));
                scheduler.schedule(handle_event(&event, route, directory, clock)?);
            }
            RelayAction::ReturnComplete { .. } => {
                let reason = outcome.failure_reason.clone().unwrap_or_else(|| "returned".to_string());
                outcome.status = OutcomeStatus::Returned;
                outcome.final_report = build_pacs002(&original, PaymentStatus::Rjct, Some(reason))?;
            }
        }
    }
    Ok(outcome)
}

/// Schedules the reaction to a forward event; a failure to craft the next
/// hop is treated like a failed hop.
fn react(
    event: &EventRecord,
    route: &Route,
    directory: &AgentDirectory,
    clock: &mut SimClock,
    scheduler: &mut dyn Scheduler,
    outcome: &mut TransactionOutcome,
) -> Result<(), RelayError> {
    match handle_event(event, route, directory, clock) {
        Ok(action) => {
            scheduler.schedule(action);
            Ok(())
        }
        Err(e @ (RelayError::MissingRate { .. } | RelayError::ConversionUnderflow { .. })) => {
            let index = route.position(&event.agent).expect("event is on route");
            let next = &route.path[index + 1];
            fail_hop(&event.agent, next, e.to_string(), directory, scheduler, outcome)
        }
        Err(e) => Err(e),
    }
}

/// Starts the return chain after `target` could not take the payment from
/// `sender`.
fn fail_hop(
    sender: &AgentId,
    target: &AgentId,
    reason: String,
    directory: &AgentDirectory,
    scheduler: &mut dyn Scheduler,
    outcome: &mut TransactionOutcome,
) -> Result<(), RelayError> {
    log::debug!("{} rejected by {target}: {reason}", outcome.end_to_end_id);
    let ret = return_to(sender, target, &outcome.end_to_end_id, &reason, directory)?;
    outcome.failure_reason = Some(reason);
    scheduler.schedule(RelayAction::Return {
        agent: sender.clone(),
        ret,
    });
    Ok(())
}
