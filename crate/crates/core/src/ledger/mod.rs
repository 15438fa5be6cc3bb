//! Per-agent ledger state machine.
//!
//! An [`AgentLedger`] behaves like the settlement contract deployed for one
//! agent bank: the deployer owns it, principals act through roles, and
//! transfers move money between General and Nostro accounts with
//! double-entry postings. Every successful transfer appends an
//! [`EventRecord`] that downstream relays react to.
//!
//! Calls are atomic: a call that returns an error leaves balances, roles,
//! settled legs and the event log exactly as they were, and is not metered.

mod snapshot;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::SimTime;
use crate::iso20022::{
    decode_pacs008, serialize_pacs004, validate_control_sum, BicCode, CodecError, CurrencyCode, DebtorInstruction,
    MoneyAmount, Pacs004Return, Pacs008Message, MAX_ACCOUNT_ID_LEN,
};
use crate::metering::{self, CallRecord, CostTable, Meter, MeteringError};

pub use snapshot::{replay_events, AccountSnapshot, LedgerSnapshot, NetworkSnapshot, ReplayError};

pub type AgentId = BicCode;
pub type Amount = MoneyAmount;

/// Identity of a caller; stands in for a signing address.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Principal(String);

impl Principal {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Principal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Principal {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Admin,
    Operator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AccountKind {
    General,
    Nostro,
}

impl fmt::Display for AccountKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::General => "General",
            Self::Nostro => "Nostro",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Account {
    pub account_number: String,
    pub kind: AccountKind,
    pub balance: Amount,
    /// Customer identifier for General accounts, the counterparty BIC for
    /// Nostro accounts unless given explicitly.
    pub owner: String,
    /// The agent whose funds a Nostro account mirrors.
    pub counterparty: Option<AgentId>,
}

impl Account {
    pub fn currency(&self) -> CurrencyCode {
        self.balance.currency
    }
}

/// Arguments of [`AgentLedger::create_account`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccountSpec {
    pub account_number: String,
    pub kind: AccountKind,
    pub currency: CurrencyCode,
    pub owner: String,
    pub counterparty: Option<AgentId>,
}

impl AccountSpec {
    pub fn general(number: impl Into<String>, currency: CurrencyCode, owner: impl Into<String>) -> Self {
        Self {
            account_number: number.into(),
            kind: AccountKind::General,
            currency,
            owner: owner.into(),
            counterparty: None,
        }
    }

    pub fn nostro(number: impl Into<String>, currency: CurrencyCode, counterparty: AgentId) -> Self {
        Self {
            account_number: number.into(),
            kind: AccountKind::Nostro,
            currency,
            owner: counterparty.to_string(),
            counterparty: Some(counterparty),
        }
    }
}

/// Group-header facts of the message a leg settled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MsgInfo {
    pub msg_id: String,
    pub end_to_end_id: String,
    pub creation_time: DateTime<Utc>,
    pub nb_of_txs: u32,
    pub ctrl_sum: Decimal,
}

impl MsgInfo {
    pub fn from_message(msg: &Pacs008Message) -> Self {
        let hdr = &msg.group_header;
        Self {
            msg_id: hdr.msg_id.clone(),
            end_to_end_id: msg
                .transactions
                .first()
                .map(|tx| tx.end_to_end_id.clone())
                .unwrap_or_default(),
            creation_time: hdr.creation_time,
            nb_of_txs: hdr.nb_of_txs,
            ctrl_sum: hdr.ctrl_sum,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    MakeTransfer,
    PassISOMessageAlong,
    CreditConfirmed,
    TransferReturned,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// One balanced move: `amount` leaves `debit` and arrives at `credit`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub debit: String,
    pub credit: String,
    pub amount: Amount,
}

impl Posting {
    pub fn reversed(&self) -> Self {
        Self {
            debit: self.credit.clone(),
            credit: self.debit.clone(),
            amount: self.amount,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub kind: EventKind,
    pub agent: AgentId,
    pub sequence: u64,
    #[serde(with = "utf8_bytes")]
    pub iso_message: Vec<u8>,
    pub end_to_end_id: String,
    pub timestamp: SimTime,
    pub posting: Posting,
}

mod utf8_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        match std::str::from_utf8(bytes) {
            Ok(text) => s.serialize_str(text),
            Err(_) => Err(serde::ser::Error::custom("ISO message is not UTF-8")),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        Ok(String::deserialize(d)?.into_bytes())
    }
}

/// A forward leg settled on this ledger, kept so it can be returned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettledLeg {
    pub msg_info: MsgInfo,
    pub posting: Posting,
    pub iso_message: Vec<u8>,
    pub returned: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("{principal} lacks the {required} role")]
    Unauthorized {
        principal: Principal,
        required: &'static str,
    },
    #[error("account {0} already exists")]
    DuplicateAccount(String),
    #[error("a nostro account for {0} already exists")]
    DuplicateNostro(AgentId),
    #[error("nostro account {0} requires a counterparty")]
    MissingCounterparty(String),
    #[error("general account {0} cannot carry a counterparty")]
    UnexpectedCounterparty(String),
    #[error("a ledger cannot hold a nostro account for its own agent")]
    SelfCounterparty,
    #[error("invalid account number '{0}'")]
    InvalidAccountNumber(String),
    #[error("account {0} not found")]
    AccountNotFound(String),
    #[error("account {account} is {kind}, expected {expected}")]
    WrongAccountKind {
        account: String,
        kind: AccountKind,
        expected: AccountKind,
    },
    #[error("currency mismatch on {account}: account holds {expected}, got {found}")]
    CurrencyMismatch {
        account: String,
        expected: CurrencyCode,
        found: CurrencyCode,
    },
    #[error("amount must be positive")]
    NonPositiveAmount,
    #[error("wrong agent: {detail}")]
    WrongAgent { detail: String },
    #[error("insufficient funds in {account}: available {available}, requested {requested}")]
    InsufficientFunds {
        account: String,
        available: Amount,
        requested: Amount,
    },
    #[error("insufficient nostro funds in {account}: available {available}, requested {requested}")]
    InsufficientNostroFunds {
        account: String,
        available: Amount,
        requested: Amount,
    },
    #[error("control sum of the embedded message does not match its transactions")]
    ControlSumMismatch,
    #[error("instruction fields disagree with the embedded message")]
    InstructionMessageMismatch,
    #[error("embedded message rejected: {0}")]
    InvalidMessage(CodecError),
    #[error("no nostro account for {0}")]
    MissingNostro(AgentId),
    #[error("transaction {0} already settled on this ledger")]
    DuplicateTransaction(String),
    #[error("transaction {0} was never settled on this ledger")]
    UnknownTransaction(String),
    #[error("transaction {0} was already returned")]
    AlreadyReturned(String),
    #[error("return of {returned} does not match settled amount {settled}")]
    ReturnAmountMismatch { returned: Amount, settled: Amount },
    #[error("balance overflow on {0}")]
    Overflow(String),
    #[error("metering failed: {0}")]
    Metering(MeteringError),
}

/// Everything observable about a ledger apart from its metering sink.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerState {
    agent: AgentId,
    owner: Principal,
    roles: BTreeMap<Principal, BTreeSet<Role>>,
    accounts: BTreeMap<String, Account>,
    legs: BTreeMap<String, SettledLeg>,
    event_log: Vec<EventRecord>,
}

#[derive(Debug, Clone)]
pub struct AgentLedger {
    state: LedgerState,
    costs: Arc<CostTable>,
    meter: Meter,
}

enum Access {
    Admin,
    AdminOrOperator,
}

impl AgentLedger {
    pub fn new(agent: AgentId, deployer: Principal) -> Self {
        Self::with_cost_table(agent, deployer, Arc::new(CostTable::default()))
    }

    pub fn with_cost_table(agent: AgentId, deployer: Principal, costs: Arc<CostTable>) -> Self {
        let mut roles = BTreeMap::new();
        roles.insert(deployer.clone(), BTreeSet::from([Role::Admin]));
        Self {
            state: LedgerState {
                agent,
                owner: deployer,
                roles,
                accounts: BTreeMap::new(),
                legs: BTreeMap::new(),
                event_log: Vec::new(),
            },
            costs,
            meter: Meter::default(),
        }
    }

    pub fn agent(&self) -> &AgentId {
        &self.state.agent
    }

    pub fn owner(&self) -> &Principal {
        &self.state.owner
    }

    pub fn roles_of(&self, principal: &Principal) -> BTreeSet<Role> {
        self.state.roles.get(principal).cloned().unwrap_or_default()
    }

    pub fn accounts(&self) -> impl Iterator<Item = &Account> {
        self.state.accounts.values()
    }

    pub fn account(&self, number: &str) -> Option<&Account> {
        self.state.accounts.get(number)
    }

    /// The Nostro account mirroring `counterparty`, if any.
    pub fn nostro_for(&self, counterparty: &AgentId) -> Option<&Account> {
        self.state
            .accounts
            .values()
            .find(|a| a.kind == AccountKind::Nostro && a.counterparty.as_ref() == Some(counterparty))
    }

    pub fn settled_leg(&self, end_to_end_id: &str) -> Option<&SettledLeg> {
        self.state.legs.get(end_to_end_id)
    }

    pub fn event_log(&self) -> &[EventRecord] {
        &self.state.event_log
    }

    pub fn state(&self) -> &LedgerState {
        &self.state
    }

    pub fn cost_table(&self) -> &CostTable {
        &self.costs
    }

    pub fn call_records(&self) -> Vec<CallRecord> {
        self.meter.records()
    }

    fn authorize(&self, caller: &Principal, access: Access) -> Result<(), LedgerError> {
        let roles = self.state.roles.get(caller);
        let has = |r: Role| roles.is_some_and(|set| set.contains(&r));
        let (ok, required) = match access {
            Access::Admin => (has(Role::Admin), "Admin"),
            Access::AdminOrOperator => (has(Role::Admin) || has(Role::Operator), "Admin or Operator"),
        };
        if ok {
            Ok(())
        } else {
            Err(LedgerError::Unauthorized {
                principal: caller.clone(),
                required,
            })
        }
    }

    fn price(&self, op: &str, message_len: usize, now: SimTime) -> Result<CallRecord, LedgerError> {
        metering::record(op, message_len, &self.costs, &self.state.agent, now).map_err(LedgerError::Metering)
    }

    pub fn grant_role(
        &mut self,
        caller: &Principal,
        grantee: Principal,
        role: Role,
        now: SimTime,
    ) -> Result<(), LedgerError> {
        self.authorize(caller, Access::Admin)?;
        let call = self.price(metering::GRANT_ROLE, 0, now)?;
        self.state.roles.entry(grantee).or_default().insert(role);
        self.meter.push(call);
        Ok(())
    }

    pub fn create_account(&mut self, caller: &Principal, spec: AccountSpec, now: SimTime) -> Result<(), LedgerError> {
        self.authorize(caller, Access::AdminOrOperator)?;
        let number = &spec.account_number;
        let len = number.chars().count();
        if len == 0 || len > MAX_ACCOUNT_ID_LEN || number.trim() != number {
            return Err(LedgerError::InvalidAccountNumber(number.clone()));
        }
        if self.state.accounts.contains_key(number) {
            return Err(LedgerError::DuplicateAccount(number.clone()));
        }
        match (spec.kind, &spec.counterparty) {
            (AccountKind::Nostro, None) => return Err(LedgerError::MissingCounterparty(number.clone())),
            (AccountKind::General, Some(_)) => return Err(LedgerError::UnexpectedCounterparty(number.clone())),
            (AccountKind::Nostro, Some(cp)) if *cp == self.state.agent => return Err(LedgerError::SelfCounterparty),
            (AccountKind::Nostro, Some(cp)) if self.nostro_for(cp).is_some() => {
                return Err(LedgerError::DuplicateNostro(cp.clone()))
            }
            _ => {}
        }
        let call = self.price(metering::CREATE_ACCOUNT, 0, now)?;
        self.state.accounts.insert(
            number.clone(),
            Account {
                account_number: spec.account_number,
                kind: spec.kind,
                balance: Amount::zero(spec.currency),
                owner: spec.owner,
                counterparty: spec.counterparty,
            },
        );
        self.meter.push(call);
        Ok(())
    }

    pub fn deposit(
        &mut self,
        caller: &Principal,
        account_number: &str,
        amount: Amount,
        now: SimTime,
    ) -> Result<(), LedgerError> {
        self.authorize(caller, Access::AdminOrOperator)?;
        if !amount.is_positive() {
            return Err(LedgerError::NonPositiveAmount);
        }
        let account = self.existing(account_number)?;
        check_currency(account, &amount)?;
        let updated = account
            .balance
            .checked_add(&amount)
            .ok_or_else(|| LedgerError::Overflow(account_number.to_string()))?;
        let call = self.price(metering::DEPOSIT, 0, now)?;
        self.account_mut(account_number).balance = updated;
        self.meter.push(call);
        Ok(())
    }

    /// Metered balance query.
    pub fn get_balance(&self, account_number: &str, now: SimTime) -> Result<Amount, LedgerError> {
        let balance = self.existing(account_number)?.balance;
        self.meter.push(self.price(metering::GET_BALANCE, 0, now)?);
        Ok(balance)
    }

    /// Unmetered balance lookup for observers.
    pub fn balance(&self, account_number: &str) -> Option<Amount> {
        self.account(account_number).map(|a| a.balance)
    }

    /// First hop, executed on the debtor agent's ledger: debtor account to the
    /// nostro of the next agent.
    pub fn initiate_transfer(
        &mut self,
        caller: &Principal,
        instruction: &DebtorInstruction,
        now: SimTime,
    ) -> Result<EventRecord, LedgerError> {
        self.authorize(caller, Access::AdminOrOperator)?;
        let msg = self.verify_instruction(instruction)?;
        let me = &self.state.agent;
        if instruction.debtor_agent != *me {
            return Err(LedgerError::WrongAgent {
                detail: format!("debtor agent is {}, this ledger is {me}", instruction.debtor_agent),
            });
        }
        if instruction.next_agent == *me {
            return Err(LedgerError::WrongAgent {
                detail: "a transfer cannot be instructed to its own debtor agent".into(),
            });
        }
        let e2e = self.fresh_transaction(&msg)?;
        let amount = instruction.settlement_amount;

        let debtor = self.existing(&instruction.debtor_account)?;
        if debtor.kind != AccountKind::General {
            return Err(LedgerError::WrongAccountKind {
                account: debtor.account_number.clone(),
                kind: debtor.kind,
                expected: AccountKind::General,
            });
        }
        check_currency(debtor, &amount)?;
        let nostro = self
            .nostro_for(&instruction.next_agent)
            .ok_or_else(|| LedgerError::MissingNostro(instruction.next_agent.clone()))?;
        check_currency(nostro, &amount)?;
        if debtor.balance.value() < amount.value() {
            return Err(LedgerError::InsufficientFunds {
                account: debtor.account_number.clone(),
                available: debtor.balance,
                requested: amount,
            });
        }
        let posting = Posting {
            debit: debtor.account_number.clone(),
            credit: nostro.account_number.clone(),
            amount,
        };
        let call = self.price(metering::INITIATE_TRANSFER, instruction.iso_message.len(), now)?;
        self.settle(
            EventKind::MakeTransfer,
            e2e,
            &msg,
            posting,
            &instruction.iso_message,
            call,
            now,
        )
    }

    /// Subsequent hop, executed on an intermediary or the creditor agent's
    /// ledger. Debits the nostro mirroring `sender`; credits the nostro of
    /// the next agent, or on the final hop the creditor account (defaulting
    /// to the message's `CdtrAcct`).
    pub fn make_transfer(
        &mut self,
        caller: &Principal,
        instruction: &DebtorInstruction,
        sender: &AgentId,
        final_hop: bool,
        creditor_account: Option<&str>,
        now: SimTime,
    ) -> Result<EventRecord, LedgerError> {
        self.authorize(caller, Access::AdminOrOperator)?;
        let msg = self.verify_instruction(instruction)?;
        let me = &self.state.agent;
        if sender == me {
            return Err(LedgerError::WrongAgent {
                detail: format!("{me} cannot receive a transfer from itself"),
            });
        }
        let tx = &msg.transactions[0];
        if final_hop && (instruction.next_agent != *me || tx.creditor_agent != *me) {
            return Err(LedgerError::WrongAgent {
                detail: format!(
                    "final hop addressed to {} for creditor agent {}, this ledger is {me}",
                    instruction.next_agent, tx.creditor_agent
                ),
            });
        }
        if !final_hop && instruction.next_agent == *me {
            return Err(LedgerError::WrongAgent {
                detail: format!("intermediary {me} cannot forward to itself"),
            });
        }
        let e2e = self.fresh_transaction(&msg)?;
        let amount = instruction.settlement_amount;

        let source = self
            .nostro_for(sender)
            .ok_or_else(|| LedgerError::MissingNostro(sender.clone()))?;
        check_currency(source, &amount)?;
        if source.balance.value() < amount.value() {
            return Err(LedgerError::InsufficientNostroFunds {
                account: source.account_number.clone(),
                available: source.balance,
                requested: amount,
            });
        }
        let target = if final_hop {
            let number = creditor_account.unwrap_or(&tx.creditor_account);
            let target = self.existing(number)?;
            if target.kind != AccountKind::General {
                return Err(LedgerError::WrongAccountKind {
                    account: number.to_string(),
                    kind: target.kind,
                    expected: AccountKind::General,
                });
            }
            target
        } else {
            self.nostro_for(&instruction.next_agent)
                .ok_or_else(|| LedgerError::MissingNostro(instruction.next_agent.clone()))?
        };
        check_currency(target, &amount)?;
        target
            .balance
            .checked_add(&amount)
            .ok_or_else(|| LedgerError::Overflow(target.account_number.clone()))?;
        let posting = Posting {
            debit: source.account_number.clone(),
            credit: target.account_number.clone(),
            amount,
        };
        let kind = if final_hop {
            EventKind::CreditConfirmed
        } else {
            EventKind::PassISOMessageAlong
        };
        let call = self.price(metering::MAKE_TRANSFER, instruction.iso_message.len(), now)?;
        self.settle(kind, e2e, &msg, posting, &instruction.iso_message, call, now)
    }

    /// Reverses this ledger's leg of the transaction referenced by `ret`.
    pub fn return_transfer(
        &mut self,
        caller: &Principal,
        ret: &Pacs004Return,
        now: SimTime,
    ) -> Result<EventRecord, LedgerError> {
        self.authorize(caller, Access::AdminOrOperator)?;
        let e2e = &ret.original_end_to_end_id;
        let leg = self
            .state
            .legs
            .get(e2e)
            .ok_or_else(|| LedgerError::UnknownTransaction(e2e.clone()))?;
        if leg.returned {
            return Err(LedgerError::AlreadyReturned(e2e.clone()));
        }
        if ret.next_agent != self.state.agent {
            return Err(LedgerError::WrongAgent {
                detail: format!(
                    "return addressed to {}, this ledger is {}",
                    ret.next_agent, self.state.agent
                ),
            });
        }
        if ret.returned_amount.currency != leg.posting.amount.currency {
            return Err(LedgerError::CurrencyMismatch {
                account: leg.posting.credit.clone(),
                expected: leg.posting.amount.currency,
                found: ret.returned_amount.currency,
            });
        }
        if ret.returned_amount != leg.posting.amount {
            return Err(LedgerError::ReturnAmountMismatch {
                returned: ret.returned_amount,
                settled: leg.posting.amount,
            });
        }
        let posting = leg.posting.reversed();
        let from = self.existing(&posting.debit)?;
        if from.balance.value() < posting.amount.value() {
            return Err(LedgerError::InsufficientFunds {
                account: from.account_number.clone(),
                available: from.balance,
                requested: posting.amount,
            });
        }
        let message = serialize_pacs004(ret);
        let call = self.price(metering::RETURN_TRANSFER, message.len(), now)?;

        apply_posting(&mut self.state.accounts, &posting)?;
        if let Some(leg) = self.state.legs.get_mut(e2e) {
            leg.returned = true;
        }
        let event = self.append(EventKind::TransferReturned, e2e.clone(), message, posting, now);
        self.meter.push(call);
        Ok(event)
    }

    /// Decodes the embedded message and checks it against the instruction.
    fn verify_instruction(&self, ins: &DebtorInstruction) -> Result<Pacs008Message, LedgerError> {
        if !ins.settlement_amount.is_positive() {
            return Err(LedgerError::NonPositiveAmount);
        }
        let msg = decode_pacs008(&ins.iso_message).map_err(LedgerError::InvalidMessage)?;
        if !validate_control_sum(&msg) {
            return Err(LedgerError::ControlSumMismatch);
        }
        msg.check().map_err(LedgerError::InvalidMessage)?;
        let extracted = DebtorInstruction::from_parsed(&msg, &ins.iso_message).map_err(LedgerError::InvalidMessage)?;
        if extracted != *ins {
            return Err(LedgerError::InstructionMessageMismatch);
        }
        Ok(msg)
    }

    fn fresh_transaction(&self, msg: &Pacs008Message) -> Result<String, LedgerError> {
        let e2e = msg.transactions[0].end_to_end_id.clone();
        if self.state.legs.contains_key(&e2e) {
            return Err(LedgerError::DuplicateTransaction(e2e));
        }
        Ok(e2e)
    }

    #[allow(clippy::too_many_arguments)]
    fn settle(
        &mut self,
        kind: EventKind,
        e2e: String,
        msg: &Pacs008Message,
        posting: Posting,
        iso_message: &[u8],
        call: CallRecord,
        now: SimTime,
    ) -> Result<EventRecord, LedgerError> {
        apply_posting(&mut self.state.accounts, &posting)?;
        self.state.legs.insert(
            e2e.clone(),
            SettledLeg {
                msg_info: MsgInfo::from_message(msg),
                posting: posting.clone(),
                iso_message: iso_message.to_vec(),
                returned: false,
            },
        );
        let event = self.append(kind, e2e, iso_message.to_vec(), posting, now);
        self.meter.push(call);
        Ok(event)
    }

    fn append(
        &mut self,
        kind: EventKind,
        end_to_end_id: String,
        iso_message: Vec<u8>,
        posting: Posting,
        now: SimTime,
    ) -> EventRecord {
        let event = EventRecord {
            kind,
            agent: self.state.agent.clone(),
            sequence: self.state.event_log.len() as u64 + 1,
            iso_message,
            end_to_end_id,
            timestamp: now,
            posting,
        };
        self.state.event_log.push(event.clone());
        event
    }

    fn existing(&self, number: &str) -> Result<&Account, LedgerError> {
        self.state
            .accounts
            .get(number)
            .ok_or_else(|| LedgerError::AccountNotFound(number.to_string()))
    }

    fn account_mut(&mut self, number: &str) -> &mut Account {
        self.state
            .accounts
            .get_mut(number)
            .expect("account checked before mutation")
    }

    /// Event log as JSON lines.
    pub fn export_events(&self) -> String {
        let mut out = String::new();
        for event in &self.state.event_log {
            out.push_str(&serde_json::to_string(event).expect("events serialize"));
            out.push('\n');
        }
        out
    }
}

fn check_currency(account: &Account, amount: &Amount) -> Result<(), LedgerError> {
    if account.currency() != amount.currency {
        return Err(LedgerError::CurrencyMismatch {
            account: account.account_number.clone(),
            expected: account.currency(),
            found: amount.currency,
        });
    }
    Ok(())
}

/// Applies a posting to an account map, all-or-nothing.
fn apply_posting(accounts: &mut BTreeMap<String, Account>, posting: &Posting) -> Result<(), LedgerError> {
    let debit = accounts
        .get(&posting.debit)
        .ok_or_else(|| LedgerError::AccountNotFound(posting.debit.clone()))?;
    let credit = accounts
        .get(&posting.credit)
        .ok_or_else(|| LedgerError::AccountNotFound(posting.credit.clone()))?;
    check_currency(debit, &posting.amount)?;
    check_currency(credit, &posting.amount)?;
    let new_debit = debit
        .balance
        .checked_sub(&posting.amount)
        .ok_or_else(|| LedgerError::InsufficientFunds {
            account: posting.debit.clone(),
            available: debit.balance,
            requested: posting.amount,
        })?;
    let new_credit = credit
        .balance
        .checked_add(&posting.amount)
        .ok_or_else(|| LedgerError::Overflow(posting.credit.clone()))?;
    if posting.debit == posting.credit {
        return Ok(());
    }
    accounts.get_mut(&posting.debit).expect("present").balance = new_debit;
    accounts.get_mut(&posting.credit).expect("present").balance = new_credit;
    Ok(())
}
