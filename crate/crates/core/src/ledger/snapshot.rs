//! Deterministic balance snapshots and event replay.

use std::collections::BTreeMap;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AccountKind, AgentId, AgentLedger, EventRecord, Posting};
use crate::digest::sha256_hex;
use crate::iso20022::{CurrencyCode, MoneyAmount};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountSnapshot {
    pub kind: AccountKind,
    pub currency: CurrencyCode,
    pub balance: String,
    pub owner: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterparty: Option<AgentId>,
}

/// Accounts of one ledger keyed by account number.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub agent: AgentId,
    pub accounts: BTreeMap<String, AccountSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("event for {event} applied to the snapshot of {snapshot}")]
    AgentMismatch { snapshot: AgentId, event: AgentId },
    #[error("sequence {found} does not follow {previous}")]
    OutOfOrder { previous: u64, found: u64 },
    #[error("posting references unknown account {0}")]
    UnknownAccount(String),
    #[error("posting of {amount} does not match currency of {account}")]
    CurrencyMismatch { account: String, amount: MoneyAmount },
    #[error("posting would overdraw {0}")]
    Overdraft(String),
    #[error("snapshot balance of {account} is not a valid amount: {detail}")]
    InvalidBalance { account: String, detail: String },
}

impl AgentLedger {
    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            agent: self.agent().clone(),
            accounts: self
                .accounts()
                .map(|a| {
                    (
                        a.account_number.clone(),
                        AccountSnapshot {
                            kind: a.kind,
                            currency: a.currency(),
                            balance: a.balance.value().to_string(),
                            owner: a.owner.clone(),
                            counterparty: a.counterparty.clone(),
                        },
                    )
                })
                .collect(),
        }
    }
}

impl LedgerSnapshot {
    /// Digest of the compact JSON form; stable because keys are ordered.
    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("snapshot serializes"))
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot serializes")
    }

    pub fn balance(&self, account: &str) -> Result<MoneyAmount, ReplayError> {
        let acc = self
            .accounts
            .get(account)
            .ok_or_else(|| ReplayError::UnknownAccount(account.to_string()))?;
        MoneyAmount::parse(acc.currency, &acc.balance).map_err(|e| ReplayError::InvalidBalance {
            account: account.to_string(),
            detail: e.to_string(),
        })
    }

    /// Sum of balances per currency.
    pub fn totals(&self) -> BTreeMap<CurrencyCode, Decimal> {
        let mut totals = BTreeMap::new();
        for (number, acc) in &self.accounts {
            let value = self.balance(number).map(|b| b.value()).unwrap_or_default();
            *totals.entry(acc.currency).or_insert(Decimal::ZERO) += value;
        }
        totals
    }

    /// Applies one posting, all-or-nothing.
    pub fn apply(&mut self, posting: &Posting) -> Result<(), ReplayError> {
        let amount = posting.amount;
        let debit = self.balance(&posting.debit)?;
        let credit = self.balance(&posting.credit)?;
        for (account, current) in [(&posting.debit, debit), (&posting.credit, credit)] {
            if current.currency != amount.currency {
                return Err(ReplayError::CurrencyMismatch {
                    account: account.clone(),
                    amount,
                });
            }
        }
        let new_debit = debit
            .checked_sub(&amount)
            .ok_or_else(|| ReplayError::Overdraft(posting.debit.clone()))?;
        let new_credit = credit
            .checked_add(&amount)
            .ok_or_else(|| ReplayError::Overdraft(posting.credit.clone()))?;
        if posting.debit == posting.credit {
            return Ok(());
        }
        self.set_balance(&posting.debit, new_debit);
        self.set_balance(&posting.credit, new_credit);
        Ok(())
    }

    fn set_balance(&mut self, account: &str, value: MoneyAmount) {
        if let Some(acc) = self.accounts.get_mut(account) {
            acc.balance = value.value().to_string();
        }
    }
}

/// Rebuilds balances by applying each event's posting to `initial`.
pub fn replay_events(initial: &LedgerSnapshot, events: &[EventRecord]) -> Result<LedgerSnapshot, ReplayError> {
    let mut snap = initial.clone();
    let mut previous = 0;
    for event in events {
        if event.agent != snap.agent {
            return Err(ReplayError::AgentMismatch {
                snapshot: snap.agent.clone(),
                event: event.agent.clone(),
            });
        }
        if event.sequence <= previous {
            return Err(ReplayError::OutOfOrder {
                previous,
                found: event.sequence,
            });
        }
        previous = event.sequence;
        snap.apply(&event.posting)?;
    }
    Ok(snap)
}

/// Snapshots of every ledger in a simulation, keyed by agent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSnapshot {
    pub agents: BTreeMap<AgentId, LedgerSnapshot>,
}

impl NetworkSnapshot {
    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("snapshot serializes"))
    }

    pub fn to_pretty_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("snapshot serializes");
        text.push('\n');
        text
    }

    /// Sum of balances per currency across all ledgers.
    pub fn totals(&self) -> BTreeMap<CurrencyCode, Decimal> {
        let mut totals = BTreeMap::new();
        for snap in self.agents.values() {
            for (ccy, v) in snap.totals() {
                *totals.entry(ccy).or_insert(Decimal::ZERO) += v;
            }
        }
        totals
    }
}
