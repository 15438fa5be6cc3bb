use std::collections::BTreeMap;
use std::sync::{Mutex, MutexGuard};

use rust_decimal::Decimal;

use super::RelayError;
use crate::iso20022::CurrencyCode;
use crate::ledger::{AccountKind, AgentId, AgentLedger, NetworkSnapshot, Principal};

/// A registered agent: its ledger, the principal the relay acts as, and the
/// nostro relationships and rates it uses at hop boundaries.
#[derive(Debug)]
pub struct AgentEntry {
    agent: AgentId,
    ledger: Mutex<AgentLedger>,
    pub operator: Principal,
    nostros: BTreeMap<AgentId, (String, CurrencyCode)>,
    rates: BTreeMap<(CurrencyCode, CurrencyCode), Decimal>,
}

impl AgentEntry {
    pub fn agent(&self) -> &AgentId {
        &self.agent
    }

    fn lock(&self) -> MutexGuard<'_, AgentLedger> {
        self.ledger.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn nostro_relationships(&self) -> impl Iterator<Item = (&AgentId, &str)> {
        self.nostros.iter().map(|(cp, (acc, _))| (cp, acc.as_str()))
    }

    pub fn nostro_account(&self, counterparty: &AgentId) -> Result<&str, RelayError> {
        self.nostros
            .get(counterparty)
            .map(|(acc, _)| acc.as_str())
            .ok_or_else(|| RelayError::MissingNostroRelationship {
                agent: self.agent.clone(),
                counterparty: counterparty.clone(),
            })
    }

    pub fn nostro_currency(&self, counterparty: &AgentId) -> Result<CurrencyCode, RelayError> {
        self.nostro_account(counterparty)?;
        Ok(self.nostros[counterparty].1)
    }

    pub fn rate(&self, from: CurrencyCode, to: CurrencyCode) -> Result<Decimal, RelayError> {
        self.rates
            .get(&(from, to))
            .copied()
            .ok_or_else(|| RelayError::MissingRate {
                agent: self.agent.clone(),
                from,
                to,
            })
    }
}

#[derive(Debug, Default)]
pub struct AgentDirectory {
    entries: BTreeMap<AgentId, AgentEntry>,
}

impl AgentDirectory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a ledger. Its Nostro accounts become the agent's nostro
    /// relationships, so every relationship names an existing Nostro account.
    pub fn register(&mut self, ledger: AgentLedger, operator: Principal) -> Result<(), RelayError> {
        let agent = ledger.agent().clone();
        if self.entries.contains_key(&agent) {
            return Err(RelayError::DuplicateAgent(agent));
        }
        let nostros = ledger
            .accounts()
            .filter(|a| a.kind == AccountKind::Nostro)
            .filter_map(|a| {
                a.counterparty
                    .clone()
                    .map(|cp| (cp, (a.account_number.clone(), a.currency())))
            })
            .collect();
        self.entries.insert(
            agent.clone(),
            AgentEntry {
                agent,
                ledger: Mutex::new(ledger),
                operator,
                nostros,
                rates: BTreeMap::new(),
            },
        );
        Ok(())
    }

    pub fn set_rate(
        &mut self,
        agent: &AgentId,
        from: CurrencyCode,
        to: CurrencyCode,
        rate: Decimal,
    ) -> Result<(), RelayError> {
        if rate <= Decimal::ZERO {
            return Err(RelayError::InvalidRate(rate));
        }
        let entry = self
            .entries
            .get_mut(agent)
            .ok_or_else(|| RelayError::UnknownAgent(agent.clone()))?;
        entry.rates.insert((from, to), rate);
        Ok(())
    }

    pub fn entry(&self, agent: &AgentId) -> Result<&AgentEntry, RelayError> {
        self.entries
            .get(agent)
            .ok_or_else(|| RelayError::UnknownAgent(agent.clone()))
    }

    pub fn agents(&self) -> impl Iterator<Item = &AgentId> {
        self.entries.keys()
    }

    /// Runs `f` with the agent's ledger locked for reading.
    pub fn with_ledger<R>(&self, agent: &AgentId, f: impl FnOnce(&AgentLedger) -> R) -> Result<R, RelayError> {
        Ok(f(&self.entry(agent)?.lock()))
    }

    /// Runs `f` with the agent's ledger locked for writing.
    pub fn with_entry<R>(
        &self,
        agent: &AgentId,
        f: impl FnOnce(&AgentEntry, &mut AgentLedger) -> R,
    ) -> Result<R, RelayError> {
        let entry = self.entry(agent)?;
        let mut ledger = entry.lock();
        Ok(f(entry, &mut ledger))
    }

    pub fn snapshot(&self) -> NetworkSnapshot {
        NetworkSnapshot {
            agents: self
                .entries
                .iter()
                .map(|(agent, entry)| (agent.clone(), entry.lock().snapshot()))
                .collect(),
        }
    }

    pub fn into_ledgers(self) -> Vec<AgentLedger> {
        self.entries
            .into_values()
            .map(|e| e.ledger.into_inner().unwrap_or_else(|e| e.into_inner()))
            .collect()
    }
}
