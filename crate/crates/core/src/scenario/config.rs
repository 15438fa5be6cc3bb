//! Scenario files.
//!
//! A scenario is a TOML document:
//!
//! ```toml
//! seed = 7
//!
//! [[agents]]
//! bic = "AAAAUS33"
//! deployer = "bank-a"
//!
//! [[accounts]]
//! agent = "AAAAUS33"
//! number = "ACC-001"
//! kind = "General"            # or "Nostro"
//! currency = "USD"
//! balance = "500.00"          # decimal string, optional
//! owner = "Alice"             # optional
//! counterparty = "BBBBDEFF"   # Nostro accounts only
//!
//! [[fx_rates]]
//! from = "USD"
//! to = "EUR"
//! rate = "0.9150"
//!
//! [[transactions]]
//! end_to_end_id = "E2E-0001"  # optional
//! debtor_agent = "AAAAUS33"
//! debtor_account = "ACC-001"
//! creditor_agent = "CCCCGB2L"
//! creditor_account = "ACC-002"
//! path = ["AAAAUS33", "BBBBDEFF", "CCCCGB2L"]
//! amount = "250.00"
//! currency = "USD"
//!
//! [cost_table]                # optional, merged over the defaults
//! per_byte_cost = 4
//! [cost_table.base_cost]
//! get_balance = 921
//! ```
//!
//! Loading never stops at the first problem: every violation is reported.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::iso20022::{parse_plain_decimal, BicCode, CurrencyCode, MoneyAmount, MAX_ACCOUNT_ID_LEN, MAX_ID_LEN};
use crate::ledger::{AccountKind, AccountSpec, AgentId, Principal};
use crate::metering::{CostTable, CostTableOverride};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawScenario {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub agents: Vec<RawAgent>,
    #[serde(default)]
    pub accounts: Vec<RawAccount>,
    #[serde(default)]
    pub fx_rates: Vec<RawRate>,
    #[serde(default)]
    pub transactions: Vec<RawTransaction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_table: Option<CostTableOverride>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawAgent {
    pub bic: String,
    pub deployer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawAccount {
    pub agent: String,
    pub number: String,
    pub kind: AccountKind,
    pub currency: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub balance: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterparty: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRate {
    pub from: String,
    pub to: String,
    pub rate: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawTransaction {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_to_end_id: Option<String>,
    pub debtor_agent: String,
    pub debtor_account: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub debtor_name: Option<String>,
    pub creditor_agent: String,
    pub creditor_account: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub creditor_name: Option<String>,
    pub path: Vec<String>,
    pub amount: String,
    pub currency: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentConfig {
    pub bic: AgentId,
    pub deployer: Principal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccountConfig {
    pub agent: AgentId,
    pub spec: AccountSpec,
    pub balance: MoneyAmount,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FxRate {
    pub from: CurrencyCode,
    pub to: CurrencyCode,
    pub rate: Decimal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransactionConfig {
    pub end_to_end_id: String,
    pub debtor_agent: AgentId,
    pub debtor_account: String,
    pub debtor_name: String,
    pub creditor_agent: AgentId,
    pub creditor_account: String,
    pub creditor_name: String,
    pub path: Vec<AgentId>,
    pub amount: MoneyAmount,
}

/// A fully validated scenario.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub agents: Vec<AgentConfig>,
    pub accounts: Vec<AccountConfig>,
    pub fx_rates: Vec<FxRate>,
    pub transactions: Vec<TransactionConfig>,
    pub cost_table: CostTable,
    raw: RawScenario,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}: {}", self.line, self.column, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationError {
    pub violations: Vec<String>,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} violation(s):", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::io(path, e))?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map(|span| line_column(text, span.start)).unwrap_or((1, 1));
        ScenarioError::Parse(ParseError {
            line,
            column,
            message: e.message().to_string(),
        })
    })?;
    ScenarioConfig::from_raw(raw)
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

impl ScenarioConfig {
    pub fn raw(&self) -> &RawScenario {
        &self.raw
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.raw).expect("scenario serializes")
    }

    pub fn from_raw(raw: RawScenario) -> Result<Self, ScenarioError> {
        let mut v = Vec::new();
        if i64::try_from(raw.seed).is_err() {
            v.push(format!("seed {} does not fit in a signed 64-bit integer", raw.seed));
        }

        let cost_table = match &raw.cost_table {
            Some(over) => CostTable::with_override(over).unwrap_or_else(|e| {
                v.push(format!("cost_table: {e}"));
                CostTable::default()
            }),
            None => CostTable::default(),
        };

        let mut agents = Vec::new();
        let mut agent_set = BTreeSet::new();
        for (i, a) in raw.agents.iter().enumerate() {
            if a.deployer.trim().is_empty() {
                v.push(format!("agents[{i}]: deployer must not be empty"));
            }
            let Some(bic) = bic_or(&mut v, &format!("agents[{i}].bic"), &a.bic) else {
                continue;
            };
            if !agent_set.insert(bic.clone()) {
                v.push(format!("agents[{i}]: agent {bic} declared twice"));
                continue;
            }
            agents.push(AgentConfig {
                bic,
                deployer: Principal::new(a.deployer.clone()),
            });
        }
        if agents.is_empty() {
            v.push("at least one agent is required".into());
        }

        let mut accounts = Vec::new();
        let mut numbers: BTreeMap<(AgentId, String), CurrencyCode> = BTreeMap::new();
        let mut generals: BTreeSet<(AgentId, String)> = BTreeSet::new();
        let mut nostros: BTreeMap<(AgentId, AgentId), CurrencyCode> = BTreeMap::new();
        for (i, a) in raw.accounts.iter().enumerate() {
            let at = format!("accounts[{i}] ({})", a.number);
            let agent = bic_or(&mut v, &format!("{at}.agent"), &a.agent);
            let currency = currency_or(&mut v, &format!("{at}.currency"), &a.currency);
            if let Some(agent) = &agent {
                if !agent_set.contains(agent) {
                    v.push(format!("{at}: agent {agent} is not declared"));
                }
            }
            let len = a.number.chars().count();
            if len == 0 || len > MAX_ACCOUNT_ID_LEN || a.number.trim() != a.number {
                v.push(format!(
                    "{at}: account number must be 1..={MAX_ACCOUNT_ID_LEN} characters without surrounding blanks"
                ));
            }
            let counterparty = match (&a.kind, &a.counterparty) {
                (AccountKind::Nostro, None) => {
                    v.push(format!("{at}: Nostro account requires a counterparty"));
                    None
                }
                (AccountKind::General, Some(_)) => {
                    v.push(format!("{at}: General account cannot have a counterparty"));
                    None
                }
                (AccountKind::Nostro, Some(cp)) => {
                    let cp = bic_or(&mut v, &format!("{at}.counterparty"), cp);
                    if let Some(cp) = &cp {
                        if !agent_set.contains(cp) {
                            v.push(format!("{at}: counterparty {cp} is not declared"));
                        }
                        if Some(cp) == agent.as_ref() {
                            v.push(format!("{at}: counterparty cannot be the holding agent"));
                        }
                    }
                    cp
                }
                (AccountKind::General, None) => None,
            };
            let (Some(agent), Some(currency)) = (agent, currency) else {
                continue;
            };
            let balance = match &a.balance {
                Some(text) => match MoneyAmount::parse(currency, text) {
                    Ok(b) => b,
                    Err(e) => {
                        v.push(format!("{at}.balance: {e}"));
                        continue;
                    }
                },
                None => MoneyAmount::zero(currency),
            };
            if numbers.insert((agent.clone(), a.number.clone()), currency).is_some() {
                v.push(format!(
                    "{at}: account number {} is declared twice on {agent}",
                    a.number
                ));
                continue;
            }
            let spec = match (&a.kind, counterparty) {
                (AccountKind::Nostro, Some(cp)) => {
                    if nostros.insert((agent.clone(), cp.clone()), currency).is_some() {
                        v.push(format!("{at}: {agent} already holds a nostro for {cp}"));
                    }
                    let mut spec = AccountSpec::nostro(a.number.clone(), currency, cp);
                    if let Some(owner) = &a.owner {
                        spec.owner = owner.clone();
                    }
                    spec
                }
                (AccountKind::General, _) => {
                    generals.insert((agent.clone(), a.number.clone()));
                    AccountSpec::general(
                        a.number.clone(),
                        currency,
                        a.owner.clone().unwrap_or_else(|| a.number.clone()),
                    )
                }
                (AccountKind::Nostro, None) => continue,
            };
            accounts.push(AccountConfig { agent, spec, balance });
        }

        let mut fx_rates = Vec::new();
        let mut pairs = BTreeSet::new();
        for (i, r) in raw.fx_rates.iter().enumerate() {
            let at = format!("fx_rates[{i}]");
            let from = currency_or(&mut v, &format!("{at}.from"), &r.from);
            let to = currency_or(&mut v, &format!("{at}.to"), &r.to);
            let rate = match parse_plain_decimal(&r.rate) {
                Ok(rate) if rate > Decimal::ZERO => Some(rate),
                Ok(_) => {
                    v.push(format!("{at}.rate must be positive"));
                    None
                }
                Err(e) => {
                    v.push(format!("{at}.rate: {e}"));
                    None
                }
            };
            if let (Some(from), Some(to), Some(rate)) = (from, to, rate) {
                if from == to {
                    v.push(format!("{at}: rate from {from} to itself"));
                } else if !pairs.insert((from, to)) {
                    v.push(format!("{at}: pair {from}/{to} declared twice"));
                } else {
                    fx_rates.push(FxRate { from, to, rate });
                }
            }
        }

        let mut transactions = Vec::new();
        let mut ids = BTreeSet::new();
        for (i, t) in raw.transactions.iter().enumerate() {
            let at = format!("transactions[{i}]");
            let e2e = t.end_to_end_id.clone().unwrap_or_else(|| default_end_to_end_id(i));
            let len = e2e.chars().count();
            if len == 0 || len > MAX_ID_LEN {
                v.push(format!("{at}: end_to_end_id must be 1..={MAX_ID_LEN} characters"));
            }
            if !ids.insert(e2e.clone()) {
                v.push(format!("{at}: end_to_end_id {e2e} is used twice"));
            }
            let debtor_agent = bic_or(&mut v, &format!("{at}.debtor_agent"), &t.debtor_agent);
            let creditor_agent = bic_or(&mut v, &format!("{at}.creditor_agent"), &t.creditor_agent);
            let currency = currency_or(&mut v, &format!("{at}.currency"), &t.currency);
            let amount = currency.and_then(|c| match MoneyAmount::parse(c, &t.amount) {
                Ok(a) if a.is_positive() => Some(a),
                Ok(_) => {
                    v.push(format!("{at}.amount must be positive"));
                    None
                }
                Err(e) => {
                    v.push(format!("{at}.amount: {e}"));
                    None
                }
            });
            let path: Vec<Option<AgentId>> = t
                .path
                .iter()
                .enumerate()
                .map(|(k, p)| bic_or(&mut v, &format!("{at}.path[{k}]"), p))
                .collect();
            let Some(path) = path.into_iter().collect::<Option<Vec<_>>>() else {
                continue;
            };
            if path.len() < 2 {
                v.push(format!("{at}: path needs at least two agents"));
                continue;
            }
            for (k, agent) in path.iter().enumerate() {
                if !agent_set.contains(agent) {
                    v.push(format!("{at}: path agent {agent} is not declared"));
                }
                if path[..k].contains(agent) {
                    v.push(format!("{at}: path visits {agent} twice"));
                }
            }
            for pair in path.windows(2) {
                let (x, y) = (&pair[0], &pair[1]);
                let forward = nostros.get(&(x.clone(), y.clone()));
                let backward = nostros.get(&(y.clone(), x.clone()));
                if forward.is_none() || backward.is_none() {
                    v.push(format!(
                        "{at}: hop {x} -> {y} has no nostro relationship in both directions"
                    ));
                }
            }
            let (Some(debtor_agent), Some(creditor_agent), Some(amount)) = (debtor_agent, creditor_agent, amount)
            else {
                continue;
            };
            if path[0] != debtor_agent {
                v.push(format!("{at}: path must start at the debtor agent {debtor_agent}"));
            }
            if path[path.len() - 1] != creditor_agent {
                v.push(format!("{at}: path must end at the creditor agent {creditor_agent}"));
            }
            for (role, agent, number) in [
                ("debtor", &debtor_agent, &t.debtor_account),
                ("creditor", &creditor_agent, &t.creditor_account),
            ] {
                let key = (agent.clone(), number.clone());
                if !generals.contains(&key) {
                    v.push(format!(
                        "{at}: {role} account {number} is not a declared General account on {agent}"
                    ));
                }
            }
            if let Some(c) = numbers.get(&(debtor_agent.clone(), t.debtor_account.clone())) {
                if *c != amount.currency {
                    v.push(format!(
                        "{at}: debtor account {} holds {c}, transaction is in {}",
                        t.debtor_account, amount.currency
                    ));
                }
            }
            transactions.push(TransactionConfig {
                end_to_end_id: e2e,
                debtor_agent,
                debtor_account: t.debtor_account.clone(),
                debtor_name: t.debtor_name.clone().unwrap_or_else(|| t.debtor_account.clone()),
                creditor_agent,
                creditor_account: t.creditor_account.clone(),
                creditor_name: t.creditor_name.clone().unwrap_or_else(|| t.creditor_account.clone()),
                path,
                amount,
            });
        }

        if !v.is_empty() {
            return Err(ScenarioError::Validation(ValidationError { violations: v }));
        }
        Ok(Self {
            seed: raw.seed,
            agents,
            accounts,
            fx_rates,
            transactions,
            cost_table,
            raw,
        })
    }

    /// Nostro relationships per agent: counterparty to account number.
    pub fn nostro_relationships(&self) -> BTreeMap<AgentId, BTreeMap<AgentId, String>> {
        let mut out: BTreeMap<AgentId, BTreeMap<AgentId, String>> = BTreeMap::new();
        for a in &self.accounts {
            if let Some(cp) = &a.spec.counterparty {
                out.entry(a.agent.clone())
                    .or_default()
                    .insert(cp.clone(), a.spec.account_number.clone());
            }
        }
        out
    }
}

pub fn default_end_to_end_id(index: usize) -> String {
    format!("E2E-{:04}", index + 1)
}

fn bic_or(v: &mut Vec<String>, at: &str, text: &str) -> Option<BicCode> {
    BicCode::new(text).map_err(|e| v.push(format!("{at}: {e}"))).ok()
}

fn currency_or(v: &mut Vec<String>, at: &str, text: &str) -> Option<CurrencyCode> {
    CurrencyCode::new(text).map_err(|e| v.push(format!("{at}: {e}"))).ok()
}
