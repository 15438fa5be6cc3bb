#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cbpr_core::iso20022::xml::XmlElement;
use cbpr_core::iso20022::{
    BicCode, CreditTransferTxInfo, CurrencyCode, DebtorInstruction, MoneyAmount, Pacs008Message,
};
use cbpr_core::ledger::{AccountKind, AgentId};
use cbpr_core::scenario::config::{RawAccount, RawAgent, RawScenario, RawTransaction};
use cbpr_core::scenario::ScenarioConfig;
use chrono::{DateTime, TimeZone, Utc};
use proptest::prelude::*;
use rust_decimal::Decimal;

pub fn bic(s: &str) -> AgentId {
    BicCode::new(s).unwrap()
}

pub fn ccy(s: &str) -> CurrencyCode {
    CurrencyCode::new(s).unwrap()
}

pub fn money(c: &str, v: &str) -> MoneyAmount {
    MoneyAmount::parse(ccy(c), v).unwrap()
}

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub struct Fixture {
    pub name: String,
    pub xml: Vec<u8>,
    /// `path = value` lines of the sidecar.
    pub fields: BTreeMap<String, String>,
}

impl Fixture {
    pub fn field(&self, path: &str) -> &str {
        self.fields
            .get(path)
            .unwrap_or_else(|| panic!("{}: sidecar lacks {path}", self.name))
    }
}

pub fn pacs008_fixtures() -> Vec<Fixture> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/pacs008");
    let mut names: Vec<String> = std::fs::read_dir(&dir)
        .unwrap()
        .filter_map(|e| {
            let name = e.unwrap().file_name().to_string_lossy().into_owned();
            name.strip_suffix(".xml").map(str::to_string)
        })
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|name| {
            let xml = std::fs::read(dir.join(format!("{name}.xml"))).unwrap();
            let sidecar = std::fs::read_to_string(dir.join(format!("{name}.txt"))).unwrap();
            let fields = sidecar
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| {
                    let (k, v) = l.split_once(" = ").expect("sidecar line is 'path = value'");
                    (k.to_string(), v.to_string())
                })
                .collect();
            Fixture { name, xml, fields }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// message generation

pub const BICS: [&str; 8] = [
    "AAAAUS33", "BBBBDEFF", "CCCCGB2L", "DDDDJPJT", "EEEECH22", "FFFFFRPP", "GGGGSGSG", "HHHHAU2S",
];

pub fn arb_bic() -> impl Strategy<Value = BicCode> {
    prop_oneof![
        prop::sample::select(BICS.to_vec()).prop_map(bic),
        "[A-Z]{6}[A-Z2-9][A-NP-Z0-9]([A-Z0-9]{3})?".prop_map(|s| bic(&s)),
    ]
}

/// Printable text with markup-significant characters, no surrounding blanks.
pub fn arb_text(max: usize) -> impl Strategy<Value = String> {
    let inner = format!("[A-Za-z0-9&<>'\" ./-]{{0,{}}}", max.saturating_sub(2));
    (
        "[A-Za-z0-9&<>'\"-]",
        proptest::string::string_regex(&inner).unwrap(),
        "[A-Za-z0-9&<>'\"-]",
    )
        .prop_map(|(a, b, c)| format!("{a}{}{c}", b.trim()))
}

pub fn arb_currency() -> impl Strategy<Value = CurrencyCode> {
    prop::sample::select(vec!["USD", "EUR", "GBP", "JPY", "CHF", "BHD"]).prop_map(ccy)
}

/// A positive amount from an integer count of minor units.
pub fn amount_from_minor(currency: CurrencyCode, minor: u64) -> MoneyAmount {
    MoneyAmount::new(currency, Decimal::new(minor as i64, currency.minor_units())).unwrap()
}

pub fn arb_time() -> impl Strategy<Value = DateTime<Utc>> {
    (1_600_000_000i64..1_900_000_000, prop::option::of(1u32..1000))
        .prop_map(|(secs, millis)| Utc.timestamp_opt(secs, millis.unwrap_or(0) * 1_000_000).unwrap())
}

#[derive(Debug, Clone)]
pub struct TxSpec {
    pub end_to_end_id: String,
    pub minor: u64,
    pub debtor_name: String,
    pub debtor_account: String,
    pub debtor_agent: BicCode,
    pub creditor_name: String,
    pub creditor_account: String,
    pub creditor_agent: BicCode,
    pub intermediaries: Vec<BicCode>,
    pub instr_id: Option<String>,
    pub remittance: Option<String>,
}

pub fn arb_tx() -> impl Strategy<Value = TxSpec> {
    (
        (
            arb_text(35),
            1u64..10_000_000_000,
            arb_text(140),
            arb_text(34),
            arb_bic(),
        ),
        (
            arb_text(140),
            arb_text(34),
            arb_bic(),
            prop::collection::vec(arb_bic(), 0..=3),
        ),
        (prop::option::of(arb_text(35)), prop::option::of(arb_text(140))),
    )
        .prop_map(
            |((e2e, minor, dn, da, dag), (cn, ca, cag, mids), (instr, rmt))| TxSpec {
                end_to_end_id: e2e,
                minor,
                debtor_name: dn,
                debtor_account: da,
                debtor_agent: dag,
                creditor_name: cn,
                creditor_account: ca,
                creditor_agent: cag,
                intermediaries: mids,
                instr_id: instr,
                remittance: rmt,
            },
        )
}

#[derive(Debug, Clone)]
pub struct MessageSpec {
    pub msg_id: String,
    pub creation_time: DateTime<Utc>,
    pub instructing: BicCode,
    pub instructed: BicCode,
    pub currency: CurrencyCode,
    pub txs: Vec<TxSpec>,
}

impl MessageSpec {
    pub fn tx_info(&self, tx: &TxSpec) -> CreditTransferTxInfo {
        CreditTransferTxInfo {
            end_to_end_id: tx.end_to_end_id.clone(),
            settlement_amount: amount_from_minor(self.currency, tx.minor),
            debtor_name: tx.debtor_name.clone(),
            debtor_account: tx.debtor_account.clone(),
            debtor_agent: tx.debtor_agent.clone(),
            creditor_name: tx.creditor_name.clone(),
            creditor_account: tx.creditor_account.clone(),
            creditor_agent: tx.creditor_agent.clone(),
            intermediary_agents: tx.intermediaries.clone(),
            payment_id_extras: tx
                .instr_id
                .iter()
                .map(|i| XmlElement::with_text("InstrId", i.clone()))
                .collect(),
            extras: tx
                .remittance
                .iter()
                .map(|r| {
                    let mut el = XmlElement::new("RmtInf");
                    el.push(XmlElement::with_text("Ustrd", r.clone()));
                    el
                })
                .collect(),
        }
    }

    pub fn build(&self) -> Pacs008Message {
        Pacs008Message::assemble(
            self.msg_id.clone(),
            self.creation_time,
            self.instructing.clone(),
            self.instructed.clone(),
            self.txs.iter().map(|t| self.tx_info(t)).collect(),
        )
        .unwrap()
    }

    /// Sum of the amounts in minor units, computed on integers.
    pub fn minor_sum(&self) -> u128 {
        self.txs.iter().map(|t| t.minor as u128).sum()
    }
}

pub fn arb_message(max_txs: usize) -> impl Strategy<Value = MessageSpec> {
    (
        arb_text(35),
        arb_time(),
        arb_bic(),
        arb_bic(),
        arb_currency(),
        prop::collection::vec(arb_tx(), 1..=max_txs),
    )
        .prop_map(
            |(msg_id, creation_time, instructing, instructed, currency, txs)| MessageSpec {
                msg_id,
                creation_time,
                instructing,
                instructed,
                currency,
                txs,
            },
        )
}

/// Instruction for a single-transaction message from `debtor_agent` to
/// `instructed`.
#[allow(clippy::too_many_arguments)]
pub fn instruction(
    debtor_agent: &AgentId,
    instructed: &AgentId,
    creditor_agent: &AgentId,
    debtor_account: &str,
    creditor_account: &str,
    amount: MoneyAmount,
    e2e: &str,
) -> DebtorInstruction {
    let tx = CreditTransferTxInfo {
        end_to_end_id: e2e.into(),
        settlement_amount: amount,
        debtor_name: "Debtor".into(),
        debtor_account: debtor_account.into(),
        debtor_agent: debtor_agent.clone(),
        creditor_name: "Creditor".into(),
        creditor_account: creditor_account.into(),
        creditor_agent: creditor_agent.clone(),
        intermediary_agents: Vec::new(),
        payment_id_extras: Vec::new(),
        extras: Vec::new(),
    };
    let msg = Pacs008Message::assemble(
        format!("M-{e2e}"),
        chrono::Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
        debtor_agent.clone(),
        instructed.clone(),
        vec![tx],
    )
    .unwrap();
    DebtorInstruction::from_message(&msg).unwrap()
}

// ---------------------------------------------------------------------------
// linear networks

pub fn chain_agent(i: usize) -> String {
    format!("CH{}{}US33", (b'A' + i as u8) as char, (b'A' + i as u8) as char)
}

/// A chain of `agents` agents in one currency with nostros both ways between
/// neighbours. `inbound[i]` funds the nostro agent `i + 1` holds for agent
/// `i` (the account debited when agent `i + 1` receives a payment from `i`);
/// reverse nostros hold `reverse_funding`. One transaction of `amount` runs
/// from the first to the last agent.
pub fn chain_scenario(
    currency: &str,
    debtor_balance: &str,
    inbound: &[String],
    reverse_funding: &str,
    amount: &str,
) -> ScenarioConfig {
    let n = inbound.len() + 1;
    let names: Vec<String> = (0..n).map(chain_agent).collect();
    let mut accounts = vec![RawAccount {
        agent: names[0].clone(),
        number: "DEBTOR".into(),
        kind: AccountKind::General,
        currency: currency.into(),
        balance: Some(debtor_balance.into()),
        owner: Some("Debtor".into()),
        counterparty: None,
    }];
    for i in 0..n - 1 {
        accounts.push(RawAccount {
            agent: names[i].clone(),
            number: format!("NOS-{}", &names[i + 1][..4]),
            kind: AccountKind::Nostro,
            currency: currency.into(),
            balance: Some(reverse_funding.into()),
            owner: None,
            counterparty: Some(names[i + 1].clone()),
        });
        accounts.push(RawAccount {
            agent: names[i + 1].clone(),
            number: format!("NOS-{}", &names[i][..4]),
            kind: AccountKind::Nostro,
            currency: currency.into(),
            balance: Some(inbound[i].clone()),
            owner: None,
            counterparty: Some(names[i].clone()),
        });
    }
    accounts.push(RawAccount {
        agent: names[n - 1].clone(),
        number: "CREDITOR".into(),
        kind: AccountKind::General,
        currency: currency.into(),
        balance: None,
        owner: Some("Creditor".into()),
        counterparty: None,
    });
    let raw = RawScenario {
        seed: 0,
        agents: names
            .iter()
            .map(|b| RawAgent {
                bic: b.clone(),
                deployer: format!("ops-{}", &b[..4]),
            })
            .collect(),
        accounts,
        fx_rates: Vec::new(),
        transactions: vec![RawTransaction {
            end_to_end_id: Some("E2E-CHAIN".into()),
            debtor_agent: names[0].clone(),
            debtor_account: "DEBTOR".into(),
            debtor_name: Some("Debtor".into()),
            creditor_agent: names[n - 1].clone(),
            creditor_account: "CREDITOR".into(),
            creditor_name: Some("Creditor".into()),
            path: names.clone(),
            amount: amount.into(),
            currency: currency.into(),
        }],
        cost_table: None,
    };
    ScenarioConfig::from_raw(raw).unwrap()
}
