//! Seeded random scenarios over a linear chain of agents.

use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{RawAccount, RawAgent, RawScenario, RawTransaction, ScenarioConfig};
use crate::ledger::AccountKind;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    /// Agents strictly between debtor and creditor agent on the longest path.
    pub intermediaries: RangeInclusive<usize>,
    pub transactions: RangeInclusive<usize>,
    pub currency: String,
    /// Largest amount in minor units.
    pub max_amount_minor: u64,
    /// Chance that a nostro is funded below typical amounts, forcing
    /// mid-chain failures.
    pub shortfall_probability: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            intermediaries: 1..=5,
            transactions: 1..=6,
            currency: "USD".into(),
            max_amount_minor: 100_000,
            shortfall_probability: 0.2,
        }
    }
}

/// BIC of the `i`-th generated agent.
pub fn agent_bic(i: usize) -> String {
    let a = (b'A' + (i / 26 % 26) as u8) as char;
    let b = (b'A' + (i % 26) as u8) as char;
    format!("GN{a}{b}US33")
}

fn amount(rng: &mut ChaCha8Rng, max_minor: u64) -> String {
    let minor = rng.gen_range(0..=max_minor);
    format!("{}.{:02}", minor / 100, minor % 100)
}

/// Generates a valid scenario: a chain of agents with nostros both ways
/// between neighbours, one customer account per agent and transactions
/// along random sub-chains with at least one intermediary. Only the low 63
/// bits of `seed` are used, so the seed stays writable as a TOML integer.
pub fn generate_scenario(seed: u64, params: &GeneratorParams) -> ScenarioConfig {
    let seed = seed & i64::MAX as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let agents = rng.gen_range(params.intermediaries.clone()) + 2;
    let bics: Vec<String> = (0..agents).map(agent_bic).collect();
    let ccy = params.currency.clone();
    let max = params.max_amount_minor;

    let mut raw = RawScenario {
        seed,
        agents: bics
            .iter()
            .map(|b| RawAgent {
                bic: b.clone(),
                deployer: format!("ops-{}", &b[..4]),
            })
            .collect(),
        accounts: Vec::new(),
        fx_rates: Vec::new(),
        transactions: Vec::new(),
        cost_table: None,
    };
    for (i, bic) in bics.iter().enumerate() {
        raw.accounts.push(RawAccount {
            agent: bic.clone(),
            number: format!("CUST-{i:02}"),
            kind: AccountKind::General,
            currency: ccy.clone(),
            balance: Some(amount(&mut rng, 2 * max)),
            owner: Some(format!("Customer {i}")),
            counterparty: None,
        });
        for j in [i.wrapping_sub(1), i + 1] {
            let Some(cp) = bics.get(j) else { continue };
            let balance = if rng.gen_bool(params.shortfall_probability) {
                amount(&mut rng, max / 20)
            } else {
                amount(&mut rng, 4 * max)
            };
            raw.accounts.push(RawAccount {
                agent: bic.clone(),
                number: format!("NOS-{}", &cp[..4]),
                kind: AccountKind::Nostro,
                currency: ccy.clone(),
                balance: Some(balance),
                owner: None,
                counterparty: Some(cp.clone()),
            });
        }
    }
    let count = rng.gen_range(params.transactions.clone());
    for _ in 0..count {
        let len = rng.gen_range(3..=agents);
        let start = rng.gen_range(0..=agents - len);
        let mut path: Vec<usize> = (start..start + len).collect();
        if rng.gen_bool(0.5) {
            path.reverse();
        }
        let (d, c) = (path[0], path[len - 1]);
        raw.transactions.push(RawTransaction {
            end_to_end_id: None,
            debtor_agent: bics[d].clone(),
            debtor_account: format!("CUST-{d:02}"),
            debtor_name: Some(format!("Customer {d}")),
            creditor_agent: bics[c].clone(),
            creditor_account: format!("CUST-{c:02}"),
            creditor_name: Some(format!("Customer {c}")),
            path: path.iter().map(|&k| bics[k].clone()).collect(),
            amount: format!("{}.{:02}", rng.gen_range(1..=max / 100), rng.gen_range(0..100)),
            currency: ccy.clone(),
        });
    }
    ScenarioConfig::from_raw(raw).expect("generated scenario is valid")
}
