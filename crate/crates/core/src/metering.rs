//! Gas-style metering of ledger calls.
//!
//! Every successful ledger operation is charged
//! `base_cost[op] + per_byte_cost * message_len`, where `message_len` is the
//! byte length of the ISO message carried by transfer operations (zero for
//! everything else). Records aggregate into a per-function report with the
//! columns `min avg median max # calls`.
//!
//! The default bases are the minimum gas figures measured for the original
//! Solidity contract. They calibrate magnitudes only; nothing here models EVM
//! execution.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Mutex;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::SimTime;
use crate::iso20022::BicCode;

pub const CREATE_ACCOUNT: &str = "create_account";
pub const DEPOSIT: &str = "deposit";
pub const GET_BALANCE: &str = "get_balance";
pub const GRANT_ROLE: &str = "grant_role";
pub const INITIATE_TRANSFER: &str = "initiate_transfer";
pub const MAKE_TRANSFER: &str = "make_transfer";
pub const RETURN_TRANSFER: &str = "return_transfer";

/// Every operation a ledger charges for.
pub const METERED_OPERATIONS: [&str; 7] = [
    CREATE_ACCOUNT,
    DEPOSIT,
    GET_BALANCE,
    GRANT_ROLE,
    INITIATE_TRANSFER,
    MAKE_TRANSFER,
    RETURN_TRANSFER,
];

pub const DEFAULT_PER_BYTE_COST: u64 = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MeteringError {
    #[error("unknown operation '{0}'")]
    UnknownOperation(String),
    #[error("cost table does not cover operation '{0}'")]
    IncompleteTable(String),
    #[error("invalid cost table: {0}")]
    InvalidTable(String),
    #[error("fee computation overflowed")]
    FeeOverflow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostTable {
    pub base_cost: BTreeMap<String, u64>,
    pub per_byte_cost: u64,
}

impl Default for CostTable {
    fn default() -> Self {
        let base_cost = [
            (CREATE_ACCOUNT, 26_660),
            (DEPOSIT, 30_351),
            (GET_BALANCE, 921),
            (GRANT_ROLE, 26_660),
            (INITIATE_TRANSFER, 121_580),
            (MAKE_TRANSFER, 135_213),
            (RETURN_TRANSFER, 135_213),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Self {
            base_cost,
            per_byte_cost: DEFAULT_PER_BYTE_COST,
        }
    }
}

/// Partial table as written in config files; merged over the defaults.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostTableOverride {
    #[serde(default)]
    pub base_cost: BTreeMap<String, u64>,
    pub per_byte_cost: Option<u64>,
}

impl CostTable {
    pub fn with_override(over: &CostTableOverride) -> Result<Self, MeteringError> {
        let mut table = Self::default();
        for (op, cost) in &over.base_cost {
            if !METERED_OPERATIONS.contains(&op.as_str()) {
                return Err(MeteringError::UnknownOperation(op.clone()));
            }
            table.base_cost.insert(op.clone(), *cost);
        }
        if let Some(per_byte) = over.per_byte_cost {
            table.per_byte_cost = per_byte;
        }
        table.check_coverage()?;
        Ok(table)
    }

    pub fn from_toml(text: &str) -> Result<Self, MeteringError> {
        let over: CostTableOverride = toml::from_str(text).map_err(|e| MeteringError::InvalidTable(e.to_string()))?;
        Self::with_override(&over)
    }

    pub fn check_coverage(&self) -> Result<(), MeteringError> {
        match METERED_OPERATIONS.iter().find(|op| !self.base_cost.contains_key(**op)) {
            Some(op) => Err(MeteringError::IncompleteTable(op.to_string())),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub operation: String,
    pub units: u64,
    pub timestamp: SimTime,
    pub ledger: BicCode,
}

/// Prices one call.
pub fn record(
    operation: &str,
    message_len: usize,
    table: &CostTable,
    ledger: &BicCode,
    timestamp: SimTime,
) -> Result<CallRecord, MeteringError> {
    let base = table
        .base_cost
        .get(operation)
        .ok_or_else(|| MeteringError::UnknownOperation(operation.to_string()))?;
    let units = table
        .per_byte_cost
        .checked_mul(message_len as u64)
        .and_then(|v| v.checked_add(*base))
        .ok_or(MeteringError::FeeOverflow)?;
    Ok(CallRecord {
        operation: operation.to_string(),
        units,
        timestamp,
        ledger: ledger.clone(),
    })
}

/// Append-only sink of call records owned by one ledger.
#[derive(Debug, Default)]
pub struct Meter {
    records: Mutex<Vec<CallRecord>>,
}

impl Clone for Meter {
    fn clone(&self) -> Self {
        Self {
            records: Mutex::new(self.records()),
        }
    }
}

impl Meter {
    pub fn push(&self, record: CallRecord) {
        self.records.lock().unwrap_or_else(|e| e.into_inner()).push(record);
    }

    pub fn records(&self) -> Vec<CallRecord> {
        self.records.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GasReportRow {
    pub operation: String,
    pub min: u64,
    pub avg: u64,
    pub median: u64,
    pub max: u64,
    pub call_count: usize,
}

/// Aggregates records into one row per operation, ordered by name.
///
/// `avg` is the floor of the mean and `median` the lower middle element for
/// even counts.
pub fn report<'a>(records: impl IntoIterator<Item = &'a CallRecord>) -> Vec<GasReportRow> {
    let mut by_op: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
    for r in records {
        by_op.entry(r.operation.as_str()).or_default().push(r.units);
    }
    by_op
        .into_iter()
        .map(|(op, mut units)| {
            units.sort_unstable();
            let n = units.len();
            let sum: u128 = units.iter().map(|&u| u as u128).sum();
            GasReportRow {
                operation: op.to_string(),
                min: units[0],
                avg: (sum / n as u128) as u64,
                median: units[(n - 1) / 2],
                max: units[n - 1],
                call_count: n,
            }
        })
        .collect()
}

pub const REPORT_HEADER: [&str; 6] = ["Function Name", "min", "avg", "median", "max", "# calls"];

/// Renders rows as a pipe table with the gas report's column layout.
pub fn render_table(rows: &[GasReportRow]) -> String {
    let cells: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            [
                r.operation.clone(),
                r.min.to_string(),
                r.avg.to_string(),
                r.median.to_string(),
                r.max.to_string(),
                r.call_count.to_string(),
            ]
        })
        .collect();
    let mut widths = REPORT_HEADER.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, row: &[&str]| {
        out.push('|');
        for (c, w) in row.iter().zip(widths) {
            let _ = write!(out, " {c:<w$} |");
        }
        out.push('\n');
    };
    line(&mut out, &REPORT_HEADER);
    out.push('|');
    for w in widths {
        out.push_str(&"-".repeat(w + 2));
        out.push('|');
    }
    out.push('\n');
    for row in &cells {
        let refs: Vec<&str> = row.iter().map(String::as_str).collect();
        line(&mut out, &refs);
    }
    out
}

/// Fee in ETH for `units` of gas at `price_gwei` per unit:
/// `units * price * 10^-9`, computed exactly.
pub fn compute_fee(units: u64, price_gwei: Decimal) -> Result<Decimal, MeteringError> {
    if price_gwei.is_sign_negative() && !price_gwei.is_zero() {
        return Err(MeteringError::InvalidTable("negative gas price".into()));
    }
    let mut fee = Decimal::from(units)
        .checked_mul(price_gwei)
        .ok_or(MeteringError::FeeOverflow)?;
    let scale = fee.scale() + 9;
    if scale > 28 {
        return Err(MeteringError::FeeOverflow);
    }
    fee.set_scale(scale).map_err(|_| MeteringError::FeeOverflow)?;
    Ok(fee.normalize())
}
