//! ISO 20022 pacs message codec.
//!
//! Covers the subset of `pacs.008` (customer credit transfer), `pacs.002`
//! (payment status report) and `pacs.004` (payment return) that the payment
//! relay needs. Element paths follow the `Document/FIToFICstmrCdtTrf/{GrpHdr,
//! CdtTrfTxInf}` layout; the supported subset is documented in
//! `schema/pacs008-subset.md` at the repository root.
//!
//! All functions here are pure. Output is canonical: UTF-8, a single default
//! namespace on `Document`, fixed element order, no insignificant whitespace
//! and amounts written with the currency's minor units.

mod pacs008;
mod reports;
mod types;
pub mod xml;

use thiserror::Error;

pub use pacs008::{
    advance_message, decode_pacs008, extract_debtor_instruction, parse_pacs008, serialize_pacs008,
    validate_control_sum, CreditTransferTxInfo, DebtorInstruction, GroupHeader, MessageStamp, Pacs008Message,
    MAX_ACCOUNT_ID_LEN, MAX_ID_LEN, MAX_INTERMEDIARIES, MAX_NAME_LEN, PACS008_NAMESPACE,
};
pub use reports::{
    build_pacs002, build_pacs004, parse_pacs002, parse_pacs004, serialize_pacs002, serialize_pacs004, Pacs002Report,
    Pacs004Return, PaymentStatus, PACS002_NAMESPACE, PACS004_NAMESPACE,
};
pub use types::{format_scaled, parse_plain_decimal, BicCode, CurrencyCode, MoneyAmount, MAX_TOTAL_DIGITS};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("malformed XML: {0}")]
    MalformedXml(String),
    #[error("schema violation at {path}: {detail}")]
    SchemaViolation { path: String, detail: String },
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("message carries {count} transactions; only single-transaction messages are supported")]
    MultiTransactionUnsupported { count: usize },
    #[error("hop mismatch: message is held by {holder}, not {from}")]
    HopMismatch { holder: BicCode, from: BicCode },
    #[error("a rejected status report requires a reason")]
    MissingReason,
    #[error("invalid BIC '{0}'")]
    InvalidBic(String),
    #[error("invalid currency code '{0}'")]
    InvalidCurrency(String),
    #[error("invalid amount: {0}")]
    InvalidAmount(String),
}

impl CodecError {
    pub(crate) fn schema(path: impl Into<String>, detail: impl Into<String>) -> Self {
        Self::SchemaViolation {
            path: path.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn missing(path: impl Into<String>) -> Self {
        Self::schema(path, "required element is missing")
    }
}
