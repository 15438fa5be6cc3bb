//! Deterministic simulator for cross-border credit transfers.
//!
//! Payments travel as ISO 20022 pacs.008 messages between agent banks. Each
//! bank runs a contract-style [`ledger::AgentLedger`] holding General and
//! Nostro accounts; a [`relay`] reacts to ledger events and drives the
//! payment hop by hop, unwinding it with pacs.004 returns when a hop fails.
//! [`metering`] attributes gas-style unit costs to ledger calls and
//! [`scenario`] wires everything to configuration files, audit trails and
//! reports.

pub mod clock;
pub mod digest;
pub mod iso20022;
pub mod ledger;
pub mod metering;
pub mod relay;
pub mod scenario;
