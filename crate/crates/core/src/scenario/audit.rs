//! The audit trail: one JSON object per line.
//!
//! The first line is a header, the last an end marker. Between them every
//! ledger event, currency conversion and final status report of the run
//! appears exactly once under a gap-free sequence number.

use std::collections::BTreeMap;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::{ScenarioError, TrailEntry, TransactionRun};
use crate::clock::SimTime;
use crate::digest::{sha256_hex, DIGEST_ALGORITHM};
use crate::iso20022::{serialize_pacs002, PaymentStatus};
use crate::ledger::{AgentId, Amount, EventKind, NetworkSnapshot, Posting};
use crate::relay::{convert_at_boundary, OutcomeStatus};

pub const AUDIT_FORMAT: &str = "cbpr-audit/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum AuditRecord {
    Header {
        format: String,
        digest: String,
        seed: u64,
        initial_snapshot: String,
    },
    Event {
        seq: u64,
        end_to_end_id: String,
        agent: AgentId,
        kind: EventKind,
        ledger_sequence: u64,
        timestamp: SimTime,
        time: String,
        posting: Posting,
        message_digest: String,
        balances_digest: String,
        iso_message: String,
    },
    Fx {
        seq: u64,
        end_to_end_id: String,
        agent: AgentId,
        from: Amount,
        to: Amount,
        rate: Decimal,
    },
    Status {
        seq: u64,
        end_to_end_id: String,
        outcome: OutcomeStatus,
        status: PaymentStatus,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
        message_digest: String,
        pacs002: String,
    },
    End {
        entries: u64,
        final_snapshot: String,
    },
}

impl AuditRecord {
    pub fn seq(&self) -> Option<u64> {
        match self {
            Self::Event { seq, .. } | Self::Fx { seq, .. } | Self::Status { seq, .. } => Some(*seq),
            Self::Header { .. } | Self::End { .. } => None,
        }
    }

    pub fn to_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("audit record serializes");
        line.push('\n');
        line
    }
}

pub(crate) fn build_trail(
    seed: u64,
    initial: &NetworkSnapshot,
    final_snapshot: &NetworkSnapshot,
    runs: &[TransactionRun],
) -> Vec<AuditRecord> {
    let mut out = vec![AuditRecord::Header {
        format: AUDIT_FORMAT.into(),
        digest: DIGEST_ALGORITHM.into(),
        seed,
        initial_snapshot: initial.digest(),
    }];
    let mut seq = 0;
    for run in runs {
        let e2e = &run.outcome.end_to_end_id;
        for entry in &run.entries {
            seq += 1;
            out.push(match entry {
                TrailEntry::Event { event, balances_digest } => {
                    let iso = String::from_utf8_lossy(&event.iso_message).into_owned();
                    AuditRecord::Event {
                        seq,
                        end_to_end_id: event.end_to_end_id.clone(),
                        agent: event.agent.clone(),
                        kind: event.kind,
                        ledger_sequence: event.sequence,
                        timestamp: event.timestamp,
                        time: event.timestamp.as_datetime().to_rfc3339(),
                        posting: event.posting.clone(),
                        message_digest: sha256_hex(&event.iso_message),
                        balances_digest: balances_digest.clone(),
                        iso_message: iso,
                    }
                }
                TrailEntry::Fx(c) => AuditRecord::Fx {
                    seq,
                    end_to_end_id: e2e.clone(),
                    agent: c.agent.clone(),
                    from: c.from,
                    to: c.to,
                    rate: c.rate,
                },
            });
        }
        seq += 1;
        let report = &run.outcome.final_report;
        let xml = serialize_pacs002(report);
        out.push(AuditRecord::Status {
            seq,
            end_to_end_id: e2e.clone(),
            outcome: run.outcome.status,
            status: report.status,
            reason: report.reason.clone(),
            message_digest: sha256_hex(&xml),
            pacs002: String::from_utf8_lossy(&xml).into_owned(),
        });
    }
    out.push(AuditRecord::End {
        entries: seq,
        final_snapshot: final_snapshot.digest(),
    });
    out
}

/// What a successful replay established.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayReport {
    pub final_snapshot: NetworkSnapshot,
    pub entries: u64,
    pub events: u64,
    pub transactions: u64,
}

/// Re-applies every posting of `trail` to `initial`, checking sequence
/// continuity, message digests and the per-event balance digests.
pub fn replay_trail(trail: &str, initial: &NetworkSnapshot) -> Result<ReplayReport, ScenarioError> {
    let corrupt = |msg: String| ScenarioError::CorruptTrail(msg);
    let mut lines = trail.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let parse = |(n, line): (usize, &str)| {
        serde_json::from_str::<AuditRecord>(line).map_err(|e| corrupt(format!("line {}: {e}", n + 1)))
    };

    match lines.next().map(parse).transpose()? {
        Some(AuditRecord::Header {
            format,
            digest,
            initial_snapshot,
            ..
        }) => {
            if format != AUDIT_FORMAT {
                return Err(corrupt(format!("unsupported format '{format}'")));
            }
            if digest != DIGEST_ALGORITHM {
                return Err(corrupt(format!("unsupported digest algorithm '{digest}'")));
            }
            if initial_snapshot != initial.digest() {
                return Err(corrupt("initial snapshot does not match the trail header".into()));
            }
        }
        Some(_) => return Err(corrupt("first record is not a header".into())),
        None => return Err(corrupt("trail is empty".into())),
    }

    let mut state = initial.clone();
    let mut last_ledger_seq: BTreeMap<AgentId, u64> = BTreeMap::new();
    let mut events = 0;
    let mut transactions = 0;
    for (expected, item) in (1..).zip(lines.by_ref()) {
        let record = parse(item)?;
        if let AuditRecord::End {
            entries,
            final_snapshot,
        } = &record
        {
            if *entries != expected - 1 {
                return Err(corrupt(format!(
                    "end record counts {entries} entries, trail holds {}",
                    expected - 1
                )));
            }
            if *final_snapshot != state.digest() {
                return Err(corrupt(
                    "replayed balances differ from the recorded final snapshot".into(),
                ));
            }
            if let Some((n, _)) = lines.next() {
                return Err(corrupt(format!("line {}: record after the end marker", n + 1)));
            }
            return Ok(ReplayReport {
                final_snapshot: state,
                entries: *entries,
                events,
                transactions,
            });
        }
        let seq = record
            .seq()
            .ok_or_else(|| corrupt("header repeated inside the trail".into()))?;
        if seq != expected {
            return Err(corrupt(format!("sequence gap: expected {expected}, found {seq}")));
        }
        match record {
            AuditRecord::Event {
                agent,
                ledger_sequence,
                posting,
                message_digest,
                balances_digest,
                iso_message,
                ..
            } => {
                if sha256_hex(iso_message.as_bytes()) != message_digest {
                    return Err(corrupt(format!("entry {seq}: message digest mismatch")));
                }
                let last = last_ledger_seq.entry(agent.clone()).or_insert(0);
                if ledger_sequence <= *last {
                    return Err(corrupt(format!(
                        "entry {seq}: ledger sequence {ledger_sequence} of {agent} does not follow {last}"
                    )));
                }
                *last = ledger_sequence;
                let ledger = state
                    .agents
                    .get_mut(&agent)
                    .ok_or_else(|| corrupt(format!("entry {seq}: unknown agent {agent}")))?;
                ledger
                    .apply(&posting)
                    .map_err(|e| corrupt(format!("entry {seq}: {e}")))?;
                if ledger.digest() != balances_digest {
                    return Err(corrupt(format!("entry {seq}: balances of {agent} do not match")));
                }
                events += 1;
            }
            AuditRecord::Fx { from, to, rate, .. } => {
                let recomputed =
                    convert_at_boundary(from, to.currency, rate).map_err(|e| corrupt(format!("entry {seq}: {e}")))?;
                if recomputed != to {
                    return Err(corrupt(format!(
                        "entry {seq}: {from} at {rate} is {recomputed}, not {to}"
                    )));
                }
            }
            AuditRecord::Status {
                message_digest,
                pacs002,
                ..
            } => {
                if sha256_hex(pacs002.as_bytes()) != message_digest {
                    return Err(corrupt(format!("entry {seq}: message digest mismatch")));
                }
                transactions += 1;
            }
            AuditRecord::Header { .. } | AuditRecord::End { .. } => unreachable!(),
        }
    }
    Err(corrupt("trail ends without an end record".into()))
}
