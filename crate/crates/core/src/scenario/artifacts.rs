use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{ScenarioError, Simulation};
use crate::iso20022::{serialize_pacs002, serialize_pacs004, PaymentStatus};
use crate::ledger::Amount;
use crate::metering::{render_table, report};
use crate::relay::{Conversion, OutcomeStatus};

/// Per-transaction line of `outcomes.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OutcomeSummary {
    pub index: usize,
    pub end_to_end_id: String,
    pub status: OutcomeStatus,
    pub report_status: PaymentStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub hops_executed: usize,
    pub conversions: Vec<Conversion>,
    pub debtor_balance: Amount,
    pub creditor_balance: Amount,
}

impl Simulation {
    pub fn outcome_summaries(&self) -> Vec<OutcomeSummary> {
        self.runs
            .iter()
            .map(|r| OutcomeSummary {
                index: r.index,
                end_to_end_id: r.outcome.end_to_end_id.clone(),
                status: r.outcome.status,
                report_status: r.outcome.final_report.status,
                reason: r.outcome.final_report.reason.clone(),
                hops_executed: r.outcome.hops_executed,
                conversions: r.outcome.conversions.clone(),
                debtor_balance: r.debtor_balance,
                creditor_balance: r.creditor_balance,
            })
            .collect()
    }
}

/// Writes the run's outputs:
///
/// * `audit.jsonl`
/// * `snapshot_initial.json`, `snapshot_final.json`
/// * `gas_records.jsonl`, `gas_report.txt`, `gas_report.json`
/// * `outcomes.json`
/// * `messages/tx-NNNN/` with every pacs.008 as delivered, the pacs.004
///   returns and the final pacs.002
pub fn write_artifacts(sim: &Simulation, out_dir: &Path) -> Result<(), ScenarioError> {
    let write = |name: &str, content: &[u8]| {
        let path = out_dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| ScenarioError::io(parent, e))?;
        }
        fs::write(&path, content).map_err(|e| ScenarioError::io(&path, e))
    };

    let trail: String = sim.trail.iter().map(|r| r.to_line()).collect();
    write("audit.jsonl", trail.as_bytes())?;
    write("snapshot_initial.json", sim.initial.to_pretty_json().as_bytes())?;
    write("snapshot_final.json", sim.final_snapshot.to_pretty_json().as_bytes())?;

    let records: String = sim
        .call_records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect();
    write("gas_records.jsonl", records.as_bytes())?;
    let rows = report(&sim.call_records);
    write("gas_report.txt", render_table(&rows).as_bytes())?;
    write("gas_report.json", pretty(&rows).as_bytes())?;
    write("outcomes.json", pretty(&sim.outcome_summaries()).as_bytes())?;

    for run in &sim.runs {
        let dir = format!("messages/tx-{:04}", run.index + 1);
        for (k, hop) in run.outcome.messages.iter().enumerate() {
            write(&format!("{dir}/{:02}-pacs008-{}.xml", k, hop.agent), &hop.xml)?;
        }
        let forward = run.outcome.messages.len();
        for (k, ret) in run.outcome.returns.iter().enumerate() {
            write(
                &format!("{dir}/{:02}-pacs004-{}.xml", forward + k, ret.returning_agent),
                &serialize_pacs004(ret),
            )?;
        }
        write(
            &format!("{dir}/pacs002.xml"),
            &serialize_pacs002(&run.outcome.final_report),
        )?;
    }
    Ok(())
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    text
}
