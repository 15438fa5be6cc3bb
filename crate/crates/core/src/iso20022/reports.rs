//! Status reports (pacs.002) and payment returns (pacs.004).
//!
//! Only the fields needed to reference the original transaction are modelled.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::pacs008::{agent, document_body, parse_agent, parse_amount, Children};
use super::xml::{parse_document, XmlElement};
use super::{BicCode, CodecError, MoneyAmount, Pacs008Message};

pub const PACS002_NAMESPACE: &str = "urn:iso:std:iso:20022:tech:xsd:pacs.002.001.10";
pub const PACS004_NAMESPACE: &str = "urn:iso:std:iso:20022:tech:xsd:pacs.004.001.09";
const ORIGINAL_MESSAGE_NAME: &str = "pacs.008.001.08";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PaymentStatus {
    /// Settlement completed at the creditor agent.
    #[serde(rename = "ACSC")]
    Acsc,
    #[serde(rename = "RJCT")]
    Rjct,
}

impl PaymentStatus {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Acsc => "ACSC",
            Self::Rjct => "RJCT",
        }
    }
}

impl fmt::Display for PaymentStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for PaymentStatus {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ACSC" => Ok(Self::Acsc),
            "RJCT" => Ok(Self::Rjct),
            other => Err(CodecError::schema(
                "TxInfAndSts/TxSts",
                format!("unsupported status '{other}'"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pacs002Report {
    pub original_msg_id: String,
    pub original_end_to_end_id: String,
    pub status: PaymentStatus,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pacs004Return {
    pub original_msg_id: String,
    pub original_end_to_end_id: String,
    pub returned_amount: MoneyAmount,
    pub return_reason: String,
    pub returning_agent: BicCode,
    pub next_agent: BicCode,
}

/// Builds a status report for the first transaction of `original`.
pub fn build_pacs002(
    original: &Pacs008Message,
    status: PaymentStatus,
    reason: Option<String>,
) -> Result<Pacs002Report, CodecError> {
    let reason = reason.filter(|r| !r.trim().is_empty());
    if status == PaymentStatus::Rjct && reason.is_none() {
        return Err(CodecError::MissingReason);
    }
    let tx = original
        .transactions
        .first()
        .ok_or_else(|| CodecError::InvariantViolation("message has no transactions".into()))?;
    Ok(Pacs002Report {
        original_msg_id: original.group_header.msg_id.clone(),
        original_end_to_end_id: tx.end_to_end_id.clone(),
        status,
        reason,
    })
}

pub fn build_pacs004(
    original: &Pacs008Message,
    reason: &str,
    returning_agent: BicCode,
    next_agent: BicCode,
) -> Result<Pacs004Return, CodecError> {
    let tx = original.single_transaction()?;
    Ok(Pacs004Return {
        original_msg_id: original.group_header.msg_id.clone(),
        original_end_to_end_id: tx.end_to_end_id.clone(),
        returned_amount: tx.settlement_amount,
        return_reason: reason.to_string(),
        returning_agent,
        next_agent,
    })
}

fn original_group(name: &str, msg_id: &str) -> XmlElement {
    let mut el = XmlElement::new(name);
    el.push(XmlElement::with_text("OrgnlMsgId", msg_id))
        .push(XmlElement::with_text("OrgnlMsgNmId", ORIGINAL_MESSAGE_NAME));
    el
}

fn reason_block(name: &str, reason: &str) -> XmlElement {
    let mut el = XmlElement::new(name);
    el.push(XmlElement::with_text("AddtlInf", reason));
    el
}

pub fn serialize_pacs002(report: &Pacs002Report) -> Vec<u8> {
    let mut tx = XmlElement::new("TxInfAndSts");
    tx.push(XmlElement::with_text("OrgnlEndToEndId", &report.original_end_to_end_id))
        .push(XmlElement::with_text("TxSts", report.status.code()));
    if let Some(reason) = &report.reason {
        tx.push(reason_block("StsRsnInf", reason));
    }
    let mut body = XmlElement::new("FIToFIPmtStsRpt");
    body.push(original_group("OrgnlGrpInfAndSts", &report.original_msg_id))
        .push(tx);
    let mut doc = XmlElement::new("Document").with_attr("xmlns", PACS002_NAMESPACE);
    doc.push(body);
    doc.to_document()
}

pub fn parse_pacs002(xml: &[u8]) -> Result<Pacs002Report, CodecError> {
    let root = parse_document(xml)?;
    let (_, body) = document_body(&root, "FIToFIPmtStsRpt")?;
    let mut c = Children::new(body, "");
    let grp = c.required("OrgnlGrpInfAndSts")?;
    let tx = c.required("TxInfAndSts")?;
    c.finish_strict()?;
    let original_msg_id = Children::new(grp, "OrgnlGrpInfAndSts").text("OrgnlMsgId")?.to_string();
    let mut t = Children::new(tx, "TxInfAndSts");
    let original_end_to_end_id = t.text("OrgnlEndToEndId")?.to_string();
    let status: PaymentStatus = t.text("TxSts")?.parse()?;
    let reason = match t.optional("StsRsnInf")? {
        Some(el) => Some(Children::new(el, "TxInfAndSts/StsRsnInf").text("AddtlInf")?.to_string()),
        None => None,
    };
    if status == PaymentStatus::Rjct && reason.as_deref().is_none_or(|r| r.trim().is_empty()) {
        return Err(CodecError::MissingReason);
    }
    Ok(Pacs002Report {
        original_msg_id,
        original_end_to_end_id,
        status,
        reason,
    })
}

pub fn serialize_pacs004(ret: &Pacs004Return) -> Vec<u8> {
    let mut tx = XmlElement::new("TxInf");
    tx.push(original_group("OrgnlGrpInf", &ret.original_msg_id))
        .push(XmlElement::with_text("OrgnlEndToEndId", &ret.original_end_to_end_id))
        .push(
            XmlElement::with_text("RtrdIntrBkSttlmAmt", ret.returned_amount.value().to_string())
                .with_attr("Ccy", ret.returned_amount.currency.as_str()),
        )
        .push(agent("InstgAgt", &ret.returning_agent))
        .push(agent("InstdAgt", &ret.next_agent))
        .push(reason_block("RtrRsnInf", &ret.return_reason));
    let mut body = XmlElement::new("PmtRtr");
    body.push(tx);
    let mut doc = XmlElement::new("Document").with_attr("xmlns", PACS004_NAMESPACE);
    doc.push(body);
    doc.to_document()
}

pub fn parse_pacs004(xml: &[u8]) -> Result<Pacs004Return, CodecError> {
    let root = parse_document(xml)?;
    let (_, body) = document_body(&root, "PmtRtr")?;
    let mut c = Children::new(body, "PmtRtr");
    let tx = c.required("TxInf")?;
    c.finish_strict()?;
    let mut t = Children::new(tx, "TxInf");
    let original_msg_id = Children::new(t.required("OrgnlGrpInf")?, "TxInf/OrgnlGrpInf")
        .text("OrgnlMsgId")?
        .to_string();
    let original_end_to_end_id = t.text("OrgnlEndToEndId")?.to_string();
    let returned_amount = parse_amount(t.required("RtrdIntrBkSttlmAmt")?, "TxInf/RtrdIntrBkSttlmAmt")?;
    let returning_agent = parse_agent(t.required("InstgAgt")?, "TxInf/InstgAgt")?;
    let next_agent = parse_agent(t.required("InstdAgt")?, "TxInf/InstdAgt")?;
    let return_reason = Children::new(t.required("RtrRsnInf")?, "TxInf/RtrRsnInf")
        .text("AddtlInf")?
        .to_string();
    Ok(Pacs004Return {
        original_msg_id,
        original_end_to_end_id,
        returned_amount,
        return_reason,
        returning_agent,
        next_agent,
    })
}
