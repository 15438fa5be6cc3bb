use chrono::{DateTime, NaiveDateTime, SecondsFormat, Utc};
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::types::{format_scaled, parse_plain_decimal};
use super::xml::{parse_document, XmlElement};
use super::{BicCode, CodecError, CurrencyCode, MoneyAmount};

pub const PACS008_NAMESPACE: &str = "urn:iso:std:iso:20022:tech:xsd:pacs.008.001.08";

pub const MAX_ID_LEN: usize = 35;
pub const MAX_NAME_LEN: usize = 140;
pub const MAX_ACCOUNT_ID_LEN: usize = 34;
/// `IntrmyAgt1` through `IntrmyAgt3`.
pub const MAX_INTERMEDIARIES: usize = 3;

const ROOT: &str = "FIToFICstmrCdtTrf";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupHeader {
    pub msg_id: String,
    pub creation_time: DateTime<Utc>,
    pub nb_of_txs: u32,
    pub ctrl_sum: Decimal,
    pub instructing_agent: BicCode,
    pub instructed_agent: BicCode,
    /// Children of `GrpHdr` outside the supported subset, kept verbatim.
    pub extras: Vec<XmlElement>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreditTransferTxInfo {
    pub end_to_end_id: String,
    pub settlement_amount: MoneyAmount,
    pub debtor_name: String,
    pub debtor_account: String,
    pub debtor_agent: BicCode,
    pub creditor_name: String,
    pub creditor_account: String,
    pub creditor_agent: BicCode,
    pub intermediary_agents: Vec<BicCode>,
    /// Children of `PmtId` other than `EndToEndId` (e.g. `InstrId`, `UETR`).
    pub payment_id_extras: Vec<XmlElement>,
    /// Children of `CdtTrfTxInf` outside the supported subset.
    pub extras: Vec<XmlElement>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pacs008Message {
    /// Default namespace of `Document`; carries the message version.
    pub namespace: String,
    pub group_header: GroupHeader,
    pub transactions: Vec<CreditTransferTxInfo>,
    /// Children of `FIToFICstmrCdtTrf` after the last `CdtTrfTxInf`
    /// (e.g. `SplmtryData`).
    pub extras: Vec<XmlElement>,
}

/// Fresh identity for a message produced at a hop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageStamp {
    pub msg_id: String,
    pub creation_time: DateTime<Utc>,
}

/// The contract-facing instruction derived from a single-transaction pacs.008.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DebtorInstruction {
    /// `CdtTrfTxInf/IntrBkSttlmAmt`
    pub settlement_amount: MoneyAmount,
    /// `CdtTrfTxInf/DbtrAgt/FinInstnId/BICFI`
    pub debtor_agent: BicCode,
    /// `CdtTrfTxInf/DbtrAcct/Id/Othr/Id`
    pub debtor_account: String,
    /// The pacs.008 document the fields were taken from, byte for byte.
    pub iso_message: Vec<u8>,
    /// `GrpHdr/InstdAgt/FinInstnId/BICFI`
    pub next_agent: BicCode,
}

impl DebtorInstruction {
    /// Serializes `msg` and extracts the instruction from the resulting bytes.
    pub fn from_message(msg: &Pacs008Message) -> Result<Self, CodecError> {
        extract_debtor_instruction(&serialize_pacs008(msg)?)
    }

    /// Builds the instruction from an already parsed `msg` whose source is `xml`.
    pub fn from_parsed(msg: &Pacs008Message, xml: &[u8]) -> Result<Self, CodecError> {
        let tx = msg.single_transaction()?;
        Ok(Self {
            settlement_amount: tx.settlement_amount,
            debtor_agent: tx.debtor_agent.clone(),
            debtor_account: tx.debtor_account.clone(),
            iso_message: xml.to_vec(),
            next_agent: msg.group_header.instructed_agent.clone(),
        })
    }
}

impl Pacs008Message {
    /// Builds a message whose header count and control sum are computed from
    /// `transactions`.
    pub fn assemble(
        msg_id: impl Into<String>,
        creation_time: DateTime<Utc>,
        instructing_agent: BicCode,
        instructed_agent: BicCode,
        transactions: Vec<CreditTransferTxInfo>,
    ) -> Result<Self, CodecError> {
        let ctrl_sum =
            sum_amounts(&transactions).ok_or_else(|| CodecError::InvariantViolation("control sum overflow".into()))?;
        let msg = Self {
            namespace: PACS008_NAMESPACE.to_string(),
            group_header: GroupHeader {
                msg_id: msg_id.into(),
                creation_time,
                nb_of_txs: u32::try_from(transactions.len()).unwrap_or(u32::MAX),
                ctrl_sum,
                instructing_agent,
                instructed_agent,
                extras: Vec::new(),
            },
            transactions,
            extras: Vec::new(),
        };
        msg.check()?;
        Ok(msg)
    }

    /// Exact decimal sum of the settlement amounts, ignoring currency.
    pub fn computed_ctrl_sum(&self) -> Option<Decimal> {
        sum_amounts(&self.transactions)
    }

    pub fn single_transaction(&self) -> Result<&CreditTransferTxInfo, CodecError> {
        match self.transactions.as_slice() {
            [tx] => Ok(tx),
            txs => Err(CodecError::MultiTransactionUnsupported { count: txs.len() }),
        }
    }

    /// Replaces the settlement amount of a single-transaction message and
    /// updates the control sum to match.
    pub fn with_settlement_amount(&self, amount: MoneyAmount) -> Result<Self, CodecError> {
        self.single_transaction()?;
        let mut out = self.clone();
        out.transactions[0].settlement_amount = amount;
        out.group_header.ctrl_sum = amount.value();
        out.check()?;
        Ok(out)
    }

    /// Checks every invariant of the structured form.
    pub fn check(&self) -> Result<(), CodecError> {
        let violation = |s: String| Err(CodecError::InvariantViolation(s));
        let hdr = &self.group_header;
        if self.transactions.is_empty() {
            return violation("message has no transactions".into());
        }
        check_len("GrpHdr/MsgId", &hdr.msg_id, MAX_ID_LEN)?;
        if hdr.nb_of_txs as usize != self.transactions.len() {
            return violation(format!(
                "NbOfTxs is {} but the message carries {} transactions",
                hdr.nb_of_txs,
                self.transactions.len()
            ));
        }
        match self.computed_ctrl_sum() {
            Some(sum) if sum == hdr.ctrl_sum => {}
            Some(sum) => {
                return violation(format!(
                    "CtrlSum is {} but settlement amounts sum to {sum}",
                    hdr.ctrl_sum
                ))
            }
            None => return violation("control sum overflow".into()),
        }
        for tx in &self.transactions {
            check_len("CdtTrfTxInf/PmtId/EndToEndId", &tx.end_to_end_id, MAX_ID_LEN)?;
            check_len("CdtTrfTxInf/Dbtr/Nm", &tx.debtor_name, MAX_NAME_LEN)?;
            check_len("CdtTrfTxInf/Cdtr/Nm", &tx.creditor_name, MAX_NAME_LEN)?;
            check_len(
                "CdtTrfTxInf/DbtrAcct/Id/Othr/Id",
                &tx.debtor_account,
                MAX_ACCOUNT_ID_LEN,
            )?;
            check_len(
                "CdtTrfTxInf/CdtrAcct/Id/Othr/Id",
                &tx.creditor_account,
                MAX_ACCOUNT_ID_LEN,
            )?;
            if !tx.settlement_amount.is_positive() {
                return violation(format!("settlement amount of {} must be positive", tx.end_to_end_id));
            }
            if tx.intermediary_agents.len() > MAX_INTERMEDIARIES {
                return violation(format!(
                    "{} intermediary agents exceed the limit of {MAX_INTERMEDIARIES}",
                    tx.intermediary_agents.len()
                ));
            }
        }
        Ok(())
    }
}

fn sum_amounts(txs: &[CreditTransferTxInfo]) -> Option<Decimal> {
    txs.iter()
        .try_fold(Decimal::ZERO, |acc, tx| acc.checked_add(tx.settlement_amount.value()))
}

fn check_len(path: &str, value: &str, max: usize) -> Result<(), CodecError> {
    let n = value.chars().count();
    if n == 0 || n > max {
        return Err(CodecError::InvariantViolation(format!(
            "{path} must be 1..={max} characters, got {n}"
        )));
    }
    Ok(())
}

/// True iff the control sum equals the exact sum of settlement amounts and
/// `NbOfTxs` equals the transaction count.
pub fn validate_control_sum(msg: &Pacs008Message) -> bool {
    msg.group_header.nb_of_txs as usize == msg.transactions.len()
        && msg.computed_ctrl_sum() == Some(msg.group_header.ctrl_sum)
}

/// Re-addresses a message for the next hop. Only the header's agents and
/// identity change; the transaction payload is untouched.
pub fn advance_message(
    msg: &Pacs008Message,
    from: &BicCode,
    to: &BicCode,
    stamp: MessageStamp,
) -> Result<Pacs008Message, CodecError> {
    let holder = &msg.group_header.instructed_agent;
    if holder != from {
        return Err(CodecError::HopMismatch {
            holder: holder.clone(),
            from: from.clone(),
        });
    }
    let mut next = msg.clone();
    next.group_header.msg_id = stamp.msg_id;
    next.group_header.creation_time = stamp.creation_time;
    next.group_header.instructing_agent = from.clone();
    next.group_header.instructed_agent = to.clone();
    Ok(next)
}

/// Maps a single-transaction pacs.008 onto the contract instruction struct.
pub fn extract_debtor_instruction(xml: &[u8]) -> Result<DebtorInstruction, CodecError> {
    DebtorInstruction::from_parsed(&parse_pacs008(xml)?, xml)
}

// ---------------------------------------------------------------------------
// serialization

pub fn serialize_pacs008(msg: &Pacs008Message) -> Result<Vec<u8>, CodecError> {
    msg.check()?;
    let hdr = &msg.group_header;

    let mut doc = XmlElement::new("Document");
    if !msg.namespace.is_empty() {
        doc.attributes.push(("xmlns".into(), msg.namespace.clone()));
    }
    let mut body = XmlElement::new(ROOT);

    let ctrl_scale = msg
        .transactions
        .iter()
        .map(|tx| tx.settlement_amount.currency.minor_units())
        .max()
        .unwrap_or(2);
    let mut grp = XmlElement::new("GrpHdr");
    grp.push(XmlElement::with_text("MsgId", &hdr.msg_id))
        .push(XmlElement::with_text("CreDtTm", format_time(&hdr.creation_time)))
        .push(XmlElement::with_text("NbOfTxs", hdr.nb_of_txs.to_string()))
        .push(XmlElement::with_text(
            "CtrlSum",
            format_scaled(hdr.ctrl_sum, ctrl_scale),
        ))
        .push(agent("InstgAgt", &hdr.instructing_agent))
        .push(agent("InstdAgt", &hdr.instructed_agent));
    grp.children.extend(hdr.extras.iter().cloned());
    body.push(grp);

    for tx in &msg.transactions {
        let mut el = XmlElement::new("CdtTrfTxInf");
        let mut pmt_id = XmlElement::new("PmtId");
        pmt_id.children.extend(tx.payment_id_extras.iter().cloned());
        pmt_id.push(XmlElement::with_text("EndToEndId", &tx.end_to_end_id));
        el.push(pmt_id);
        el.push(
            XmlElement::with_text("IntrBkSttlmAmt", tx.settlement_amount.value().to_string())
                .with_attr("Ccy", tx.settlement_amount.currency.as_str()),
        );
        for (i, bic) in tx.intermediary_agents.iter().enumerate() {
            el.push(agent(&format!("IntrmyAgt{}", i + 1), bic));
        }
        el.push(party("Dbtr", &tx.debtor_name))
            .push(account("DbtrAcct", &tx.debtor_account))
            .push(agent("DbtrAgt", &tx.debtor_agent))
            .push(agent("CdtrAgt", &tx.creditor_agent))
            .push(party("Cdtr", &tx.creditor_name))
            .push(account("CdtrAcct", &tx.creditor_account));
        el.children.extend(tx.extras.iter().cloned());
        body.push(el);
    }
    body.children.extend(msg.extras.iter().cloned());
    doc.push(body);
    Ok(doc.to_document())
}

pub(crate) fn format_time(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

pub(crate) fn agent(name: &str, bic: &BicCode) -> XmlElement {
    let mut fin = XmlElement::new("FinInstnId");
    fin.push(XmlElement::with_text("BICFI", bic.as_str()));
    let mut el = XmlElement::new(name);
    el.push(fin);
    el
}

fn party(name: &str, display_name: &str) -> XmlElement {
    let mut el = XmlElement::new(name);
    el.push(XmlElement::with_text("Nm", display_name));
    el
}

fn account(name: &str, id: &str) -> XmlElement {
    let mut othr = XmlElement::new("Othr");
    othr.push(XmlElement::with_text("Id", id));
    let mut id_el = XmlElement::new("Id");
    id_el.push(othr);
    let mut el = XmlElement::new(name);
    el.push(id_el);
    el
}

// ---------------------------------------------------------------------------
// parsing

/// Looks up children of one element by name, tracking which were consumed so
/// that everything else can be kept as extras.
pub(crate) struct Children<'a> {
    parent: &'a XmlElement,
    prefix: String,
    used: Vec<bool>,
}

impl<'a> Children<'a> {
    pub(crate) fn new(parent: &'a XmlElement, prefix: impl Into<String>) -> Self {
        Self {
            parent,
            prefix: prefix.into(),
            used: vec![false; parent.children.len()],
        }
    }

    fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}/{name}", self.prefix)
        }
    }

    pub(crate) fn optional(&mut self, name: &str) -> Result<Option<&'a XmlElement>, CodecError> {
        let mut found = None;
        for (i, child) in self.parent.children.iter().enumerate() {
            if child.name == name {
                if found.is_some() {
                    return Err(CodecError::schema(self.path(name), "element repeated"));
                }
                self.used[i] = true;
                found = Some(child);
            }
        }
        Ok(found)
    }

    pub(crate) fn required(&mut self, name: &str) -> Result<&'a XmlElement, CodecError> {
        self.optional(name)?.ok_or_else(|| CodecError::missing(self.path(name)))
    }

    pub(crate) fn text(&mut self, name: &str) -> Result<&'a str, CodecError> {
        let el = self.required(name)?;
        if !el.children.is_empty() {
            return Err(CodecError::schema(self.path(name), "expected a text value"));
        }
        Ok(el.text.as_str())
    }

    pub(crate) fn extras(&self) -> Vec<XmlElement> {
        self.parent
            .children
            .iter()
            .zip(&self.used)
            .filter(|(_, used)| !**used)
            .map(|(c, _)| c.clone())
            .collect()
    }

    /// Fails if any child was not consumed.
    pub(crate) fn finish_strict(&self) -> Result<(), CodecError> {
        match self.extras().first() {
            None => Ok(()),
            Some(el) => Err(CodecError::schema(
                self.path(&el.name),
                "element is outside the supported subset",
            )),
        }
    }
}

fn bounded_text(path: &str, text: &str, max: usize) -> Result<String, CodecError> {
    let n = text.chars().count();
    if n == 0 || n > max {
        return Err(CodecError::schema(path, format!("length must be 1..={max}, got {n}")));
    }
    Ok(text.to_string())
}

pub(crate) fn parse_agent(el: &XmlElement, path: &str) -> Result<BicCode, CodecError> {
    let mut outer = Children::new(el, path);
    let fin = outer.required("FinInstnId")?;
    outer.finish_strict()?;
    let fin_path = format!("{path}/FinInstnId");
    let mut inner = Children::new(fin, fin_path.clone());
    let text = inner.text("BICFI")?;
    inner.finish_strict()?;
    BicCode::new(text).map_err(|e| CodecError::schema(format!("{fin_path}/BICFI"), e.to_string()))
}

fn parse_party(el: &XmlElement, path: &str) -> Result<String, CodecError> {
    let mut c = Children::new(el, path);
    let name = c.text("Nm")?;
    c.finish_strict()?;
    bounded_text(&format!("{path}/Nm"), name, MAX_NAME_LEN)
}

fn parse_account(el: &XmlElement, path: &str) -> Result<String, CodecError> {
    let mut c = Children::new(el, path);
    let id = c.required("Id")?;
    c.finish_strict()?;
    let id_path = format!("{path}/Id");
    let mut c = Children::new(id, id_path.clone());
    let othr = c.required("Othr")?;
    c.finish_strict()?;
    let othr_path = format!("{id_path}/Othr");
    let mut c = Children::new(othr, othr_path.clone());
    let value = c.text("Id")?;
    c.finish_strict()?;
    bounded_text(&format!("{othr_path}/Id"), value, MAX_ACCOUNT_ID_LEN)
}

pub(crate) fn parse_amount(el: &XmlElement, path: &str) -> Result<MoneyAmount, CodecError> {
    let ccy = el
        .attr("Ccy")
        .ok_or_else(|| CodecError::missing(format!("{path}/@Ccy")))?;
    let currency = CurrencyCode::new(ccy).map_err(|e| CodecError::schema(format!("{path}/@Ccy"), e.to_string()))?;
    if !el.children.is_empty() {
        return Err(CodecError::schema(path, "expected a text value"));
    }
    MoneyAmount::parse(currency, &el.text).map_err(|e| CodecError::schema(path, e.to_string()))
}

pub(crate) fn parse_time(path: &str, text: &str) -> Result<DateTime<Utc>, CodecError> {
    if let Ok(t) = DateTime::parse_from_rfc3339(text) {
        return Ok(t.with_timezone(&Utc));
    }
    NaiveDateTime::parse_from_str(text, "%Y-%m-%dT%H:%M:%S%.f")
        .map(|t| t.and_utc())
        .map_err(|_| CodecError::schema(path, format!("'{text}' is not an ISO date-time")))
}

pub(crate) fn document_body<'a>(root: &'a XmlElement, body_name: &str) -> Result<(String, &'a XmlElement), CodecError> {
    if root.name != "Document" {
        return Err(CodecError::schema(
            "Document",
            format!("root element is '{}'", root.name),
        ));
    }
    let namespace = root
        .attributes
        .iter()
        .find(|(k, _)| k == "xmlns" || k.starts_with("xmlns:"))
        .map(|(_, v)| v.clone())
        .unwrap_or_default();
    let mut c = Children::new(root, "");
    let body = c.required(body_name)?;
    c.finish_strict()?;
    Ok((namespace, body))
}

/// Parses and validates a pacs.008 document.
pub fn parse_pacs008(xml: &[u8]) -> Result<Pacs008Message, CodecError> {
    let msg = decode_pacs008(xml)?;
    msg.check()?;
    Ok(msg)
}

/// Structural decode only: every element is parsed and bounded, but header
/// consistency (`NbOfTxs`, `CtrlSum`) and amount positivity are left for the
/// caller to check.
pub fn decode_pacs008(xml: &[u8]) -> Result<Pacs008Message, CodecError> {
    let root = parse_document(xml)?;
    let (namespace, body) = document_body(&root, ROOT)?;

    // GrpHdr must come first; transactions follow; anything else is an extra.
    let mut grp_hdr = None;
    let mut tx_elements = Vec::new();
    let mut extras = Vec::new();
    for child in &body.children {
        match child.name.as_str() {
            "GrpHdr" if grp_hdr.is_some() => return Err(CodecError::schema("GrpHdr", "element repeated")),
            "GrpHdr" => grp_hdr = Some(child),
            "CdtTrfTxInf" => tx_elements.push(child),
            _ => extras.push(child.clone()),
        }
    }
    let grp_hdr = grp_hdr.ok_or_else(|| CodecError::missing("GrpHdr"))?;
    if tx_elements.is_empty() {
        return Err(CodecError::missing("CdtTrfTxInf"));
    }

    let group_header = parse_group_header(grp_hdr)?;
    let transactions = tx_elements
        .into_iter()
        .map(parse_transaction)
        .collect::<Result<Vec<_>, _>>()?;

    Ok(Pacs008Message {
        namespace,
        group_header,
        transactions,
        extras,
    })
}

fn parse_group_header(el: &XmlElement) -> Result<GroupHeader, CodecError> {
    let mut c = Children::new(el, "GrpHdr");
    let msg_id = bounded_text("GrpHdr/MsgId", c.text("MsgId")?, MAX_ID_LEN)?;
    let creation_time = parse_time("GrpHdr/CreDtTm", c.text("CreDtTm")?)?;
    let nb_text = c.text("NbOfTxs")?;
    let nb_of_txs = nb_text
        .parse::<u32>()
        .ok()
        .filter(|n| *n > 0 && nb_text.bytes().all(|b| b.is_ascii_digit()))
        .ok_or_else(|| CodecError::schema("GrpHdr/NbOfTxs", format!("'{nb_text}' is not a positive integer")))?;
    let ctrl_sum =
        parse_plain_decimal(c.text("CtrlSum")?).map_err(|e| CodecError::schema("GrpHdr/CtrlSum", e.to_string()))?;
    let instructing_agent = parse_agent(c.required("InstgAgt")?, "GrpHdr/InstgAgt")?;
    let instructed_agent = parse_agent(c.required("InstdAgt")?, "GrpHdr/InstdAgt")?;
    Ok(GroupHeader {
        msg_id,
        creation_time,
        nb_of_txs,
        ctrl_sum,
        instructing_agent,
        instructed_agent,
        extras: c.extras(),
    })
}

fn parse_transaction(el: &XmlElement) -> Result<CreditTransferTxInfo, CodecError> {
    const P: &str = "CdtTrfTxInf";
    let mut c = Children::new(el, P);

    let pmt_id = c.required("PmtId")?;
    let mut pc = Children::new(pmt_id, format!("{P}/PmtId"));
    let end_to_end_id = bounded_text(&format!("{P}/PmtId/EndToEndId"), pc.text("EndToEndId")?, MAX_ID_LEN)?;
    let payment_id_extras = pc.extras();

    let settlement_amount = parse_amount(c.required("IntrBkSttlmAmt")?, &format!("{P}/IntrBkSttlmAmt"))?;

    let mut intermediary_agents = Vec::new();
    for i in 1..=MAX_INTERMEDIARIES {
        let name = format!("IntrmyAgt{i}");
        match c.optional(&name)? {
            Some(agent_el) if intermediary_agents.len() == i - 1 => {
                intermediary_agents.push(parse_agent(agent_el, &format!("{P}/{name}"))?)
            }
            Some(_) => {
                return Err(CodecError::schema(
                    format!("{P}/{name}"),
                    format!("IntrmyAgt{} is missing", i - 1),
                ))
            }
            None => {}
        }
    }

    let debtor_name = parse_party(c.required("Dbtr")?, &format!("{P}/Dbtr"))?;
    let debtor_account = parse_account(c.required("DbtrAcct")?, &format!("{P}/DbtrAcct"))?;
    let debtor_agent = parse_agent(c.required("DbtrAgt")?, &format!("{P}/DbtrAgt"))?;
    let creditor_agent = parse_agent(c.required("CdtrAgt")?, &format!("{P}/CdtrAgt"))?;
    let creditor_name = parse_party(c.required("Cdtr")?, &format!("{P}/Cdtr"))?;
    let creditor_account = parse_account(c.required("CdtrAcct")?, &format!("{P}/CdtrAcct"))?;

    Ok(CreditTransferTxInfo {
        end_to_end_id,
        settlement_amount,
        debtor_name,
        debtor_account,
        debtor_agent,
        creditor_name,
        creditor_account,
        creditor_agent,
        intermediary_agents,
        payment_id_extras,
        extras: c.extras(),
    })
}
