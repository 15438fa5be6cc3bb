mod common;

use cbpr_core::iso20022::{
    advance_message, decode_pacs008, extract_debtor_instruction, format_scaled, parse_pacs008, serialize_pacs008,
    validate_control_sum, CodecError, MessageStamp,
};
use common::*;
use proptest::prelude::*;
use rust_decimal::Decimal;

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(128)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn parse_inverts_serialize(spec in arb_message(4)) {
        let msg = spec.build();
        let xml = serialize_pacs008(&msg).unwrap();
        let parsed = parse_pacs008(&xml).unwrap();
        prop_assert_eq!(&parsed, &msg);
        prop_assert_eq!(serialize_pacs008(&parsed).unwrap(), xml);
    }

    #[test]
    fn extraction_returns_the_constructed_fields(spec in arb_message(1)) {
        let xml = serialize_pacs008(&spec.build()).unwrap();
        let ins = extract_debtor_instruction(&xml).unwrap();
        let tx = &spec.txs[0];
        prop_assert_eq!(ins.settlement_amount, amount_from_minor(spec.currency, tx.minor));
        prop_assert_eq!(&ins.debtor_agent, &tx.debtor_agent);
        prop_assert_eq!(&ins.debtor_account, &tx.debtor_account);
        prop_assert_eq!(&ins.next_agent, &spec.instructed);
        prop_assert_eq!(&ins.iso_message, &xml);
    }

    #[test]
    fn multi_transaction_messages_are_not_extractable(spec in arb_message(4)) {
        let xml = serialize_pacs008(&spec.build()).unwrap();
        let result = extract_debtor_instruction(&xml);
        if spec.txs.len() == 1 {
            prop_assert!(result.is_ok());
        } else {
            prop_assert_eq!(result.unwrap_err(), CodecError::MultiTransactionUnsupported { count: spec.txs.len() });
        }
    }

    /// The stated control sum is rewritten to `claimed` minor units; the
    /// verdict must match an integer comparison.
    #[test]
    fn control_sum_check_agrees_with_integer_sum(
        spec in arb_message(5),
        delta in prop_oneof![Just(0i64), -1000i64..1000],
    ) {
        let xml = String::from_utf8(serialize_pacs008(&spec.build()).unwrap()).unwrap();
        let scale = spec.currency.minor_units();
        let true_sum = spec.minor_sum() as i128;
        let claimed = (true_sum + delta as i128).max(0);
        let stated = format_scaled(Decimal::from_i128_with_scale(true_sum, scale), scale);
        let forged = format_scaled(Decimal::from_i128_with_scale(claimed, scale), scale);
        let doctored = xml.replacen(
            &format!("<CtrlSum>{stated}</CtrlSum>"),
            &format!("<CtrlSum>{forged}</CtrlSum>"),
            1,
        );
        let decoded = decode_pacs008(doctored.as_bytes()).unwrap();
        prop_assert_eq!(validate_control_sum(&decoded), claimed == true_sum);
        prop_assert_eq!(parse_pacs008(doctored.as_bytes()).is_ok(), claimed == true_sum);
    }

    #[test]
    fn advancing_keeps_the_payload(spec in arb_message(1), to in arb_bic(), t in arb_time()) {
        let msg = spec.build();
        let stamp = MessageStamp { msg_id: "HOP-1".into(), creation_time: t };
        let next = advance_message(&msg, &spec.instructed, &to, stamp).unwrap();
        prop_assert_eq!(&next.transactions, &msg.transactions);
        prop_assert_eq!(next.group_header.ctrl_sum, msg.group_header.ctrl_sum);
        prop_assert_eq!(&next.group_header.instructing_agent, &spec.instructed);
        prop_assert_eq!(&next.group_header.instructed_agent, &to);
        let reparsed = parse_pacs008(&serialize_pacs008(&next).unwrap()).unwrap();
        prop_assert_eq!(reparsed, next);
    }
}

#[test]
fn extra_fractional_digits_are_schema_violations() {
    let xml =
        std::fs::read_to_string(repo_root().join("crates/core/tests/fixtures/pacs008/01-three-agent-usd.xml")).unwrap();
    let bad = xml.replace("Ccy=\"USD\">250.00<", "Ccy=\"USD\">250.005<");
    assert!(matches!(
        parse_pacs008(bad.as_bytes()),
        Err(CodecError::SchemaViolation { .. })
    ));
}
