//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use cbpr_core::clock::SimTime;
use cbpr_core::iso20022::{extract_debtor_instruction, parse_pacs008, serialize_pacs008, PaymentStatus};
use cbpr_core::ledger::{AccountSpec, AgentLedger, EventKind, LedgerError, NetworkSnapshot, Principal, Role};
use cbpr_core::metering::{compute_fee, render_table, report, CallRecord, GasReportRow, METERED_OPERATIONS};
use cbpr_core::relay::OutcomeStatus;
use cbpr_core::scenario::{load_scenario, replay_trail, simulate, AuditRecord, Network, RunOptions};
use common::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rust_decimal::Decimal;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(start: Instant, limit: Duration) -> Result<Duration, String> {
    let took = start.elapsed();
    ensure!(took < limit, "took {took:?}, limit {limit:?}");
    Ok(took)
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn dec(s: &str) -> Decimal {
    s.parse().unwrap()
}

fn balance(snap: &NetworkSnapshot, agent: &str, account: &str) -> Decimal {
    dec(&snap.agents[&bic(agent)].accounts[account].balance)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let fixtures = pacs008_fixtures();
    ensure!(fixtures.len() == 10, "expected 10 fixtures, found {}", fixtures.len());
    for f in &fixtures {
        let ins = extract_debtor_instruction(&f.xml).map_err(|e| format!("{}: {e}", f.name))?;
        let checks = [
            (
                "IntrBkSttlmAmt",
                ins.settlement_amount.value().to_string(),
                f.field("CdtTrfTxInf/IntrBkSttlmAmt"),
            ),
            (
                "IntrBkSttlmAmt/@Ccy",
                ins.settlement_amount.currency.to_string(),
                f.field("CdtTrfTxInf/IntrBkSttlmAmt/@Ccy"),
            ),
            (
                "DbtrAgt",
                ins.debtor_agent.to_string(),
                f.field("CdtTrfTxInf/DbtrAgt/FinInstnId/BICFI"),
            ),
            (
                "DbtrAcct",
                ins.debtor_account.clone(),
                f.field("CdtTrfTxInf/DbtrAcct/Id/Othr/Id"),
            ),
            (
                "NxtAgt",
                ins.next_agent.to_string(),
                f.field("GrpHdr/InstdAgt/FinInstnId/BICFI"),
            ),
        ];
        for (name, got, want) in checks {
            ensure!(got == want, "{}: {name} is {got}, fixture says {want}", f.name);
        }
        ensure!(
            ins.iso_message == f.xml,
            "{}: embedded message differs from the input bytes",
            f.name
        );
    }
    let took = within(start, Duration::from_secs(1))?;
    Ok(format!("10 fixtures, {took:?}"))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    runner(100)
        .run(&arb_message(4), |spec| {
            let msg = spec.build();
            let xml = serialize_pacs008(&msg).unwrap();
            let parsed = parse_pacs008(&xml).unwrap();
            proptest::prop_assert_eq!(&parsed, &msg);
            proptest::prop_assert_eq!(serialize_pacs008(&parsed).unwrap(), xml);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let took = within(start, Duration::from_secs(5))?;
    Ok(format!("100 messages, {took:?}"))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let config = load_scenario(&repo_root().join("scenarios/three_agent.toml")).map_err(|e| e.to_string())?;
    let s = simulate(&config, RunOptions::default()).map_err(|e| e.to_string())?;
    let run = &s.runs[0];
    let x = run.transaction.amount.value();
    ensure!(
        run.outcome.status == OutcomeStatus::Settled,
        "status {:?}",
        run.outcome.status
    );

    let (a, b, c) = ("AAAAUS33", "BBBBDEFF", "CCCCGB2L");
    let (i, f) = (&s.initial, &s.final_snapshot);
    ensure!(
        balance(f, a, "ACC-001") == balance(i, a, "ACC-001") - x,
        "debtor balance"
    );
    ensure!(
        balance(f, a, "NOS-B") == balance(i, a, "NOS-B") + x,
        "debtor agent's nostro for the intermediary"
    );
    ensure!(
        balance(f, b, "NOS-A") == balance(i, b, "NOS-A") - x,
        "intermediary's nostro for the debtor agent"
    );
    ensure!(
        balance(f, b, "NOS-C") == balance(i, b, "NOS-C") + x,
        "intermediary's nostro for the creditor agent"
    );
    ensure!(
        balance(f, c, "NOS-B") == balance(i, c, "NOS-B") - x,
        "creditor agent's nostro for the intermediary"
    );
    ensure!(
        balance(f, c, "ACC-002") == balance(i, c, "ACC-002") + x,
        "creditor balance"
    );
    ensure!(i.totals() == f.totals(), "totals changed");

    let kinds: Vec<EventKind> = run.outcome.events.iter().map(|(_, e)| e.kind).collect();
    use EventKind::*;
    ensure!(
        kinds == [MakeTransfer, PassISOMessageAlong, CreditConfirmed],
        "events {kinds:?}"
    );
    ensure!(
        run.outcome.final_report.status == PaymentStatus::Acsc,
        "report {:?}",
        run.outcome.final_report.status
    );
    let events = s
        .trail
        .iter()
        .filter(|r| matches!(r, AuditRecord::Event { .. }))
        .count();
    let statuses = s
        .trail
        .iter()
        .filter(|r| matches!(r, AuditRecord::Status { .. }))
        .count();
    ensure!(
        (events, statuses) == (3, 1),
        "trail has {events} events and {statuses} status records"
    );
    let took = within(start, Duration::from_secs(1))?;
    Ok(format!("250.00 USD over 3 agents, {took:?}"))
}

fn criterion_4() -> Outcome {
    let settled = std::cell::Cell::new(0);
    let returned = std::cell::Cell::new(0);
    runner(100)
        .run(&arb_chain(), |(debtor, inbound, amount)| {
            let usd = |m: u64| amount_from_minor(ccy("USD"), m).value().to_string();
            let inbound_s: Vec<String> = inbound.iter().map(|m| usd(*m)).collect();
            let config = chain_scenario("USD", &usd(debtor), &inbound_s, "0.00", &usd(amount));
            let net = Network::build(&config).unwrap();
            let before = net.snapshot();
            let run = net.execute(0, &config.transactions[0]).unwrap();
            let after = net.snapshot();
            proptest::prop_assert_eq!(before.totals(), after.totals());
            match run.outcome.status {
                OutcomeStatus::Settled => settled.set(settled.get() + 1),
                OutcomeStatus::Returned => returned.set(returned.get() + 1),
                OutcomeStatus::Rejected => {}
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let (settled, returned) = (settled.get(), returned.get());
    ensure!(
        settled > 0 && returned > 0,
        "sample lacked variety: {settled} settled, {returned} returned"
    );
    Ok(format!("100 chains, {settled} settled, {returned} returned"))
}

fn arb_chain() -> proptest::strategy::BoxedStrategy<(u64, Vec<u64>, u64)> {
    use proptest::prelude::*;
    (1usize..=5)
        .prop_flat_map(|mids| {
            (
                0u64..2_000_000,
                prop::collection::vec(0u64..2_000_000, mids + 1),
                1u64..1_000_000,
            )
        })
        .boxed()
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let amount = "100.00";
    for k in 1..=4 {
        let inbound: Vec<String> = (1..=4)
            .map(|hop| {
                if hop == k {
                    "99.99".to_string()
                } else {
                    "1000.00".to_string()
                }
            })
            .collect();
        let config = chain_scenario("USD", "500.00", &inbound, "0.00", amount);
        let net = Network::build(&config).unwrap();
        let before = net.snapshot().to_pretty_json();
        let run = net.execute(0, &config.transactions[0]).map_err(|e| e.to_string())?;
        ensure!(
            run.outcome.status == OutcomeStatus::Returned,
            "hop {k}: {:?}",
            run.outcome.status
        );
        ensure!(
            net.snapshot().to_pretty_json() == before,
            "hop {k}: state differs after the return"
        );
    }
    let took = within(start, Duration::from_secs(5))?;
    Ok(format!("shortfall at hops 1-4, {took:?}"))
}

fn guarded_ledger() -> AgentLedger {
    let admin = Principal::new("admin");
    let t = SimTime(0);
    let mut l = AgentLedger::new(bic("LLLLUS33"), admin.clone());
    l.grant_role(&admin, Principal::new("ops"), Role::Operator, t).unwrap();
    l.create_account(&admin, AccountSpec::general("G1", ccy("USD"), "g"), t)
        .unwrap();
    l.create_account(&admin, AccountSpec::nostro("NOS-XXXX", ccy("USD"), bic("XXXXUS33")), t)
        .unwrap();
    l.deposit(&admin, "G1", money("USD", "100.00"), t).unwrap();
    l.deposit(&admin, "NOS-XXXX", money("USD", "50.00"), t).unwrap();
    let ins = instruction(
        &bic("LLLLUS33"),
        &bic("XXXXUS33"),
        &bic("CCCCGB2L"),
        "G1",
        "C",
        money("USD", "10.00"),
        "SEED",
    );
    l.initiate_transfer(&admin, &ins, SimTime(1)).unwrap();
    l
}

fn criterion_6() -> Outcome {
    let me = bic("LLLLUS33");
    let peer = bic("XXXXUS33");
    let ops = Principal::new("ops");
    let eve = Principal::new("eve");
    let forged_sum = |amount: &str| {
        let mut ins = instruction(&me, &peer, &bic("CCCCGB2L"), "G1", "C", money("USD", amount), "BAD");
        let text = String::from_utf8(ins.iso_message.clone()).unwrap();
        ins.iso_message = text
            .replace(&format!("<CtrlSum>{amount}</CtrlSum>"), "<CtrlSum>1.00</CtrlSum>")
            .into_bytes();
        ins
    };
    let inbound = |amount: &str, c: &str| instruction(&bic("DDDDUS33"), &me, &me, "R", "G1", money(c, amount), "IN");
    let outbound =
        |amount: &str, c: &str| instruction(&me, &peer, &bic("CCCCGB2L"), "G1", "C", money(c, amount), "OUT");

    type Case<'a> = (
        &'static str,
        &'static str,
        Box<dyn Fn(&mut AgentLedger) -> Result<(), LedgerError> + 'a>,
    );
    let cases: Vec<Case> = vec![
        (
            "ControlSumMismatch",
            "initiate_transfer",
            Box::new(|l| l.initiate_transfer(&ops, &forged_sum("5.00"), SimTime(9)).map(|_| ())),
        ),
        (
            "ControlSumMismatch",
            "make_transfer",
            Box::new(|l| {
                let mut ins = inbound("5.00", "USD");
                let text = String::from_utf8(ins.iso_message.clone()).unwrap();
                ins.iso_message = text
                    .replace("<CtrlSum>5.00</CtrlSum>", "<CtrlSum>1.00</CtrlSum>")
                    .into_bytes();
                l.make_transfer(&ops, &ins, &peer, true, None, SimTime(9)).map(|_| ())
            }),
        ),
        (
            "InsufficientFunds",
            "initiate_transfer",
            Box::new(|l| {
                l.initiate_transfer(&ops, &outbound("500.00", "USD"), SimTime(9))
                    .map(|_| ())
            }),
        ),
        (
            "InsufficientFunds",
            "make_transfer",
            Box::new(|l| {
                l.make_transfer(&ops, &inbound("500.00", "USD"), &peer, true, None, SimTime(9))
                    .map(|_| ())
            }),
        ),
        (
            "Unauthorized",
            "grant_role",
            Box::new(|l| l.grant_role(&ops, Principal::new("x"), Role::Operator, SimTime(9))),
        ),
        (
            "Unauthorized",
            "create_account",
            Box::new(|l| l.create_account(&eve, AccountSpec::general("N", ccy("USD"), "n"), SimTime(9))),
        ),
        (
            "Unauthorized",
            "deposit",
            Box::new(|l| l.deposit(&eve, "G1", money("USD", "1.00"), SimTime(9))),
        ),
        (
            "Unauthorized",
            "initiate_transfer",
            Box::new(|l| {
                l.initiate_transfer(&eve, &outbound("1.00", "USD"), SimTime(9))
                    .map(|_| ())
            }),
        ),
        (
            "Unauthorized",
            "make_transfer",
            Box::new(|l| {
                l.make_transfer(&eve, &inbound("1.00", "USD"), &peer, true, None, SimTime(9))
                    .map(|_| ())
            }),
        ),
        (
            "Unauthorized",
            "return_transfer",
            Box::new(|l| {
                let ret = return_of_seed(l);
                l.return_transfer(&eve, &ret, SimTime(9)).map(|_| ())
            }),
        ),
        (
            "CurrencyMismatch",
            "deposit",
            Box::new(|l| l.deposit(&ops, "G1", money("EUR", "1.00"), SimTime(9))),
        ),
        (
            "CurrencyMismatch",
            "initiate_transfer",
            Box::new(|l| {
                l.initiate_transfer(&ops, &outbound("1.00", "EUR"), SimTime(9))
                    .map(|_| ())
            }),
        ),
        (
            "CurrencyMismatch",
            "make_transfer",
            Box::new(|l| {
                l.make_transfer(&ops, &inbound("1.00", "EUR"), &peer, true, None, SimTime(9))
                    .map(|_| ())
            }),
        ),
        (
            "CurrencyMismatch",
            "return_transfer",
            Box::new(|l| {
                let mut ret = return_of_seed(l);
                ret.returned_amount = money("EUR", "10.00");
                l.return_transfer(&ops, &ret, SimTime(9)).map(|_| ())
            }),
        ),
    ];
    let n = cases.len();
    for (expected, op, call) in cases {
        let mut l = guarded_ledger();
        let state = l.state().clone();
        let events = l.event_log().to_vec();
        let calls = l.call_records().len();
        let err = match call(&mut l) {
            Ok(()) => return Err(format!("{op}: expected {expected}, call succeeded")),
            Err(e) => e,
        };
        let name = format!("{err:?}");
        let matches = name.starts_with(expected)
            || (expected == "InsufficientFunds" && matches!(err, LedgerError::InsufficientNostroFunds { .. }));
        ensure!(matches, "{op}: expected {expected}, got {err:?}");
        ensure!(l.state() == &state, "{op}/{expected}: state changed");
        ensure!(l.event_log() == events.as_slice(), "{op}/{expected}: event log changed");
        ensure!(
            l.call_records().len() == calls,
            "{op}/{expected}: failed call was metered"
        );
    }
    Ok(format!("{n} error cases, state and logs unchanged"))
}

fn return_of_seed(l: &AgentLedger) -> cbpr_core::iso20022::Pacs004Return {
    let leg = l.settled_leg("SEED").unwrap();
    cbpr_core::iso20022::Pacs004Return {
        original_msg_id: "M-SEED".into(),
        original_end_to_end_id: "SEED".into(),
        returned_amount: leg.posting.amount,
        return_reason: "r".into(),
        returning_agent: bic("XXXXUS33"),
        next_agent: bic("LLLLUS33"),
    }
}

fn scan_oracle(records: &[CallRecord]) -> Vec<GasReportRow> {
    let mut by_op: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
    for r in records {
        by_op.entry(&r.operation).or_default().push(r.units);
    }
    by_op
        .into_iter()
        .map(|(op, units)| {
            let n = units.len();
            let need = (n - 1) / 2 + 1;
            let median = units
                .iter()
                .copied()
                .filter(|v| units.iter().filter(|u| *u <= v).count() >= need)
                .min()
                .unwrap();
            GasReportRow {
                operation: op.to_string(),
                min: *units.iter().min().unwrap(),
                avg: (units.iter().map(|&u| u as u128).sum::<u128>() / n as u128) as u64,
                median,
                max: *units.iter().max().unwrap(),
                call_count: n,
            }
        })
        .collect()
}

fn criterion_7() -> Outcome {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let mut records = Vec::new();
    for op in METERED_OPERATIONS {
        for t in 0..1000 {
            records.push(CallRecord {
                operation: op.to_string(),
                units: rng.gen_range(0..5_000_000),
                timestamp: SimTime(t),
                ledger: bic("AAAAUS33"),
            });
        }
    }
    let rows = report(&records);
    let oracle = scan_oracle(&records);
    ensure!(rows == oracle, "report differs from the scan oracle");
    ensure!(rows.iter().all(|r| r.call_count == 1000), "call counts");
    let text = render_table(&rows);
    let header: Vec<&str> = text
        .lines()
        .next()
        .unwrap_or("")
        .split('|')
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .collect();
    ensure!(
        header[1..] == ["min", "avg", "median", "max", "# calls"],
        "header {header:?}"
    );
    ensure!(
        text.lines().count() == rows.len() + 2,
        "table has {} lines",
        text.lines().count()
    );
    Ok(format!("{} operations x 1000 records", rows.len()))
}

fn criterion_8() -> Outcome {
    // 0.003543387976528597 ETH / (3.095497367 Gwei * 1e-9) = 3543387976528597 / 3095497367
    let fee_wei: u128 = 3_543_387_976_528_597;
    let price_wei: u128 = 3_095_497_367;
    ensure!(
        fee_wei.is_multiple_of(price_wei),
        "division leaves remainder {}",
        fee_wei % price_wei
    );
    let units = fee_wei / price_wei;
    ensure!(units == 1_144_691, "implied units {units}");
    let price = dec("3.095497367");
    let fee = compute_fee(units as u64, price).map_err(|e| e.to_string())?;
    ensure!(fee == dec("0.003543387976528597"), "fee {fee}");

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    for _ in 0..1000 {
        let a = rng.gen_range(0..1u64 << 40);
        let b = rng.gen_range(0..1u64 << 40);
        let p = Decimal::new(rng.gen_range(0..1_000_000_000_000), rng.gen_range(0..10));
        let lhs = compute_fee(a + b, p).map_err(|e| e.to_string())?;
        let rhs = compute_fee(a, p).map_err(|e| e.to_string())? + compute_fee(b, p).map_err(|e| e.to_string())?;
        ensure!(lhs == rhs, "fee({a}+{b}, {p}) = {lhs}, sum is {rhs}");
    }
    Ok(format!("{units} units, linear on 1000 samples"))
}

fn criterion_9() -> Outcome {
    let dir = repo_root().join("scenarios");
    let mut names: Vec<_> = std::fs::read_dir(&dir)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    names.sort();
    ensure!(!names.is_empty(), "no scenarios in {}", dir.display());
    let mut tampers = 0;
    for path in &names {
        let name = path.file_name().unwrap().to_string_lossy();
        let config = load_scenario(path).map_err(|e| format!("{name}: {e}"))?;
        let s = simulate(&config, RunOptions::default()).map_err(|e| format!("{name}: {e}"))?;
        let lines: Vec<String> = s.trail.iter().map(|r| r.to_line()).collect();
        let replayed = replay_trail(&lines.concat(), &s.initial).map_err(|e| format!("{name}: {e}"))?;
        ensure!(
            replayed.final_snapshot == s.final_snapshot,
            "{name}: replay diverges from the live run"
        );
        for drop in 0..lines.len() {
            let text: String = lines
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != drop)
                .map(|(_, l)| l.as_str())
                .collect();
            ensure!(
                replay_trail(&text, &s.initial).is_err(),
                "{name}: deleting line {drop} went unnoticed"
            );
            tampers += 1;
        }
        for (i, line) in lines.iter().enumerate() {
            for key in ["\"message_digest\":\"", "\"balances_digest\":\"", "\"digest\":\""] {
                let Some(at) = line.find(key) else { continue };
                let pos = at + key.len();
                let mut bytes = line.clone().into_bytes();
                bytes[pos] = if bytes[pos] == b'0' { b'1' } else { b'0' };
                let mut forged = lines.clone();
                forged[i] = String::from_utf8(bytes).unwrap();
                ensure!(
                    replay_trail(&forged.concat(), &s.initial).is_err(),
                    "{name}: digest tamper on line {i} ({key}) went unnoticed"
                );
                tampers += 1;
            }
        }
    }
    Ok(format!("{} scenarios, {tampers} tampered trails rejected", names.len()))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("extraction parity", criterion_1),
        ("codec round trip", criterion_2),
        ("three-agent settlement", criterion_3),
        ("conservation", criterion_4),
        ("rollback totality", criterion_5),
        ("guard atomicity", criterion_6),
        ("gas report shape", criterion_7),
        ("fee arithmetic", criterion_8),
        ("replay fidelity", criterion_9),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS criterion {} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {} {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
