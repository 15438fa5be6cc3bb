mod common;

use cbpr_core::scenario::{
    generate_scenario, parse_scenario, replay_trail, simulate, AuditRecord, GeneratorParams, Network, RunOptions,
    Simulation,
};
use proptest::prelude::*;

fn trail_text(s: &Simulation) -> String {
    s.trail.iter().map(|r| r.to_line()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_scenarios_replay_exactly(seed in any::<u64>()) {
        let config = generate_scenario(seed, &GeneratorParams::default());
        let s = simulate(&config, RunOptions::default()).unwrap();
        let report = replay_trail(&trail_text(&s), &s.initial).unwrap();
        prop_assert_eq!(&report.final_snapshot, &s.final_snapshot);
        prop_assert_eq!(report.transactions, s.runs.len() as u64);
        prop_assert_eq!(s.initial.totals(), s.final_snapshot.totals());
    }

    #[test]
    fn runs_are_a_function_of_the_config_text(seed in any::<u64>(), parallel in any::<bool>()) {
        let text = generate_scenario(seed, &GeneratorParams::default()).to_toml();
        let a = simulate(&parse_scenario(&text).unwrap(), RunOptions::default()).unwrap();
        let b = simulate(&parse_scenario(&text).unwrap(), RunOptions { parallel }).unwrap();
        prop_assert_eq!(trail_text(&a), trail_text(&b));
        prop_assert_eq!(a.call_records, b.call_records);
    }

    #[test]
    fn trail_holds_every_ledger_event(seed in any::<u64>()) {
        let config = generate_scenario(seed, &GeneratorParams::default());
        let net = Network::build(&config).unwrap();
        let mut trail_events = 0;
        for (i, tx) in config.transactions.iter().enumerate() {
            let run = net.execute(i, tx).unwrap();
            trail_events += run
                .entries
                .iter()
                .filter(|e| matches!(e, cbpr_core::scenario::TrailEntry::Event { .. }))
                .count();
        }
        let ledger_events: usize = net
            .directory()
            .agents()
            .map(|a| net.directory().with_ledger(a, |l| l.event_log().len()).unwrap())
            .sum();
        prop_assert_eq!(trail_events, ledger_events);

        let s = simulate(&config, RunOptions::default()).unwrap();
        let events = s.trail.iter().filter(|r| matches!(r, AuditRecord::Event { .. })).count();
        prop_assert_eq!(events, ledger_events);
    }

    #[test]
    fn dropping_any_trail_line_is_detected(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let config = generate_scenario(seed, &GeneratorParams::default());
        let s = simulate(&config, RunOptions::default()).unwrap();
        let lines: Vec<String> = s.trail.iter().map(|r| r.to_line()).collect();
        let drop = pick.index(lines.len());
        let kept: String = lines
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != drop)
            .map(|(_, l)| l.as_str())
            .collect();
        prop_assert!(replay_trail(&kept, &s.initial).is_err(), "deleting line {} went unnoticed", drop);
    }
}
