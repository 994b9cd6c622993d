use jamcast_core::harness::{emit_csv, expand_grid, parse_csv, run_experiment, summarize, CsvRow};
use jamcast_core::params::default_raw;
use jamcast_core::sim::TrialOptions;
use proptest::prelude::*;

fn raw(pairs: &[(&str, &str)]) -> jamcast_core::params::RawConfig {
    let mut r = default_raw();
    for (k, v) in pairs {
        r.insert(k.to_string(), v.to_string());
    }
    r
}

#[test]
fn three_null_trials_all_delivered() {
    let cells = expand_grid(&raw(&[("n", "256"), ("trials", "3")])).unwrap();
    let out = run_experiment(&cells, 2, &TrialOptions::default()).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].results.len(), 3);
    for r in &out[0].results {
        assert_eq!(r.informed_frac(), 1.0);
        assert_eq!(r.adversary_cost, 0);
    }
    let seeds: std::collections::BTreeSet<u64> = out[0].results.iter().map(|r| r.seed).collect();
    assert_eq!(seeds.len(), 3);
}

#[test]
fn parallelism_does_not_change_output() {
    let r = raw(&[
        ("sweep.n", "64,128"),
        ("sweep.adversary.stop_round", "2..4"),
        ("adversary.strategy", "phase-blocker"),
        ("adversary.gamma", "1"),
        ("trials", "4"),
    ]);
    let cells = expand_grid(&r).unwrap();
    assert_eq!(cells.len(), 6);
    let render = |p: usize| {
        let out = run_experiment(&cells, p, &TrialOptions::default()).unwrap();
        let rows: Vec<CsvRow> = out.iter().flat_map(|c| c.results.iter().map(CsvRow::from)).collect();
        let mut csv = Vec::new();
        emit_csv(&rows, &mut csv).unwrap();
        (csv, serde_json::to_string_pretty(&summarize(&out)).unwrap())
    };
    let one = render(1);
    assert_eq!(one, render(8));
    assert_eq!(String::from_utf8(one.0).unwrap().lines().count(), 25);
}

#[test]
fn summary_counts_match_grid() {
    let r = raw(&[("sweep.n", "32,64,128"), ("trials", "2")]);
    let out = run_experiment(&expand_grid(&r).unwrap(), 3, &TrialOptions::default()).unwrap();
    let s = summarize(&out);
    assert_eq!(s.grid.len(), 3);
    assert_eq!(s.cells.len(), 3);
    assert!(s.cells.iter().all(|c| c.trials == 2 && c.conservation_ok));
    // Null runs have T = 0 everywhere, so no fit.
    assert!(s.fit.is_none() && s.fit_error.is_some());
}

fn sig15(x: f64) -> f64 {
    format!("{x:.14e}").parse().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn csv_round_trip(
        seed in any::<u64>(),
        n in 2u64..1 << 40,
        f in 0.0f64..100.0,
        k in 2u32..64,
        eps in 1e-9f64..1.0,
        t in any::<u64>(),
        costs in (any::<u64>(), any::<u64>()),
        mean in 0.0f64..1e12,
        frac in 0.0f64..=1.0,
        slot in proptest::option::of(any::<u64>()),
        round in proptest::option::of(any::<u32>()),
        blocked in any::<u64>(),
        viol in any::<u64>(),
        name in "[a-z_]{1,16}",
    ) {
        let row = CsvRow {
            seed, n, f, k, epsilon_prime: eps, strategy: name, t,
            alice_cost: costs.0, max_node_cost: costs.1, mean_node_cost: mean,
            informed_frac: frac, termination_slot: slot, termination_round: round,
            blocked_phase_count: blocked, violations: viol,
        };
        let mut buf = Vec::new();
        emit_csv(std::slice::from_ref(&row), &mut buf).unwrap();
        let back = parse_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.len(), 1);
        let b = &back[0];
        prop_assert_eq!(sig15(b.f), sig15(row.f));
        prop_assert_eq!(sig15(b.epsilon_prime), sig15(row.epsilon_prime));
        prop_assert_eq!(sig15(b.mean_node_cost), sig15(row.mean_node_cost));
        prop_assert_eq!(sig15(b.informed_frac), sig15(row.informed_frac));
        prop_assert_eq!(b, &row);
    }
}
