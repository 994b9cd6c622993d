//! The bulk-sampling trial engine and the slot-by-slot reference simulator
//! must agree in distribution. Each scenario runs both on the same seeds and
//! compares sample means with a two-sample z bound.

use jamcast_core::adversary::Strategy;
use jamcast_core::params::{default_raw, validate_config, SimConfig};
use jamcast_core::reference::reference_trial;
use jamcast_core::sim::{run_trial, TrialOptions};

fn trials() -> u64 {
    std::env::var("EVR_TRIALS").ok().and_then(|v| v.parse().ok()).unwrap_or(300)
}

fn setup(pairs: &[(&str, &str)]) -> (SimConfig, Strategy) {
    let mut raw = default_raw();
    raw.insert("n".into(), "8".into());
    raw.insert("max_rounds".into(), "8".into());
    raw.insert("min_termination_round".into(), "3".into());
    for (k, v) in pairs {
        raw.insert(k.to_string(), v.to_string());
    }
    let strategy = Strategy::from_raw(&raw).unwrap();
    (validate_config(&raw).unwrap(), strategy)
}

#[derive(Default)]
struct Stat {
    xs: Vec<f64>,
}

impl Stat {
    fn push(&mut self, x: f64) {
        self.xs.push(x);
    }
    fn mean(&self) -> f64 {
        self.xs.iter().sum::<f64>() / self.xs.len() as f64
    }
    fn var(&self) -> f64 {
        let m = self.mean();
        self.xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (self.xs.len() as f64 - 1.0)
    }
}

fn compare(name: &str, pairs: &[(&str, &str)]) {
    let (base, strategy) = setup(pairs);
    let labels = ["informed", "alice_cost", "mean_node_cost", "max_node_cost", "round", "adversary_cost", "blocked"];
    let mut a: Vec<Stat> = labels.iter().map(|_| Stat::default()).collect();
    let mut b: Vec<Stat> = labels.iter().map(|_| Stat::default()).collect();
    for t in 0..trials() {
        let mut cfg = base.clone();
        cfg.seed = 1000 + t;
        let e = run_trial(&cfg, &strategy, &TrialOptions::default()).unwrap();
        assert!(e.conservation_ok, "{name}: conservation");
        let r = reference_trial(&cfg, &strategy).unwrap();
        let ev = [
            e.informed_count as f64,
            e.alice_cost as f64,
            e.mean_node_cost,
            e.max_node_cost as f64,
            e.termination_round.map_or(99.0, f64::from),
            e.adversary_cost as f64,
            e.blocked_phase_count() as f64,
        ];
        let rv = [
            r.informed_count as f64,
            r.alice_cost as f64,
            r.mean_node_cost,
            r.max_node_cost as f64,
            r.termination_round.map_or(99.0, f64::from),
            r.adversary_cost as f64,
            r.blocked_phase_count as f64,
        ];
        for i in 0..labels.len() {
            a[i].push(ev[i]);
            b[i].push(rv[i]);
        }
    }
    for (i, label) in labels.iter().enumerate() {
        let (ma, mb) = (a[i].mean(), b[i].mean());
        let se = ((a[i].var() + b[i].var()) / trials() as f64).sqrt();
        let slack = 4.5 * se + 1e-6 * ma.abs().max(mb.abs()) + 1e-9;
        assert!(
            (ma - mb).abs() <= slack,
            "{name} {label}: engine {ma:.3} vs reference {mb:.3} (se {se:.3})"
        );
    }
}

#[test]
fn null_default() {
    compare("null", &[]);
}

#[test]
fn null_loose_epsilon() {
    compare("null eps 1/8", &[("epsilon_prime", "1/8")]);
}

#[test]
fn blocker_all_nodes() {
    compare(
        "blocker",
        &[
            ("epsilon_prime", "1/8"),
            ("f", "0.25"),
            ("adversary.strategy", "phase-blocker"),
            ("adversary.gamma", "0.6"),
            ("adversary.stop_round", "4"),
        ],
    );
}

#[test]
fn blocker_spare_subset() {
    compare(
        "spare",
        &[
            ("epsilon_prime", "1/8"),
            ("f", "1"),
            ("adversary.strategy", "phase-blocker"),
            ("adversary.gamma", "1"),
            ("adversary.spare_fraction", "0.5"),
            ("adversary.stop_round", "5"),
        ],
    );
}

#[test]
fn request_spoofer() {
    compare(
        "spoofer",
        &[
            ("epsilon_prime", "1/8"),
            ("f", "0.25"),
            ("adversary.strategy", "request-spoofer"),
        ],
    );
}

#[test]
fn reactive_with_decoys() {
    compare(
        "reactive",
        &[
            ("epsilon_prime", "1/2"),
            ("f", "0.25"),
            ("adversary_mode", "reactive"),
            ("decoys_enabled", "true"),
            ("adversary.strategy", "reactive-jammer"),
            ("adversary.p_commit", "0.5"),
        ],
    );
}

#[test]
fn three_steps() {
    compare("k=3", &[("k", "3"), ("epsilon_prime", "1/8")]);
}

#[test]
fn unknown_n() {
    compare("approx", &[("approx_n_mode", "1"), ("epsilon_prime", "1/8"), ("max_rounds", "6")]);
}

#[test]
fn late_start_sparse_listening() {
    compare(
        "late",
        &[("epsilon_prime", "1/2"), ("i_start", "6"), ("min_termination_round", "8"), ("max_rounds", "4")],
    );
}

#[test]
fn late_start_blocked_inform() {
    compare(
        "late block",
        &[
            ("epsilon_prime", "1/2"),
            ("i_start", "6"),
            ("min_termination_round", "7"),
            ("max_rounds", "4"),
            ("f", "4"),
            ("adversary.strategy", "phase-blocker"),
            ("adversary.phases", "inform"),
            ("adversary.gamma", "0.8"),
        ],
    );
}

#[test]
fn late_start_reactive() {
    compare(
        "late react",
        &[
            ("epsilon_prime", "1/2"),
            ("i_start", "6"),
            ("min_termination_round", "7"),
            ("max_rounds", "4"),
            ("f", "4"),
            ("adversary_mode", "reactive"),
            ("decoys_enabled", "true"),
            ("adversary.strategy", "reactive"),
            ("adversary.p_commit", "0.7"),
        ],
    );
}

#[test]
fn late_start_spoofed_requests() {
    compare(
        "late spoof",
        &[
            ("epsilon_prime", "1/2"),
            ("i_start", "5"),
            ("min_termination_round", "5"),
            ("max_rounds", "5"),
            ("f", "4"),
            ("adversary.strategy", "spoofer"),
        ],
    );
}

#[test]
fn late_start_three_steps_unknown_n() {
    compare(
        "late k3",
        &[
            ("k", "3"),
            ("epsilon_prime", "1/2"),
            ("i_start", "6"),
            ("min_termination_round", "7"),
            ("max_rounds", "3"),
            ("approx_n_mode", "1"),
        ],
    );
}

#[test]
fn late_start_partial_victims() {
    compare(
        "late victims",
        &[
            ("n", "12"),
            ("epsilon_prime", "1/2"),
            ("i_start", "5"),
            ("min_termination_round", "6"),
            ("max_rounds", "3"),
            ("f", "4"),
            ("adversary.strategy", "phase-blocker"),
            ("adversary.phases", "inform,propagation"),
            ("adversary.gamma", "0.97"),
            ("adversary.spare_fraction", "0.5"),
        ],
    );
}
