use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn jam(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jamharness"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("JAMHARNESS_SEED")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap()
}

#[test]
fn golden_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = jam(&["run", "--set", "n=256", "--set", "adversary.strategy=null"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(&dir.path().join("trials.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("seed,n,f,k,epsilon_prime,strategy,T,"));
    let cols: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(cols[1], "256");
    assert_eq!(cols[6], "0");
    assert_eq!(cols[10], "1.0");
    assert!(read(&dir.path().join("effective_config")).contains("n = 256\n"));
    let summary: serde_json::Value = serde_json::from_str(&read(&dir.path().join("summary"))).unwrap();
    assert_eq!(summary["cells"][0]["full_delivery_trials"], 1);
    assert!(!dir.path().join("slot_trace.csv").exists());
    assert!(String::from_utf8_lossy(&o.stdout).contains("informed_frac 1.0"));
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = jam(&["run", "--set", "k=1"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("k:"));
    assert_eq!(code(&jam(&["run", "--set", "bogus=3"], dir.path())), 1);
    assert_eq!(code(&jam(&["run", "--set", "noequals"], dir.path())), 1);
    assert_eq!(code(&jam(&["run", "--config", "/nonexistent/cfg"], dir.path())), 1);
    assert_eq!(code(&jam(&["run", "--set", "sweep.n=16,32"], dir.path())), 1);
}

#[test]
fn failed_assertion_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = jam(&["run", "--set", "n=64", "--set", "assert.informed_frac_min=1.1"], dir.path());
    assert_eq!(code(&o), 2);
    let o = jam(&["run", "--set", "n=64", "--set", "assert.informed_frac_min=1"], dir.path());
    assert_eq!(code(&o), 0);
}

#[test]
fn file_then_env_then_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("base.cfg");
    fs::write(&cfg, "# base\nn = 128\nseed = 5\ntrials = 2\n").unwrap();
    let out = dir.path().join("o");
    let o = jam(&["run", "--config", cfg.to_str().unwrap(), "--set", "n=64"], &out);
    assert_eq!(code(&o), 0);
    let eff = read(&out.join("effective_config"));
    assert!(eff.contains("n = 64\n") && eff.contains("seed = 5\n") && eff.contains("trials = 2\n"));

    let env_run = |seed: &str, out: &Path| {
        Command::new(env!("CARGO_BIN_EXE_jamharness"))
            .args(["run", "--config", cfg.to_str().unwrap(), "--out"])
            .arg(out)
            .env("JAMHARNESS_SEED", seed)
            .output()
            .unwrap()
    };
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert_eq!(code(&env_run("77", &a)), 0);
    assert_eq!(code(&env_run("77", &b)), 0);
    assert_eq!(code(&env_run("78", &c)), 0);
    assert!(read(&a.join("effective_config")).contains("seed = 77\n"));
    assert_eq!(read(&a.join("trials.csv")), read(&b.join("trials.csv")));
    assert_ne!(read(&a.join("trials.csv")), read(&c.join("trials.csv")));
}

#[test]
fn trace_at_verbosity_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = jam(&["run", "--set", "n=32", "--verbosity", "2"], dir.path());
    assert_eq!(code(&o), 0);
    let trace = read(&dir.path().join("slot_trace.csv"));
    let mut lines = trace.lines();
    assert_eq!(
        lines.next().unwrap(),
        "seed,round,phase,global_slot,transmissions,carries_m,decoys,jammed,newly_informed"
    );
    assert!(lines.count() > 0);
    let o = jam(&["run", "--set", "n=32", "--verbosity", "0"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());
    assert!(!dir.path().join("slot_trace.csv").exists());
}

#[test]
fn stop_round_sweep_is_reproducible() {
    let args = [
        "sweep",
        "--set",
        "n=128",
        "--set",
        "adversary.strategy=phase-blocker",
        "--set",
        "adversary.gamma=1",
        "--set",
        "sweep.adversary.stop_round=4..9",
        "--set",
        "trials=3",
    ];
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = jam(&args, &a);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("fit: slope_node"));
    let mut more = args.to_vec();
    more.extend(["--parallelism", "1"]);
    assert_eq!(code(&jam(&more, &b)), 0);
    let csv = read(&a.join("trials.csv"));
    assert_eq!(csv.lines().count(), 1 + 6 * 3);
    assert_eq!(csv, read(&b.join("trials.csv")));
    assert_eq!(read(&a.join("summary")), read(&b.join("summary")));
    let summary: serde_json::Value = serde_json::from_str(&read(&a.join("summary"))).unwrap();
    assert_eq!(summary["grid"].as_array().unwrap().len(), 6);
    assert!(summary["fit"]["node"]["slope"].is_f64());
    // rerun into the same directory overwrites with the same bytes
    assert_eq!(code(&jam(&args, &a)), 0);
    assert_eq!(csv, read(&a.join("trials.csv")));
}

#[test]
fn sweep_needs_a_grid() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&jam(&["sweep", "--set", "n=64"], dir.path())), 1);
    assert_eq!(code(&jam(&["sweep", "--set", "sweep.n="], dir.path())), 1);
}

#[test]
fn verify_filter() {
    let dir = tempfile::tempdir().unwrap();
    let o = jam(&["verify", "--criteria", "oracle"], dir.path());
    assert_eq!(code(&o), 0);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("[PASS] C1 oracle"));
    assert!(!stdout.contains("C2"));
    assert_eq!(code(&jam(&["verify", "--criteria", "latency,bogus"], dir.path())), 1);
}

#[test]
fn oracle_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let o = jam(&["oracle"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("384 cases, 0 mismatches"));
    let o = jam(&["oracle", "--max-participants", "2"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("41 cases, 0 mismatches"));
    let o = jam(&["oracle", "--inject-fault"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stdout).contains("[Listen, SendM, JamAll]"));
    assert_eq!(code(&jam(&["oracle", "--max-participants", "4"], dir.path())), 1);
}
