use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use jamcast_core::acceptance::{parse_filter, run_suite, SuiteOptions};
use jamcast_core::channel::{oracle, resolve_slot};
use jamcast_core::harness::{emit_csv, emit_trace, expand_grid, run_experiment, summarize, CellResults, CsvRow};
use jamcast_core::params::{default_raw, parse_config_text, parse_override, RawConfig};
use jamcast_core::sim::{TrialOptions, TRACE_ROW_CAP};
use jamcast_core::{ConfigError, Error};

const SEED_ENV: &str = "JAMHARNESS_SEED";

#[derive(Parser, Debug)]
#[command(name = "jamharness", version, about = "Broadcast-under-jamming simulator and experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Config file: `key = value` lines or a flat JSON object.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable. Applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "jamharness-out")]
    out: PathBuf,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// 0 silent, 1 verdicts, 2 adds per-cell lines and slot_trace.csv.
    #[arg(long, global = true, default_value_t = 1)]
    verbosity: u8,
    /// Comma-separated acceptance criteria for `verify`.
    #[arg(long, global = true)]
    criteria: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one configuration for `trials` repetitions.
    Run,
    /// Run every cell of the `sweep.*` grid and fit cost against T.
    Sweep,
    /// Run the acceptance suite.
    Verify,
    /// Check slot resolution against the exhaustive truth table.
    Oracle {
        #[arg(long, default_value_t = 3)]
        max_participants: u32,
        /// Check a deliberately broken resolver instead.
        #[arg(long)]
        inject_fault: bool,
    },
}

enum Failure {
    Config(String),
    Assertion(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(c) => Failure::Config(format!("config error: {c}")),
            other => Failure::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

fn resolve_config(common: &Common) -> Result<RawConfig, Failure> {
    let mut raw = default_raw();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::new("--config", format!("{}: {e}", path.display())))?;
        raw.extend(parse_config_text(&text)?);
    }
    if let Ok(seed) = std::env::var(SEED_ENV) {
        raw.insert("seed".into(), seed);
    }
    for spec in &common.set {
        let (k, v) = parse_override(spec)?;
        raw.insert(k, v);
    }
    Ok(raw)
}

fn parallelism(common: &Common) -> usize {
    common
        .parallelism
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

fn write_effective_config(out: &Path, raw: &RawConfig) -> Result<(), Failure> {
    fs::create_dir_all(out)?;
    let text: String = raw.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    fs::write(out.join("effective_config"), text)?;
    Ok(())
}

fn write_results(out: &Path, results: &[CellResults], verbosity: u8) -> Result<(), Failure> {
    let rows: Vec<CsvRow> = results.iter().flat_map(|c| c.results.iter().map(CsvRow::from)).collect();
    emit_csv(&rows, fs::File::create(out.join("trials.csv"))?)?;
    let summary = summarize(results);
    let mut json = serde_json::to_string_pretty(&summary).map_err(Error::from)?;
    json.push('\n');
    fs::write(out.join("summary"), json)?;
    let trace_path = out.join("slot_trace.csv");
    if verbosity >= 2 {
        let traces: Vec<(u64, &[_])> = results
            .iter()
            .flat_map(|c| c.results.iter().map(|r| (r.seed, r.trace.as_slice())))
            .collect();
        emit_trace(&traces, fs::File::create(&trace_path)?)?;
    } else if trace_path.exists() {
        fs::remove_file(trace_path)?;
    }
    Ok(())
}

fn check_assertions(raw: &RawConfig, results: &[CellResults]) -> Result<(), Failure> {
    if let Some(v) = raw.get("assert.informed_frac_min") {
        let min = jamcast_core::params::parse_real("assert.informed_frac_min", v)?;
        let worst = results
            .iter()
            .flat_map(|c| &c.results)
            .map(|r| r.informed_frac())
            .fold(f64::INFINITY, f64::min);
        if worst < min {
            return Err(Failure::Assertion(format!(
                "assertion failed: informed_frac {worst:?} < assert.informed_frac_min {min:?}"
            )));
        }
    }
    Ok(())
}

fn verdict(results: &[CellResults]) -> String {
    let all: Vec<_> = results.iter().flat_map(|c| &c.results).collect();
    let n = all.len().max(1) as f64;
    let frac = all.iter().map(|r| r.informed_frac()).sum::<f64>() / n;
    let t = all.iter().map(|r| r.adversary_cost as f64).sum::<f64>() / n;
    let max_cost = all.iter().map(|r| r.max_node_cost).max().unwrap_or(0);
    format!(
        "trials {} informed_frac {frac:?} T {t:?} max_node_cost {max_cost}",
        all.len()
    )
}

fn print_cells(results: &[CellResults]) {
    for c in results {
        let coords: Vec<String> = c.cell.coords.iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!("cell {} [{}]: {}", c.cell.index, coords.join(" "), verdict(std::slice::from_ref(c)));
    }
}

fn cmd_run(common: &Common) -> Result<(), Failure> {
    let raw = resolve_config(common)?;
    let cells = expand_grid(&raw)?;
    if raw.keys().any(|k| k.starts_with("sweep.")) {
        return Err(Failure::Config("run takes a single configuration; use `sweep` for sweep.* keys".into()));
    }
    write_effective_config(&common.out, &raw)?;
    let opts = TrialOptions {
        trace_cap: if common.verbosity >= 2 { TRACE_ROW_CAP } else { 0 },
    };
    let results = run_experiment(&cells, parallelism(common), &opts)?;
    write_results(&common.out, &results, common.verbosity)?;
    if common.verbosity >= 1 {
        println!("{}", verdict(&results));
    }
    check_assertions(&raw, &results)
}

fn cmd_sweep(common: &Common) -> Result<(), Failure> {
    let raw = resolve_config(common)?;
    if !raw.keys().any(|k| k.starts_with("sweep.")) {
        return Err(Failure::Config("sweep needs at least one sweep.<key> entry".into()));
    }
    let cells = expand_grid(&raw)?;
    write_effective_config(&common.out, &raw)?;
    let opts = TrialOptions {
        trace_cap: if common.verbosity >= 2 { TRACE_ROW_CAP } else { 0 },
    };
    let results = run_experiment(&cells, parallelism(common), &opts)?;
    write_results(&common.out, &results, common.verbosity)?;
    if common.verbosity >= 2 {
        print_cells(&results);
    }
    if common.verbosity >= 1 {
        println!("{} cells, {}", results.len(), verdict(&results));
        let summary = summarize(&results);
        match (&summary.fit, &summary.fit_error) {
            (Some(f), _) => println!(
                "fit: slope_node {:.4} (R2 {:.4}), slope_alice {:.4} (R2 {:.4}) over {} points",
                f.node.slope, f.node.r2, f.alice.slope, f.alice.r2, f.points
            ),
            (None, Some(e)) => println!("fit: not available ({e})"),
            _ => {}
        }
    }
    check_assertions(&raw, &results)
}

fn cmd_verify(common: &Common) -> Result<(), Failure> {
    let raw = resolve_config(common)?;
    let filter = match &common.criteria {
        Some(list) => Some(parse_filter(list)?),
        None => None,
    };
    let seed = jamcast_core::params::parse_uint("seed", raw.get("seed").map_or("1", String::as_str))?;
    write_effective_config(&common.out, &raw)?;
    let start = std::time::Instant::now();
    let outcomes = run_suite(
        filter.as_deref(),
        SuiteOptions {
            parallelism: parallelism(common),
            seed,
        },
    );
    let mut json = serde_json::to_string_pretty(&outcomes).map_err(Error::from)?;
    json.push('\n');
    fs::write(common.out.join("summary"), json)?;
    for o in &outcomes {
        println!("{}", o.line());
    }
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name.as_str()).collect();
    println!(
        "{}/{} criteria passed in {:.1}s",
        outcomes.len() - failed.len(),
        outcomes.len(),
        start.elapsed().as_secs_f64()
    );
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Assertion(format!("failed criteria: {}", failed.join(", "))))
    }
}

fn cmd_oracle(max_participants: u32, inject_fault: bool) -> Result<(), Failure> {
    if !(1..=3).contains(&max_participants) {
        return Err(Failure::Config("--max-participants: must be 1, 2 or 3".into()));
    }
    let resolver: oracle::Resolver = if inject_fault {
        oracle::faulty_resolve_slot
    } else {
        resolve_slot
    };
    let mut cases = 0;
    let mut mismatches = Vec::new();
    for p in 1..=max_participants {
        let r = oracle::check(resolver, p);
        cases += r.cases;
        mismatches.extend(r.mismatches);
    }
    println!("oracle: {cases} cases, {} mismatches", mismatches.len());
    for m in mismatches.iter().take(5) {
        println!("  {m}");
    }
    if mismatches.is_empty() {
        Ok(())
    } else {
        Err(Failure::Assertion(format!("{} oracle mismatches", mismatches.len())))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run => cmd_run(&cli.common),
        Command::Sweep => cmd_sweep(&cli.common),
        Command::Verify => cmd_verify(&cli.common),
        Command::Oracle {
            max_participants,
            inject_fault,
        } => cmd_oracle(*max_participants, *inject_fault),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Assertion(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(2)
        }
    }
}
