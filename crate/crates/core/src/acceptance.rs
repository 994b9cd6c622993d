//! The ten acceptance checks, each runnable on its own.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::channel::{oracle, resolve_slot};
use crate::error::{ConfigError, Result};
use crate::harness::{
    competitiveness_fit, emit_csv, expand_grid, first_unblockable_round, ols, run_experiment, CellResults, CsvRow,
    FitPoint,
};
use crate::params::{default_raw, phase_slots, RawConfig};
use crate::protocol::Phase;
use crate::sim::{ReactiveTable, TrialOptions, TrialResult};

/// Criterion names in suite order.
pub const CRITERIA: [&str; 10] = [
    "oracle",
    "delivery",
    "blocking",
    "latency",
    "competitiveness",
    "general_k",
    "exhaustion",
    "reactive",
    "determinism",
    "approx_n",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriterionOutcome {
    pub id: usize,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl CriterionOutcome {
    pub fn line(&self) -> String {
        format!(
            "[{}] C{} {}: {} ({:.1}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SuiteOptions {
    pub parallelism: usize,
    pub seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            parallelism: std::thread::available_parallelism().map_or(1, |n| n.get()),
            seed: 1,
        }
    }
}

/// Parses a comma-separated criterion list. Accepts names or `C<n>`.
pub fn parse_filter(list: &str) -> Result<Vec<&'static str>, ConfigError> {
    let mut out = Vec::new();
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let lower = item.to_ascii_lowercase();
        let by_id = lower
            .strip_prefix('c')
            .and_then(|d| d.parse::<usize>().ok())
            .and_then(|i| CRITERIA.get(i.wrapping_sub(1)).copied());
        let name = by_id
            .or_else(|| CRITERIA.iter().copied().find(|c| *c == lower))
            .ok_or_else(|| ConfigError::new("criteria", format!("unknown criterion `{item}`")))?;
        if !out.contains(&name) {
            out.push(name);
        }
    }
    if out.is_empty() {
        return Err(ConfigError::new("criteria", "empty criterion list"));
    }
    Ok(out)
}

struct Ctx {
    opts: SuiteOptions,
}

impl Ctx {
    fn raw(&self, pairs: &[(&str, &str)]) -> RawConfig {
        let mut raw = default_raw();
        raw.insert("seed".into(), self.opts.seed.to_string());
        for (k, v) in pairs {
            raw.insert(k.to_string(), v.to_string());
        }
        raw
    }

    fn run(&self, pairs: &[(&str, &str)]) -> Result<Vec<CellResults>> {
        let cells = expand_grid(&self.raw(pairs))?;
        run_experiment(&cells, self.opts.parallelism, &TrialOptions::default())
    }
}

fn all_conserved(cells: &[CellResults]) -> bool {
    cells.iter().flat_map(|c| &c.results).all(|r| r.conservation_ok)
}

fn conservation_note(cells: &[CellResults]) -> &'static str {
    if all_conserved(cells) {
        ""
    } else {
        "; CONSERVATION VIOLATED"
    }
}

type Check = (bool, String);

fn c1_oracle(_: &Ctx) -> Result<Check> {
    let start = Instant::now();
    let mut cases = 0;
    let mut mismatches = Vec::new();
    for p in 1..=3 {
        let r = oracle::check(resolve_slot, p);
        cases += r.cases;
        mismatches.extend(r.mismatches);
    }
    let took = start.elapsed();
    Ok((
        mismatches.is_empty() && took < Duration::from_secs(1),
        format!("{} mismatches over {cases} cases in {:.3}s", mismatches.len(), took.as_secs_f64()),
    ))
}

fn c2_delivery(ctx: &Ctx) -> Result<Check> {
    let mut ok = true;
    let mut parts = Vec::new();
    for n in ["256", "1024"] {
        let start = Instant::now();
        let out = ctx.run(&[("n", n), ("k", "2"), ("epsilon_prime", "1/1024"), ("trials", "100")])?;
        let rs = &out[0].results;
        let full = rs.iter().filter(|r| r.informed_frac() == 1.0).count();
        let terminated = rs
            .iter()
            .filter(|r| r.alice_terminated && r.still_active == 0 && r.termination_slot.is_some())
            .count();
        let took = start.elapsed();
        ok &= full >= 99 && terminated == rs.len() && all_conserved(&out) && took < Duration::from_secs(60);
        parts.push(format!(
            "n={n}: full delivery {full}/100, all terminated {terminated}/100, {:.1}s{}",
            took.as_secs_f64(),
            conservation_note(&out)
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn c3_blocking(ctx: &Ctx) -> Result<Check> {
    let out = ctx.run(&[
        ("n", "1024"),
        ("f", "1"),
        ("epsilon_prime", "1/4096"),
        ("adversary.strategy", "phase-blocker"),
        ("adversary.victims", "spare"),
        ("trials", "100"),
    ])?;
    let rs = &out[0].results;
    let good = rs.iter().filter(|r| r.informed_frac() >= 0.75).count();
    let min = rs.iter().map(TrialResult::informed_frac).fold(f64::INFINITY, f64::min);
    Ok((
        good >= 95 && all_conserved(&out),
        format!(
            "informed_frac >= 0.75 in {good}/100 trials (min {min:.4}){}",
            conservation_note(&out)
        ),
    ))
}

fn c4_latency(ctx: &Ctx) -> Result<Check> {
    let sizes = "256,1024,4096";
    let null = ctx.run(&[("sweep.n", sizes), ("trials", "20")])?;
    let blocker = ctx.run(&[
        ("sweep.n", sizes),
        ("adversary.strategy", "phase-blocker"),
        ("adversary.gamma", "0.51"),
        ("trials", "20"),
    ])?;
    let ratio = |r: &TrialResult| r.termination_slot.map(|s| s as f64 / (r.n as f64).powf(1.5));
    let b_ratios: Vec<f64> = blocker.iter().flat_map(|c| c.results.iter().filter_map(ratio)).collect();
    let n_ratios: Vec<f64> = null.iter().flat_map(|c| c.results.iter().filter_map(ratio)).collect();
    let all_done = b_ratios.len() == 60 && n_ratios.len() == 60;
    if !all_done {
        return Ok((false, "some trials did not terminate".into()));
    }
    let k_fit = (b_ratios.iter().map(|x| x.ln()).sum::<f64>() / b_ratios.len() as f64).exp();
    let k = 1.25 * k_fit;
    let per_n: Vec<f64> = blocker
        .iter()
        .map(|c| c.results.iter().filter_map(ratio).sum::<f64>() / c.results.len() as f64)
        .collect();
    let stable = per_n.iter().all(|x| (x / k_fit - 1.0).abs() <= 0.25);
    let bounded = b_ratios.iter().chain(&n_ratios).all(|&x| x <= k);
    let xs: Vec<f64> = blocker.iter().flat_map(|c| c.results.iter().map(|r| (r.n as f64).ln())).collect();
    let ys: Vec<f64> = blocker
        .iter()
        .flat_map(|c| c.results.iter().map(|r| (r.termination_slot.unwrap() as f64).ln()))
        .collect();
    let slope = ols(&xs, &ys)?.slope;
    let nx: Vec<f64> = null.iter().flat_map(|c| c.results.iter().map(|r| (r.n as f64).ln())).collect();
    let ny: Vec<f64> = null
        .iter()
        .flat_map(|c| c.results.iter().map(|r| (r.termination_slot.unwrap() as f64).ln()))
        .collect();
    let null_slope = ols(&nx, &ny)?.slope;
    let ok = stable && bounded && (1.40..=1.60).contains(&slope) && all_conserved(&null) && all_conserved(&blocker);
    Ok((
        ok,
        format!(
            "blocker slot/n^1.5 by n = [{}], K = {k:.2}; all trials <= K n^1.5: {bounded}; blocker slope {slope:.3}; \
             null slope {null_slope:.3}{}{}",
            per_n.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(", "),
            conservation_note(&null),
            conservation_note(&blocker)
        ),
    ))
}

fn c5_competitiveness(ctx: &Ctx) -> Result<Check> {
    let out = ctx.run(&[
        ("n", "1024"),
        ("k", "2"),
        ("adversary.strategy", "phase-blocker"),
        ("adversary.gamma", "1"),
        ("sweep.adversary.stop_round", "4..9"),
        ("trials", "20"),
    ])?;
    let points: Vec<FitPoint> = out.iter().flat_map(|c| c.results.iter().map(FitPoint::from)).collect();
    let fit = competitiveness_fit(&points)?;
    let bands = crate::harness::alice_bands(1024, 2);
    let node_ok = fit.node.slope <= 1.0 / 3.0 + 0.10 && fit.node.r2 >= 0.9;
    let alice_ok = fit.alice.slope <= 1.0 / 3.0 + 0.15;
    Ok((
        node_ok && alice_ok && all_conserved(&out),
        format!(
            "node slope {:.3} (R2 {:.3}, bound 0.433); alice slope {:.3} (bound 0.483; bands {:.3}/{:.3}){}",
            fit.node.slope,
            fit.node.r2,
            fit.alice.slope,
            bands.base,
            bands.with_polylog,
            conservation_note(&out)
        ),
    ))
}

/// Last round in which any node became informed, i.e. the round in which
/// the broadcast finished for the nodes.
fn node_termination_round(r: &TrialResult) -> Option<u32> {
    r.relay_sets.iter().filter(|s| s.size > 0).map(|s| s.round).max()
}

fn c6_general_k(ctx: &Ctx) -> Result<Check> {
    let out = ctx.run(&[("n", "1024"), ("k", "3"), ("trials", "20")])?;
    let rs = &out[0].results;
    let n = 1024f64;
    let ln_n = n.ln();
    let mut steps_ok = true;
    let mut good = 0;
    let mut sizes = Vec::new();
    for r in rs {
        steps_ok &= r.rounds.iter().all(|x| x.propagation_steps == 2);
        for round in r.rounds.iter().map(|x| x.round) {
            let props: Vec<u32> = r
                .phases
                .iter()
                .filter(|p| p.round == round)
                .filter_map(|p| match p.phase {
                    Phase::Propagation { step } => Some(step),
                    _ => None,
                })
                .collect();
            steps_ok &= props == [1, 2];
        }
        let Some(round) = node_termination_round(r) else { continue };
        let Some(s1) = r.relay_sets.iter().find(|s| s.round == round && s.h == 1) else {
            continue;
        };
        let target = (n * ln_n * ln_n / 2f64.powf(2.0 * round as f64 / 3.0)).min(s1.active_uninformed as f64);
        if s1.size as f64 >= 0.25 * target {
            good += 1;
        }
        sizes.push(format!("r{round}:{}/{:.0}", s1.size, target));
    }
    sizes.dedup();
    Ok((
        steps_ok && good >= 18 && all_conserved(&out),
        format!(
            "two propagation steps every round: {steps_ok}; |S_i,1| >= 0.25 target in {good}/20 [{}]{}",
            sizes.join(" "),
            conservation_note(&out)
        ),
    ))
}

fn c7_exhaustion(ctx: &Ctx) -> Result<Check> {
    let raw = ctx.raw(&[
        ("n", "1024"),
        ("k", "2"),
        ("adversary.strategy", "phase-blocker"),
        ("trials", "5"),
    ]);
    let cells = expand_grid(&raw)?;
    let cfg = cells[0].cfg.clone();
    let out = run_experiment(&cells, ctx.opts.parallelism, &TrialOptions::default())?;
    let predicted = cfg.predicted_unblockable_round();
    let mut ok = all_conserved(&out);
    let mut seen = Vec::new();
    for r in &out[0].results {
        let observed = first_unblockable_round(r, &cfg);
        ok &= r.adversary_cost <= r.pooled_budget;
        ok &= observed.is_some_and(|o| (o as f64 - predicted).abs() <= 1.0);
        seen.push(format!("{observed:?}"));
    }
    seen.dedup();
    let r0 = &out[0].results[0];
    let exhausted_round = r0.exhausted_at.and_then(|slot| {
        r0.phases
            .iter()
            .find(|p| p.start <= slot && slot <= p.start + p.length)
            .map(|p| p.round)
    });
    let last_len = phase_slots(cfg.k, predicted.ceil() as u32).unwrap_or(0);
    Ok((
        ok,
        format!(
            "first unblockable round {} vs predicted {predicted:.2} +/- 1; pool ran dry in round {exhausted_round:?}; \
             T = {} of {} (phase length at round {}: {last_len}){}",
            seen.join(","),
            r0.adversary_cost,
            r0.pooled_budget,
            predicted.ceil(),
            conservation_note(&out)
        ),
    ))
}

/// Pearson chi-square on the 2x2 table of payload kind against jam
/// decision, one degree of freedom. `None` when a margin is empty.
pub fn reactive_independence(t: &ReactiveTable) -> Option<(f64, f64)> {
    let cells = [
        [t.m_jammed as f64, t.m_clear as f64],
        [t.decoy_jammed as f64, t.decoy_clear as f64],
    ];
    let rows = [cells[0][0] + cells[0][1], cells[1][0] + cells[1][1]];
    let cols = [cells[0][0] + cells[1][0], cells[0][1] + cells[1][1]];
    let total = rows[0] + rows[1];
    if rows.contains(&0.0) || cols.contains(&0.0) {
        return None;
    }
    let mut stat = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let e = rows[i] * cols[j] / total;
            stat += (cells[i][j] - e).powi(2) / e;
        }
    }
    let p = ChiSquared::new(1.0).ok()?.sf(stat);
    Some((stat, p))
}

fn c8_reactive(ctx: &Ctx) -> Result<Check> {
    let out = ctx.run(&[
        ("n", "1024"),
        ("f", "1/32"),
        ("epsilon_prime", "1/2"),
        ("adversary_mode", "reactive"),
        ("decoys_enabled", "true"),
        ("adversary.strategy", "reactive-jammer"),
        ("adversary.p_commit", "0.5"),
        ("trials", "50"),
    ])?;
    let rs = &out[0].results;
    let good = rs.iter().filter(|r| r.informed_frac() >= 0.75).count();
    let mut table = ReactiveTable::default();
    for r in rs {
        table.add(&r.reactive_table);
    }
    let chi = reactive_independence(&table);
    let chi_ok = chi.is_some_and(|(_, p)| p > 0.01);
    Ok((
        good * 100 >= 95 * rs.len() && chi_ok && all_conserved(&out),
        format!(
            "informed_frac >= 0.75 in {good}/{}; jam table m {}/{} decoy {}/{} (jammed/clear), chi2 {}{}",
            rs.len(),
            table.m_jammed,
            table.m_clear,
            table.decoy_jammed,
            table.decoy_clear,
            chi.map_or("undefined".to_string(), |(s, p)| format!("{s:.3}, p = {p:.3}")),
            conservation_note(&out)
        ),
    ))
}

fn csv_bytes(cells: &[CellResults]) -> Result<Vec<u8>> {
    let rows: Vec<CsvRow> = cells.iter().flat_map(|c| c.results.iter().map(CsvRow::from)).collect();
    let mut buf = Vec::new();
    emit_csv(&rows, &mut buf)?;
    Ok(buf)
}

fn c9_determinism(ctx: &Ctx) -> Result<Check> {
    let grids: [&[(&str, &str)]; 3] = [
        &[("n", "256"), ("trials", "100")],
        &[
            ("n", "1024"),
            ("f", "1/32"),
            ("epsilon_prime", "1/2"),
            ("adversary_mode", "reactive"),
            ("decoys_enabled", "true"),
            ("adversary.strategy", "reactive-jammer"),
            ("adversary.p_commit", "0.5"),
            ("trials", "20"),
        ],
        &[
            ("n", "1024"),
            ("adversary.strategy", "phase-blocker"),
            ("adversary.gamma", "1"),
            ("sweep.adversary.stop_round", "4..9"),
            ("trials", "4"),
        ],
    ];
    let mut identical = true;
    let mut conserved = true;
    let mut trials = 0;
    for g in grids {
        let cells = expand_grid(&ctx.raw(g))?;
        let a = run_experiment(&cells, ctx.opts.parallelism, &TrialOptions::default())?;
        let b = run_experiment(&cells, 1, &TrialOptions::default())?;
        identical &= csv_bytes(&a)? == csv_bytes(&b)?;
        conserved &= all_conserved(&a) && all_conserved(&b);
        trials += 2 * a.iter().map(|c| c.results.len()).sum::<usize>();
    }
    Ok((
        identical && conserved,
        format!("byte-identical CSV on rerun: {identical}; conservation on all {trials} trials: {conserved}"),
    ))
}

fn c10_approx(ctx: &Ctx) -> Result<Check> {
    let base = ctx.run(&[("n", "256"), ("trials", "20")])?;
    let approx = ctx.run(&[("n", "256"), ("approx_n_mode", "2"), ("trials", "20")])?;
    let full = approx[0].results.iter().filter(|r| r.informed_frac() == 1.0).count();
    let mean = |c: &[CellResults], f: &dyn Fn(&TrialResult) -> f64| {
        c[0].results.iter().map(f).sum::<f64>() / c[0].results.len() as f64
    };
    let inflation = mean(&approx, &|r| r.mean_node_cost) / mean(&base, &|r| r.mean_node_cost);
    let max_inflation = mean(&approx, &|r| r.max_node_cost as f64) / mean(&base, &|r| r.max_node_cost as f64);
    let ln_nu = 2.0 * 256f64.ln();
    let constant = inflation / ln_nu;
    Ok((
        full >= 18 && constant <= 4.0 && all_conserved(&base) && all_conserved(&approx),
        format!(
            "full delivery {full}/20; per-node cost inflation {inflation:.3} = {constant:.3} ln(nu) \
             (max-node {max_inflation:.3}){}{}",
            conservation_note(&base),
            conservation_note(&approx)
        ),
    ))
}

/// Runs the selected criteria (all when `filter` is `None`) in suite order.
pub fn run_suite(filter: Option<&[&str]>, opts: SuiteOptions) -> Vec<CriterionOutcome> {
    let ctx = Ctx { opts };
    let table: [fn(&Ctx) -> Result<Check>; 10] = [
        c1_oracle,
        c2_delivery,
        c3_blocking,
        c4_latency,
        c5_competitiveness,
        c6_general_k,
        c7_exhaustion,
        c8_reactive,
        c9_determinism,
        c10_approx,
    ];
    let mut out = Vec::new();
    for (i, (name, check)) in CRITERIA.iter().zip(table).enumerate() {
        if filter.is_some_and(|f| !f.contains(name)) {
            continue;
        }
        let start = Instant::now();
        let (passed, detail) = check(&ctx).unwrap_or_else(|e| (false, format!("error: {e}")));
        out.push(CriterionOutcome {
            id: i + 1,
            name: name.to_string(),
            passed,
            detail,
            elapsed: start.elapsed(),
        });
    }
    out
}
