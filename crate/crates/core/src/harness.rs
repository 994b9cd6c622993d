//! Experiment grids, parallel trial execution, aggregation, the
//! competitiveness regression and CSV output.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, OrderStatistics, Statistics};

use crate::adversary::Strategy;
use crate::error::{ConfigError, Error, Result};
use crate::params::{parse_real, phase_slots, validate_config, RawConfig, SimConfig};
use crate::rng::{derive_seed, domain};
use crate::sim::{run_trial, TraceRow, TrialOptions, TrialResult, TRACE_ROW_CAP};

/// Column order of `trials.csv`.
pub const CSV_COLUMNS: [&str; 15] = [
    "seed",
    "n",
    "f",
    "k",
    "epsilon_prime",
    "strategy",
    "T",
    "alice_cost",
    "max_node_cost",
    "mean_node_cost",
    "informed_frac",
    "termination_slot",
    "termination_round",
    "blocked_phase_count",
    "violations",
];

/// One point of the experiment grid.
#[derive(Debug, Clone)]
pub struct Cell {
    pub index: usize,
    /// Values of the swept keys for this cell.
    pub coords: BTreeMap<String, String>,
    pub cfg: SimConfig,
    pub strategy: Strategy,
    pub trials: u64,
}

fn expand_values(key: &str, spec: &str) -> Result<Vec<String>, ConfigError> {
    let spec = spec.trim();
    if let Some((lo, hi)) = spec.split_once("..") {
        let (lo, hi) = (lo.trim(), hi.trim().trim_start_matches('='));
        let lo: i64 = lo.parse().map_err(|_| ConfigError::new(key, format!("bad range start `{lo}`")))?;
        let hi: i64 = hi.parse().map_err(|_| ConfigError::new(key, format!("bad range end `{hi}`")))?;
        return Ok((lo..=hi).map(|v| v.to_string()).collect());
    }
    Ok(spec
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect())
}

/// Expands `sweep.<key> = a,b,c` (or an inclusive integer range `lo..hi`)
/// into the cartesian product of cells. Keys vary in lexicographic order,
/// last key fastest. A config without sweep keys is a single cell.
pub fn expand_grid(raw: &RawConfig) -> Result<Vec<Cell>> {
    let mut base = raw.clone();
    let mut axes: Vec<(String, Vec<String>)> = Vec::new();
    for (key, spec) in raw {
        if let Some(inner) = key.strip_prefix("sweep.") {
            base.remove(key);
            let values = expand_values(key, spec)?;
            if values.is_empty() {
                return Err(Error::EmptyGrid);
            }
            axes.push((inner.to_string(), values));
        }
    }
    let mut combos: Vec<BTreeMap<String, String>> = vec![BTreeMap::new()];
    for (key, values) in &axes {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.insert(key.clone(), v.clone());
                    c
                })
            })
            .collect();
    }
    let mut cells = Vec::with_capacity(combos.len());
    for (index, coords) in combos.into_iter().enumerate() {
        let mut cell_raw = base.clone();
        cell_raw.extend(coords.clone());
        let cfg = validate_config(&cell_raw)?;
        let strategy = Strategy::from_raw(&cell_raw)?;
        strategy.check_mode(cfg.adversary_mode)?;
        let trials = match cell_raw.get("trials") {
            Some(v) => crate::params::parse_uint("trials", v)?,
            None => 1,
        };
        if trials == 0 {
            return Err(ConfigError::new("trials", "must be ≥ 1").into());
        }
        cells.push(Cell {
            index,
            coords,
            cfg,
            strategy,
            trials,
        });
    }
    if cells.is_empty() {
        return Err(Error::EmptyGrid);
    }
    Ok(cells)
}

/// Seed of trial `trial` in cell `cell`, derived from the root seed.
pub fn trial_seed(root: u64, cell: usize, trial: u64) -> u64 {
    derive_seed(root, &[domain::TRIAL, cell as u64, trial])
}

#[derive(Debug, Clone)]
pub struct CellResults {
    pub cell: Cell,
    pub results: Vec<TrialResult>,
}

/// Runs every trial of every cell on `parallelism` worker threads. Output
/// order is (cell, trial) regardless of scheduling.
pub fn run_experiment(cells: &[Cell], parallelism: usize, opts: &TrialOptions) -> Result<Vec<CellResults>> {
    if cells.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let jobs: Vec<(usize, u64)> = cells
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| (0..c.trials).map(move |t| (ci, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let outcomes: Vec<Result<TrialResult>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(ci, t)| {
                let cell = &cells[ci];
                let mut cfg = cell.cfg.clone();
                cfg.seed = trial_seed(cell.cfg.seed, cell.index, t);
                run_trial(&cfg, &cell.strategy, opts).map_err(|e| Error::Trial {
                    cell: cell.index,
                    trial: t as usize,
                    source: Box::new(e),
                })
            })
            .collect()
    });
    let mut out: Vec<CellResults> = cells
        .iter()
        .map(|c| CellResults {
            cell: c.clone(),
            results: Vec::with_capacity(c.trials as usize),
        })
        .collect();
    for (&(ci, _), r) in jobs.iter().zip(outcomes) {
        out[ci].results.push(r?);
    }
    Ok(out)
}

/// Distribution summary of one numeric field over a cell's trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub q05: f64,
    pub median: f64,
    pub q95: f64,
    pub max: f64,
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Option<Quantiles> {
        if values.is_empty() {
            return None;
        }
        let mean = values.iter().mean();
        let mut data = Data::new(values.to_vec());
        Some(Quantiles {
            count: values.len(),
            mean,
            min: Statistics::min(values.iter()),
            q05: data.quantile(0.05),
            median: data.median(),
            q95: data.quantile(0.95),
            max: Statistics::max(values.iter()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub index: usize,
    pub coords: BTreeMap<String, String>,
    pub config: SimConfig,
    pub strategy: String,
    pub trials: usize,
    pub full_delivery_trials: usize,
    pub terminated_trials: usize,
    pub max_rounds_hit: usize,
    pub conservation_ok: bool,
    pub budget_violations: u64,
    pub informed_frac: Option<Quantiles>,
    pub termination_slot: Option<Quantiles>,
    pub termination_round: Option<Quantiles>,
    pub alice_cost: Option<Quantiles>,
    pub max_node_cost: Option<Quantiles>,
    pub mean_node_cost: Option<Quantiles>,
    pub adversary_cost: Option<Quantiles>,
    pub blocked_phase_count: Option<Quantiles>,
}

impl CellSummary {
    pub fn of(cr: &CellResults) -> CellSummary {
        let rs = &cr.results;
        let col = |f: &dyn Fn(&TrialResult) -> Option<f64>| -> Option<Quantiles> {
            Quantiles::of(&rs.iter().filter_map(f).collect::<Vec<_>>())
        };
        CellSummary {
            index: cr.cell.index,
            coords: cr.cell.coords.clone(),
            config: cr.cell.cfg.clone(),
            strategy: cr.cell.strategy.name().to_string(),
            trials: rs.len(),
            full_delivery_trials: rs.iter().filter(|r| r.informed_count == r.n).count(),
            terminated_trials: rs.iter().filter(|r| r.termination_slot.is_some()).count(),
            max_rounds_hit: rs.iter().filter(|r| r.max_rounds_hit).count(),
            conservation_ok: rs.iter().all(|r| r.conservation_ok),
            budget_violations: rs.iter().map(|r| r.budget_violations).sum(),
            informed_frac: col(&|r| Some(r.informed_frac())),
            termination_slot: col(&|r| r.termination_slot.map(|v| v as f64)),
            termination_round: col(&|r| r.termination_round.map(f64::from)),
            alice_cost: col(&|r| Some(r.alice_cost as f64)),
            max_node_cost: col(&|r| Some(r.max_node_cost as f64)),
            mean_node_cost: col(&|r| Some(r.mean_node_cost)),
            adversary_cost: col(&|r| Some(r.adversary_cost as f64)),
            blocked_phase_count: col(&|r| Some(r.blocked_phase_count() as f64)),
        }
    }
}

/// One observation for the competitiveness regression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub t: f64,
    pub max_node_cost: f64,
    pub alice_cost: f64,
}

impl From<&TrialResult> for FitPoint {
    fn from(r: &TrialResult) -> Self {
        FitPoint {
            t: r.adversary_cost as f64,
            max_node_cost: r.max_node_cost as f64,
            alice_cost: r.alice_cost as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares of `ys` on `xs`. A perfectly flat response gets
/// `r2 = 1`.
pub fn ols(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::DegenerateFit(format!("{} points", xs.len())));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::DegenerateFit("all x values equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if syy <= f64::EPSILON * n * my.abs().max(1.0) {
        1.0
    } else {
        (1.0 - sse / syy).clamp(0.0, 1.0)
    };
    Ok(LineFit { slope, intercept, r2 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompetitivenessFit {
    pub points: usize,
    pub node: LineFit,
    pub alice: LineFit,
}

impl CompetitivenessFit {
    pub fn slope_node(&self) -> f64 {
        self.node.slope
    }
    pub fn slope_alice(&self) -> f64 {
        self.alice.slope
    }
}

/// Log-log least squares of max node cost and Alice's cost against `T`.
pub fn competitiveness_fit(points: &[FitPoint]) -> Result<CompetitivenessFit> {
    if points.len() < 4 {
        return Err(Error::DegenerateFit(format!("need at least 4 points, got {}", points.len())));
    }
    if let Some(p) = points
        .iter()
        .find(|p| !(p.t > 0.0 && p.max_node_cost > 0.0 && p.alice_cost > 0.0))
    {
        return Err(Error::DegenerateFit(format!("non-positive value in {p:?}")));
    }
    if points.iter().all(|p| p.t == points[0].t) {
        return Err(Error::DegenerateFit("all T equal".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.t.ln()).collect();
    let node: Vec<f64> = points.iter().map(|p| p.max_node_cost.ln()).collect();
    let alice: Vec<f64> = points.iter().map(|p| p.alice_cost.ln()).collect();
    Ok(CompetitivenessFit {
        points: points.len(),
        node: ols(&xs, &node)?,
        alice: ols(&xs, &alice)?,
    })
}

/// Reference bands for Alice's slope: `1/(k+1)` and `1/(k+1) + lg lg n / lg n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AliceBands {
    pub base: f64,
    pub with_polylog: f64,
}

pub fn alice_bands(n: u64, k: u32) -> AliceBands {
    let lg = (n as f64).log2();
    let base = 1.0 / (k as f64 + 1.0);
    AliceBands {
        base,
        with_polylog: base + lg.log2() / lg,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub grid: Vec<BTreeMap<String, String>>,
    pub cells: Vec<CellSummary>,
    pub fit: Option<CompetitivenessFit>,
    pub fit_error: Option<String>,
    pub alice_bands: Option<AliceBands>,
}

/// Aggregates every cell and, when the points allow it, fits cost against
/// `T` over all trials.
pub fn summarize(results: &[CellResults]) -> ExperimentSummary {
    let points: Vec<FitPoint> = results.iter().flat_map(|c| c.results.iter().map(FitPoint::from)).collect();
    let (fit, fit_error) = match competitiveness_fit(&points) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let alice_bands = results.first().map(|c| alice_bands(c.cell.cfg.n, c.cell.cfg.k));
    ExperimentSummary {
        grid: results.iter().map(|c| c.cell.coords.clone()).collect(),
        cells: results.iter().map(CellSummary::of).collect(),
        fit,
        fit_error,
        alice_bands,
    }
}

/// One `trials.csv` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub seed: u64,
    pub n: u64,
    pub f: f64,
    pub k: u32,
    pub epsilon_prime: f64,
    pub strategy: String,
    pub t: u64,
    pub alice_cost: u64,
    pub max_node_cost: u64,
    pub mean_node_cost: f64,
    pub informed_frac: f64,
    pub termination_slot: Option<u64>,
    pub termination_round: Option<u32>,
    pub blocked_phase_count: u64,
    pub violations: u64,
}

impl From<&TrialResult> for CsvRow {
    fn from(r: &TrialResult) -> Self {
        CsvRow {
            seed: r.seed,
            n: r.n,
            f: r.f,
            k: r.k,
            epsilon_prime: r.epsilon_prime,
            strategy: r.strategy.clone(),
            t: r.adversary_cost,
            alice_cost: r.alice_cost,
            max_node_cost: r.max_node_cost,
            mean_node_cost: r.mean_node_cost,
            informed_frac: r.informed_frac(),
            termination_slot: r.termination_slot,
            termination_round: r.termination_round,
            blocked_phase_count: r.blocked_phase_count(),
            violations: r.budget_violations,
        }
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the header and one row per entry. Floats use the shortest
/// round-tripping form with a mandatory fractional part (`1.0`).
pub fn emit_csv<W: Write>(rows: &[CsvRow], dest: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(dest);
    w.write_record(CSV_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.seed.to_string(),
            r.n.to_string(),
            format!("{:?}", r.f),
            r.k.to_string(),
            format!("{:?}", r.epsilon_prime),
            r.strategy.clone(),
            r.t.to_string(),
            r.alice_cost.to_string(),
            r.max_node_cost.to_string(),
            format!("{:?}", r.mean_node_cost),
            format!("{:?}", r.informed_frac),
            opt(r.termination_slot),
            opt(r.termination_round),
            r.blocked_phase_count.to_string(),
            r.violations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads back what [`emit_csv`] wrote.
pub fn parse_csv<R: Read>(src: R) -> Result<Vec<CsvRow>> {
    let mut rd = csv::Reader::from_reader(src);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != CSV_COLUMNS {
        return Err(Error::Script(format!("unexpected CSV header {}", header.join(","))));
    }
    let bad = |col: &str, v: &str| Error::Script(format!("column {col}: cannot parse `{v}`"));
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let int = |i: usize| rec[i].parse::<u64>().map_err(|_| bad(CSV_COLUMNS[i], &rec[i]));
        let real = |i: usize| parse_real(CSV_COLUMNS[i], &rec[i]).map_err(Error::from);
        let maybe = |i: usize| -> Result<Option<u64>> {
            if rec[i].is_empty() {
                Ok(None)
            } else {
                int(i).map(Some)
            }
        };
        rows.push(CsvRow {
            seed: int(0)?,
            n: int(1)?,
            f: real(2)?,
            k: int(3)? as u32,
            epsilon_prime: real(4)?,
            strategy: rec[5].to_string(),
            t: int(6)?,
            alice_cost: int(7)?,
            max_node_cost: int(8)?,
            mean_node_cost: real(9)?,
            informed_frac: real(10)?,
            termination_slot: maybe(11)?,
            termination_round: maybe(12)?.map(|v| v as u32),
            blocked_phase_count: int(13)?,
            violations: int(14)?,
        });
    }
    Ok(rows)
}

/// Writes per-slot trace rows of every trial, stopping at
/// [`TRACE_ROW_CAP`] rows in total. Returns the number written.
pub fn emit_trace<W: Write>(trials: &[(u64, &[TraceRow])], dest: W) -> Result<usize> {
    let mut w = csv::Writer::from_writer(dest);
    w.write_record([
        "seed",
        "round",
        "phase",
        "global_slot",
        "transmissions",
        "carries_m",
        "decoys",
        "jammed",
        "newly_informed",
    ])?;
    let mut written = 0;
    'outer: for (seed, rows) in trials {
        for r in rows.iter() {
            if written >= TRACE_ROW_CAP {
                break 'outer;
            }
            w.write_record([
                seed.to_string(),
                r.round.to_string(),
                r.phase.clone(),
                r.global_slot.to_string(),
                r.transmissions.to_string(),
                r.carries_m.to_string(),
                r.decoys.to_string(),
                r.jammed.to_string(),
                r.newly_informed.to_string(),
            ])?;
            written += 1;
        }
    }
    w.flush()?;
    Ok(written)
}

/// First round in which the adversary blocked nothing. Rounds after the
/// run ended count only if the remaining pool could not pay `beta` times
/// that round's phase length.
pub fn first_unblockable_round(result: &TrialResult, cfg: &SimConfig) -> Option<u32> {
    if let Some(r) = result.first_unblocked_round() {
        return Some(r);
    }
    let last = result.phases.last()?.round;
    let remaining = result.pooled_budget.saturating_sub(result.adversary_cost);
    let next = last + 1;
    let len = phase_slots(cfg.k, next)?;
    (remaining as f64 <= cfg.beta * len as f64).then_some(next)
}
