//! Python bindings: configuration, single trials, experiments, the
//! competitiveness fit and the channel oracle.

use std::collections::BTreeSet;

use jamcast_core::adversary::Strategy;
use jamcast_core::channel::{self, JamAction, ParticipantId, Payload, Perception, Targets, Transmission};
use jamcast_core::harness::{self, CsvRow, FitPoint};
use jamcast_core::params::{self, RawConfig, SimConfig};
use jamcast_core::sim::{self, TrialOptions};
use jamcast_core::{ConfigError, Error};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn config_err(e: ConfigError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn core_err(e: Error) -> PyErr {
    match e {
        Error::Config(c) => config_err(c),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn raw_from(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<RawConfig> {
    let mut raw = params::default_raw();
    if let Some(kw) = kwargs {
        for (k, v) in kw.iter() {
            let key: String = k.extract()?;
            let value = match v.extract::<bool>() {
                Ok(b) => b.to_string(),
                Err(_) => v.str()?.to_string(),
            };
            raw.insert(key, value);
        }
    }
    Ok(raw)
}

/// Validated parameters plus the adversary keys. Build with keyword
/// arguments named like the config keys; dotted keys go through `**{...}`.
#[pyclass(name = "Config", module = "jamcast", frozen)]
struct PyConfig {
    raw: RawConfig,
    cfg: SimConfig,
    strategy: Strategy,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let raw = raw_from(kwargs)?;
        let cfg = params::validate_config(&raw).map_err(config_err)?;
        let strategy = Strategy::from_raw(&raw).map_err(config_err)?;
        strategy.check_mode(cfg.adversary_mode).map_err(config_err)?;
        Ok(PyConfig { raw, cfg, strategy })
    }

    #[getter]
    fn n(&self) -> u64 {
        self.cfg.n
    }
    #[getter]
    fn k(&self) -> u32 {
        self.cfg.k
    }
    #[getter]
    fn f(&self) -> f64 {
        self.cfg.f
    }
    #[getter]
    fn epsilon_prime(&self) -> f64 {
        self.cfg.epsilon_prime
    }
    #[getter]
    fn seed(&self) -> u64 {
        self.cfg.seed
    }
    #[getter]
    fn strategy(&self) -> &'static str {
        self.strategy.name()
    }

    /// Per-participant and pooled budgets.
    fn budgets<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let b = params::derive_budgets(&self.cfg);
        let d = PyDict::new(py);
        d.set_item("node", b.node_budget)?;
        d.set_item("alice", b.alice_budget)?;
        d.set_item("carol", b.carol_budget)?;
        d.set_item("pooled_adversary", b.pooled_adversary(self.cfg.byzantine()))?;
        Ok(d.into_any())
    }

    /// Phase lengths and probabilities of round `i`.
    fn schedule<'py>(&self, py: Python<'py>, i: u32) -> PyResult<Bound<'py, PyAny>> {
        if i == 0 {
            return Err(PyValueError::new_err("round index starts at 1"));
        }
        let s = params::round_schedule(&self.cfg, i).map_err(core_err)?;
        json_to_py(py, &s)
    }

    /// The full key/value mapping, including defaults.
    fn to_dict(&self) -> std::collections::BTreeMap<String, String> {
        self.raw.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(n={}, k={}, f={:?}, epsilon_prime={:?}, strategy={:?}, seed={})",
            self.cfg.n,
            self.cfg.k,
            self.cfg.f,
            self.cfg.epsilon_prime,
            self.strategy.name(),
            self.cfg.seed
        )
    }
}

#[pyclass(name = "TrialResult", module = "jamcast", frozen)]
struct PyTrialResult {
    inner: sim::TrialResult,
}

#[pymethods]
impl PyTrialResult {
    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }
    #[getter]
    fn n(&self) -> u64 {
        self.inner.n
    }
    #[getter]
    fn informed_count(&self) -> u64 {
        self.inner.informed_count
    }
    #[getter]
    fn informed_frac(&self) -> f64 {
        self.inner.informed_frac()
    }
    #[getter]
    fn termination_slot(&self) -> Option<u64> {
        self.inner.termination_slot
    }
    #[getter]
    fn termination_round(&self) -> Option<u32> {
        self.inner.termination_round
    }
    #[getter]
    fn alice_cost(&self) -> u64 {
        self.inner.alice_cost
    }
    #[getter]
    fn max_node_cost(&self) -> u64 {
        self.inner.max_node_cost
    }
    #[getter]
    fn mean_node_cost(&self) -> f64 {
        self.inner.mean_node_cost
    }
    /// Total adversary spend `T`.
    #[getter]
    fn adversary_cost(&self) -> u64 {
        self.inner.adversary_cost
    }
    #[getter]
    fn pooled_budget(&self) -> u64 {
        self.inner.pooled_budget
    }
    #[getter]
    fn blocked_phase_count(&self) -> u64 {
        self.inner.blocked_phase_count()
    }
    #[getter]
    fn conservation_ok(&self) -> bool {
        self.inner.conservation_ok
    }

    /// Everything, including per-phase and relay-set logs.
    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "TrialResult(seed={}, informed={}/{}, T={}, max_node_cost={}, termination_round={})",
            self.inner.seed,
            self.inner.informed_count,
            self.inner.n,
            self.inner.adversary_cost,
            self.inner.max_node_cost,
            self.inner.termination_round.map_or("None".to_string(), |r| r.to_string())
        )
    }
}

/// Runs a single trial with the config's own seed.
#[pyfunction]
fn run_trial(py: Python<'_>, config: &PyConfig) -> PyResult<PyTrialResult> {
    let (cfg, strategy) = (config.cfg.clone(), config.strategy.clone());
    let inner = py
        .detach(move || sim::run_trial(&cfg, &strategy, &TrialOptions::default()))
        .map_err(core_err)?;
    Ok(PyTrialResult { inner })
}

/// Expands `sweep.*` keys, runs every trial and returns
/// `(results, summary)` where `summary` is a dict.
#[pyfunction]
#[pyo3(signature = (config, parallelism = 1))]
fn run_experiment<'py>(
    py: Python<'py>,
    config: &Bound<'py, PyDict>,
    parallelism: usize,
) -> PyResult<(Vec<PyTrialResult>, Bound<'py, PyAny>)> {
    let raw = raw_from(Some(config))?;
    let out = py
        .detach(move || {
            let cells = harness::expand_grid(&raw)?;
            harness::run_experiment(&cells, parallelism, &TrialOptions::default())
        })
        .map_err(core_err)?;
    let summary = json_to_py(py, &harness::summarize(&out))?;
    let results = out
        .into_iter()
        .flat_map(|c| c.results)
        .map(|inner| PyTrialResult { inner })
        .collect();
    Ok((results, summary))
}

/// `trials.csv` text for the given results.
#[pyfunction]
fn emit_csv(results: Vec<PyRef<'_, PyTrialResult>>) -> PyResult<String> {
    let rows: Vec<CsvRow> = results.iter().map(|r| CsvRow::from(&r.inner)).collect();
    let mut buf = Vec::new();
    harness::emit_csv(&rows, &mut buf).map_err(core_err)?;
    String::from_utf8(buf).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Log-log fit of `(T, max_node_cost, alice_cost)` triples.
#[pyfunction]
fn competitiveness_fit<'py>(py: Python<'py>, points: Vec<(f64, f64, f64)>) -> PyResult<Bound<'py, PyAny>> {
    let pts: Vec<FitPoint> = points
        .into_iter()
        .map(|(t, node, alice)| FitPoint {
            t,
            max_node_cost: node,
            alice_cost: alice,
        })
        .collect();
    let fit = harness::competitiveness_fit(&pts).map_err(|e| PyValueError::new_err(e.to_string()))?;
    json_to_py(py, &fit)
}

/// `(cases, mismatches)` of the exhaustive slot-resolution check.
#[pyfunction]
#[pyo3(signature = (max_participants = 3, inject_fault = false))]
fn oracle_check(max_participants: u32, inject_fault: bool) -> PyResult<(usize, usize)> {
    if !(1..=3).contains(&max_participants) {
        return Err(PyValueError::new_err("max_participants must be 1, 2 or 3"));
    }
    let resolver: channel::oracle::Resolver = if inject_fault {
        channel::oracle::faulty_resolve_slot
    } else {
        channel::resolve_slot
    };
    let (mut cases, mut bad) = (0, 0);
    for p in 1..=max_participants {
        let r = channel::oracle::check(resolver, p);
        cases += r.cases;
        bad += r.mismatches.len();
    }
    Ok((cases, bad))
}

fn payload(name: &str) -> PyResult<Payload> {
    match name {
        "m" => Ok(Payload::MessageM),
        "nack" => Ok(Payload::Nack),
        "decoy" => Ok(Payload::Decoy),
        "garbage" => Ok(Payload::Garbage),
        other => Err(PyValueError::new_err(format!("unknown payload `{other}`"))),
    }
}

fn perception_name(p: Perception) -> String {
    match p {
        Perception::Silence => "silence".into(),
        Perception::Noise => "noise".into(),
        Perception::Delivered {
            payload,
            authenticated,
        } => {
            let name = match payload {
                Payload::MessageM => "m",
                Payload::Nack => "nack",
                Payload::Decoy => "decoy",
                Payload::Garbage => "garbage",
            };
            if authenticated {
                format!("{name}+auth")
            } else {
                name.into()
            }
        }
    }
}

/// Resolves one slot. `transmissions` are `(sender, payload)` with payload
/// one of `m`, `nack`, `decoy`, `garbage`; `jams` are `(jammer, targets)`
/// with `targets=None` meaning everyone. Returns `{listener: perception}`.
#[pyfunction]
fn resolve_slot(
    transmissions: Vec<(u32, String)>,
    jams: Vec<(u32, Option<Vec<u32>>)>,
    listeners: Vec<u32>,
) -> PyResult<Vec<(u32, String)>> {
    let tx = transmissions
        .iter()
        .map(|(s, p)| Ok(Transmission::new(ParticipantId(*s), payload(p)?)))
        .collect::<PyResult<Vec<_>>>()?;
    let jams: Vec<JamAction> = jams
        .into_iter()
        .map(|(j, t)| JamAction {
            jammer: ParticipantId(j),
            targets: match t {
                None => Targets::All,
                Some(ids) => Targets::Only(ids.into_iter().map(ParticipantId).collect::<BTreeSet<_>>()),
            },
        })
        .collect();
    let listeners: Vec<ParticipantId> = listeners.into_iter().map(ParticipantId).collect();
    let out = channel::resolve_slot(0, &tx, &jams, &listeners).map_err(core_err)?;
    Ok(out
        .perception
        .into_iter()
        .map(|(id, p)| (id.0, perception_name(p)))
        .collect())
}

#[pymodule]
fn jamcast(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyTrialResult>()?;
    m.add_function(wrap_pyfunction!(run_trial, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(emit_csv, m)?)?;
    m.add_function(wrap_pyfunction!(competitiveness_fit, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_check, m)?)?;
    m.add_function(wrap_pyfunction!(resolve_slot, m)?)?;
    Ok(())
}
