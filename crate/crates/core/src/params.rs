//! Configuration, derived budgets and per-round schedules.
//!
//! Every quantity here is a pure function of [`SimConfig`] and the round
//! index. Logarithms are natural (`ln`) unless named `lg` (base 2).

use std::collections::BTreeMap;
use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, Error, Result};

/// Flat `key -> value` mapping as read from a config file or `--set` flags.
pub type RawConfig = BTreeMap<String, String>;

/// Keys consumed by [`validate_config`].
pub const PROTOCOL_KEYS: &[&str] = &[
    "n",
    "f",
    "k",
    "epsilon_prime",
    "c",
    "C",
    "beta",
    "i_start",
    "max_rounds",
    "min_termination_round",
    "max_total_slots",
    "adversary_mode",
    "decoys_enabled",
    "approx_n_mode",
    "budget_policy_correct",
    "seed",
];

/// Keys consumed by the adversary and harness layers. They live in the same
/// document so a config file can describe a whole experiment.
pub const HARNESS_KEYS: &[&str] = &[
    "trials",
    "adversary.strategy",
    "adversary.gamma",
    "adversary.spare_fraction",
    "adversary.p_commit",
    "adversary.phases",
    "adversary.victims",
    "adversary.stop_round",
    "adversary.script",
    "assert.informed_frac_min",
];

const REQUIRED_KEYS: &[&str] = &["n", "f", "k", "epsilon_prime", "c", "C", "beta", "seed"];

pub fn is_known_key(key: &str) -> bool {
    if let Some(inner) = key.strip_prefix("sweep.") {
        return PROTOCOL_KEYS.contains(&inner) || HARNESS_KEYS.contains(&inner);
    }
    PROTOCOL_KEYS.contains(&key) || HARNESS_KEYS.contains(&key)
}

/// Baseline parameter set used by the CLI before applying a config file and
/// overrides.
pub fn default_raw() -> RawConfig {
    [
        ("n", "1024"),
        ("f", "1"),
        ("k", "2"),
        ("epsilon_prime", "1/1024"),
        ("c", "4"),
        ("C", "5"),
        ("beta", "0.5"),
        ("seed", "1"),
        ("i_start", "1"),
        ("max_rounds", "64"),
        ("min_termination_round", "auto"),
        ("max_total_slots", "1099511627776"),
        ("adversary_mode", "adaptive"),
        ("decoys_enabled", "false"),
        ("approx_n_mode", "off"),
        ("budget_policy_correct", "record-only"),
        ("trials", "1"),
        ("adversary.strategy", "null"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

/// Parses either `key = value` lines (`#` starts a comment) or a single
/// JSON object with scalar values.
pub fn parse_config_text(text: &str) -> Result<RawConfig, ConfigError> {
    let trimmed = text.trim_start_matches('\u{feff}').trim();
    let mut raw = RawConfig::new();
    if trimmed.starts_with('{') {
        let value: serde_json::Value = serde_json::from_str(trimmed)
            .map_err(|e| ConfigError::new("<document>", format!("invalid JSON object: {e}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| ConfigError::new("<document>", "expected a JSON object"))?;
        for (key, v) in obj {
            let s = match v {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Number(x) => x.to_string(),
                serde_json::Value::Bool(b) => b.to_string(),
                _ => return Err(ConfigError::new(key.clone(), "value must be a scalar")),
            };
            raw.insert(key.clone(), s);
        }
    } else {
        for (lineno, line) in trimmed.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ConfigError::new(format!("line {}", lineno + 1), "expected `key = value`")
            })?;
            raw.insert(key.trim().to_string(), value.trim().to_string());
        }
    }
    for key in raw.keys() {
        if !is_known_key(key) {
            return Err(ConfigError::new(key.clone(), "unknown key"));
        }
    }
    Ok(raw)
}

/// Parses `key=value` override syntax used on the command line.
pub fn parse_override(spec: &str) -> Result<(String, String), ConfigError> {
    let (k, v) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::new(spec, "override must be key=value"))?;
    let key = k.trim().to_string();
    if !is_known_key(&key) {
        return Err(ConfigError::new(key, "unknown key"));
    }
    Ok((key, v.trim().to_string()))
}

/// Parses a real number, also accepting a `num/den` rational.
pub fn parse_real(field: &str, value: &str) -> Result<f64, ConfigError> {
    let v = value.trim();
    let parsed = match v.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| bad_number(field, value))?;
            let b: f64 = b.trim().parse().map_err(|_| bad_number(field, value))?;
            if b == 0.0 {
                return Err(ConfigError::new(field, "division by zero"));
            }
            a / b
        }
        None => v.parse().map_err(|_| bad_number(field, value))?,
    };
    if !parsed.is_finite() {
        return Err(ConfigError::new(field, "must be finite"));
    }
    Ok(parsed)
}

pub fn parse_uint(field: &str, value: &str) -> Result<u64, ConfigError> {
    value
        .trim()
        .parse()
        .map_err(|_| ConfigError::new(field, format!("expected a non-negative integer, got `{value}`")))
}

pub fn parse_bool(field: &str, value: &str) -> Result<bool, ConfigError> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(ConfigError::new(field, format!("expected a boolean, got `{value}`"))),
    }
}

fn bad_number(field: &str, value: &str) -> ConfigError {
    ConfigError::new(field, format!("expected a number, got `{value}`"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdversaryMode {
    /// Sees history through the previous slot only.
    Adaptive,
    /// Additionally sees the busy flag of the current slot.
    Reactive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetPolicy {
    RecordOnly,
    Enforce,
}

/// Validated protocol and trial parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: u64,
    pub f: f64,
    pub k: u32,
    pub epsilon_prime: f64,
    pub c: f64,
    #[serde(rename = "C")]
    pub big_c: f64,
    pub beta: f64,
    pub i_start: u32,
    pub max_rounds: u32,
    /// Request-phase termination is suppressed before this round.
    pub min_termination_round: u32,
    pub max_total_slots: u64,
    pub adversary_mode: AdversaryMode,
    pub decoys_enabled: bool,
    /// Overestimate exponent `c'` for the unknown-`n` variant.
    pub approx_n_mode: Option<f64>,
    pub budget_policy_correct: BudgetPolicy,
    pub seed: u64,
}

/// Round index before which request-phase termination is not allowed:
/// `ceil(3 lg ln n)`, at least 1.
pub fn default_min_termination_round(n: u64) -> u32 {
    let v = 3.0 * (n as f64).ln().log2();
    if v.is_finite() && v > 1.0 {
        v.ceil() as u32
    } else {
        1
    }
}

/// Checks every field of `raw` and returns the first violation found.
pub fn validate_config(raw: &RawConfig) -> Result<SimConfig, ConfigError> {
    for key in raw.keys() {
        if !is_known_key(key) {
            return Err(ConfigError::new(key.clone(), "unknown key"));
        }
    }
    for key in REQUIRED_KEYS {
        if !raw.contains_key(*key) {
            return Err(ConfigError::new(*key, "missing required field"));
        }
    }
    let get = |key: &str| raw.get(key).map(String::as_str);

    let n = parse_uint("n", get("n").unwrap())?;
    if n < 2 {
        return Err(ConfigError::new("n", "n must be ≥ 2"));
    }
    let f = parse_real("f", get("f").unwrap())?;
    if f < 0.0 {
        return Err(ConfigError::new("f", "f must be ≥ 0"));
    }
    let k = parse_uint("k", get("k").unwrap())?;
    if k < 2 {
        return Err(ConfigError::new("k", "k must be ≥ 2"));
    }
    if k > 64 {
        return Err(ConfigError::new("k", "k must be ≤ 64"));
    }
    let epsilon_prime = parse_real("epsilon_prime", get("epsilon_prime").unwrap())?;
    if !(epsilon_prime > 0.0 && epsilon_prime < 1.0) {
        return Err(ConfigError::new("epsilon_prime", "epsilon_prime must be in (0, 1)"));
    }
    let c = parse_real("c", get("c").unwrap())?;
    if c <= 0.0 {
        return Err(ConfigError::new("c", "c must be > 0"));
    }
    let big_c = parse_real("C", get("C").unwrap())?;
    if big_c <= 0.0 {
        return Err(ConfigError::new("C", "C must be > 0"));
    }
    let beta = parse_real("beta", get("beta").unwrap())?;
    if !(beta > 0.0 && beta < 1.0) {
        return Err(ConfigError::new("beta", "beta must be in (0, 1)"));
    }
    let seed = parse_uint("seed", get("seed").unwrap())?;

    let i_start = match get("i_start") {
        Some(v) => parse_uint("i_start", v)?,
        None => 1,
    };
    if !(1..=512).contains(&i_start) {
        return Err(ConfigError::new("i_start", "i_start must be in [1, 512]"));
    }
    let max_rounds = match get("max_rounds") {
        Some(v) => parse_uint("max_rounds", v)?,
        None => 64,
    };
    if max_rounds > 512 {
        return Err(ConfigError::new("max_rounds", "max_rounds must be ≤ 512"));
    }
    let min_termination_round = match get("min_termination_round") {
        None | Some("auto") => default_min_termination_round(n),
        Some(v) => parse_uint("min_termination_round", v)? as u32,
    };
    let max_total_slots = match get("max_total_slots") {
        Some(v) => parse_uint("max_total_slots", v)?,
        None => 1 << 40,
    };
    if max_total_slots == 0 {
        return Err(ConfigError::new("max_total_slots", "max_total_slots must be ≥ 1"));
    }
    let adversary_mode = match get("adversary_mode").unwrap_or("adaptive") {
        "adaptive" => AdversaryMode::Adaptive,
        "reactive" => AdversaryMode::Reactive,
        other => {
            return Err(ConfigError::new(
                "adversary_mode",
                format!("expected adaptive|reactive, got `{other}`"),
            ))
        }
    };
    let decoys_enabled = match get("decoys_enabled") {
        Some(v) => parse_bool("decoys_enabled", v)?,
        None => false,
    };
    let approx_n_mode = match get("approx_n_mode") {
        None | Some("off") | Some("disabled") => None,
        Some(v) => {
            let exp = parse_real("approx_n_mode", v)?;
            if exp < 1.0 {
                return Err(ConfigError::new("approx_n_mode", "overestimate exponent must be ≥ 1"));
            }
            Some(exp)
        }
    };
    let budget_policy_correct = match get("budget_policy_correct").unwrap_or("record-only") {
        "record-only" => BudgetPolicy::RecordOnly,
        "enforce" => BudgetPolicy::Enforce,
        other => {
            return Err(ConfigError::new(
                "budget_policy_correct",
                format!("expected record-only|enforce, got `{other}`"),
            ))
        }
    };

    Ok(SimConfig {
        n,
        f,
        k: k as u32,
        epsilon_prime,
        c,
        big_c,
        beta,
        i_start: i_start as u32,
        max_rounds: max_rounds as u32,
        min_termination_round,
        max_total_slots,
        adversary_mode,
        decoys_enabled,
        approx_n_mode,
        budget_policy_correct,
        seed,
    })
}

impl SimConfig {
    /// Number of Byzantine nodes, `floor(f n)`.
    pub fn byzantine(&self) -> u64 {
        // the nudge keeps exact products like 0.1 * 10 from landing just below an integer
        (self.f * self.n as f64 + 1e-9).floor() as u64
    }

    pub fn ln_n(&self) -> f64 {
        (self.n as f64).ln()
    }

    /// Alice-side exponent `a = 1/k`.
    pub fn a(&self) -> f64 {
        1.0 / self.k as f64
    }

    /// Node-side exponent, fixed at 1.
    pub fn b(&self) -> f64 {
        1.0
    }

    /// Real-valued request-phase threshold `5 c ln n`.
    pub fn termination_threshold(&self) -> f64 {
        5.0 * self.c * self.ln_n()
    }

    /// Round at which a full pooled budget can no longer block a phase:
    /// `lg n + (k/(k+1)) lg((C/beta)(f+1))`.
    pub fn predicted_unblockable_round(&self) -> f64 {
        let k = self.k as f64;
        (self.n as f64).log2() + k / (k + 1.0) * ((self.big_c / self.beta) * (self.f + 1.0)).log2()
    }
}

/// `n^(1/k)`, snapped to the exact integer root when one exists.
fn kth_root(n: u64, k: u32) -> f64 {
    let r = (n as f64).powf(1.0 / k as f64);
    let rounded = r.round();
    if rounded >= 1.0 && (rounded as u128).checked_pow(k) == Some(n as u128) {
        rounded
    } else {
        r
    }
}

/// Energy budgets, in unit actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budgets {
    pub node_budget: u64,
    pub alice_budget: u64,
    pub carol_budget: u64,
}

impl Budgets {
    /// Combined adversary energy: every Byzantine node plus Carol.
    pub fn pooled_adversary(&self, byzantine: u64) -> u64 {
        byzantine * self.node_budget + self.carol_budget
    }
}

/// `C n^(1/k)` per node; `C n^(1/k) ln n` for Alice and Carol when `k = 2`,
/// `C n^(1/k) ln^k n` for `k >= 3`. Rounded down.
pub fn derive_budgets(cfg: &SimConfig) -> Budgets {
    let base = cfg.big_c * kth_root(cfg.n, cfg.k);
    let ln_n = cfg.ln_n();
    let polylog = if cfg.k == 2 { ln_n } else { ln_n.powi(cfg.k as i32) };
    let node_budget = (base + 1e-9).floor() as u64;
    let alice_budget = (base * polylog + 1e-9).floor() as u64;
    Budgets {
        node_budget,
        alice_budget,
        carol_budget: alice_budget,
    }
}

/// Slot count and probabilities for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSchedule {
    pub round: u32,
    pub inform_slots: u64,
    pub propagation_steps: u32,
    /// Length of each propagation step.
    pub propagation_slots: u64,
    pub request_slots: u64,
    pub alice_send_p: f64,
    pub node_inform_listen_p: f64,
    pub node_prop_listen_p: f64,
    pub informed_send_p: f64,
    pub nack_send_p: f64,
    pub node_request_listen_p: f64,
    pub alice_request_listen_p: f64,
    pub termination_threshold: f64,
    pub decoy_send_p: f64,
    /// Names of probabilities that exceeded 1 before clamping.
    pub clamped: Vec<String>,
}

impl RoundSchedule {
    /// Slots in the whole round, counting every propagation step once.
    pub fn round_slots(&self) -> u64 {
        self.inform_slots + self.propagation_slots * self.propagation_steps as u64 + self.request_slots
    }
}

/// `ceil(2^((1 + 1/k) i))`, exact whenever `k | i`. Returns `None` past `u64`.
pub fn phase_slots(k: u32, i: u32) -> Option<u64> {
    let num = (k as u64 + 1) * i as u64;
    if num.is_multiple_of(k as u64) {
        let e = num / k as u64;
        if e >= 64 {
            None
        } else {
            Some(1u64 << e)
        }
    } else {
        let v = 2f64.powf(num as f64 / k as f64).ceil();
        if v.is_finite() && v < u64::MAX as f64 {
            Some(v as u64)
        } else {
            None
        }
    }
}

fn clamp_p(name: &str, p: f64, clamped: &mut Vec<String>) -> f64 {
    if p.is_nan() {
        clamped.push(name.to_string());
        return 1.0;
    }
    if p > 1.0 {
        clamped.push(name.to_string());
        1.0
    } else if p < 0.0 {
        0.0
    } else {
        p
    }
}

/// Phase lengths and send/listen probabilities for round `i`.
///
/// `k = 2` uses the two-step-exponent formulas with propagation listening at
/// `4e(c+1)/2^i`; `k >= 3` uses `2c ln^k n / 2^i` for Alice and `2ec/(eps' 2^i)`
/// for propagation listening.
pub fn round_schedule(cfg: &SimConfig, i: u32) -> Result<RoundSchedule> {
    assert!(i >= 1, "round index starts at 1");
    let slots = phase_slots(cfg.k, i);
    let slots = match slots {
        Some(s) if s <= cfg.max_total_slots => s,
        _ => {
            return Err(Error::ScheduleOverflow {
                round: i,
                slots: 2f64.powf((1.0 + 1.0 / cfg.k as f64) * i as f64),
                limit: cfg.max_total_slots,
            })
        }
    };
    let n = cfg.n as f64;
    let ln_n = cfg.ln_n();
    let eps = cfg.epsilon_prime;
    let c = cfg.c;
    let two_i = 2f64.powi(i as i32);
    let mut clamped = Vec::new();

    let (alice_raw, prop_listen_raw) = if cfg.k == 2 {
        (2.0 * ln_n / two_i, 4.0 * E * (c + 1.0) / two_i)
    } else {
        (
            2.0 * c * ln_n.powi(cfg.k as i32) / two_i,
            2.0 * E * c / (eps * two_i),
        )
    };
    let inform_listen_raw = if cfg.decoys_enabled {
        // delta' = 1/2; exp(3/(2 eps')) may overflow to +inf, which clamps to 1
        let delta = 0.5;
        16.0 * (3.0 / (2.0 * eps)).exp() / (eps * (1.0 - delta) * two_i)
    } else {
        2.0 / (eps * two_i)
    };
    let decoy_raw = if cfg.decoys_enabled {
        3.0 / (4.0 * eps * n)
    } else {
        0.0
    };

    Ok(RoundSchedule {
        round: i,
        inform_slots: slots,
        propagation_steps: cfg.k - 1,
        propagation_slots: slots,
        request_slots: slots,
        alice_send_p: clamp_p("alice_send_p", alice_raw, &mut clamped),
        node_inform_listen_p: clamp_p("node_inform_listen_p", inform_listen_raw, &mut clamped),
        node_prop_listen_p: clamp_p("node_prop_listen_p", prop_listen_raw, &mut clamped),
        informed_send_p: clamp_p("informed_send_p", 1.0 / n, &mut clamped),
        nack_send_p: clamp_p("nack_send_p", 1.0 / n, &mut clamped),
        node_request_listen_p: clamp_p(
            "node_request_listen_p",
            (c + 1.0) / ((1.0 - (-64.0 * eps).exp()) * two_i),
            &mut clamped,
        ),
        alice_request_listen_p: clamp_p(
            "alice_request_listen_p",
            c * ln_n / ((1.0 - (-4.0 * eps).exp()) * slots as f64),
            &mut clamped,
        ),
        termination_threshold: cfg.termination_threshold(),
        decoy_send_p: clamp_p("decoy_send_p", decoy_raw, &mut clamped),
        clamped,
    })
}

/// One pass of a propagation step. Without the unknown-`n` variant each
/// step is a single pass at `1/n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationPass {
    pub step: u32,
    /// Replication index `g` (1-based); 0 when the variant is off.
    pub replication: u32,
    pub slots: u64,
    pub informed_send_p: f64,
}

/// `ceil(c ln nu)` with `nu = n^c'`.
pub fn approx_replications(cfg: &SimConfig) -> Option<u32> {
    cfg.approx_n_mode
        .map(|exp| (cfg.c * exp * cfg.ln_n() - 1e-12).ceil().max(1.0) as u32)
}

/// Expanded propagation schedule for the unknown-`n` variant: each step is
/// repeated for `g = 1..=ceil(c ln nu)` with informed nodes sending at
/// `1/(2^i 2^g)`.
pub fn approx_n_schedule(cfg: &SimConfig, i: u32) -> Result<Vec<PropagationPass>> {
    let reps = approx_replications(cfg).ok_or(Error::ApproxModeOff)?;
    let sched = round_schedule(cfg, i)?;
    let two_i = 2f64.powi(i as i32);
    let mut passes = Vec::with_capacity((sched.propagation_steps * reps) as usize);
    for step in 1..=sched.propagation_steps {
        for g in 1..=reps {
            passes.push(PropagationPass {
                step,
                replication: g,
                slots: sched.propagation_slots,
                informed_send_p: (1.0 / (two_i * 2f64.powi(g as i32))).min(1.0),
            });
        }
    }
    Ok(passes)
}

/// Propagation passes for round `i` in whichever mode `cfg` selects.
pub fn propagation_passes(cfg: &SimConfig, sched: &RoundSchedule) -> Result<Vec<PropagationPass>> {
    if cfg.approx_n_mode.is_some() {
        return approx_n_schedule(cfg, sched.round);
    }
    Ok((1..=sched.propagation_steps)
        .map(|step| PropagationPass {
            step,
            replication: 0,
            slots: sched.propagation_slots,
            informed_send_p: sched.informed_send_p,
        })
        .collect())
}

/// Cost inflation of a round under the unknown-`n` variant, in slots.
pub fn approx_slot_inflation(cfg: &SimConfig) -> f64 {
    match approx_replications(cfg) {
        None => 1.0,
        Some(reps) => {
            let k = cfg.k as f64;
            (2.0 + (k - 1.0) * reps as f64) / (k + 1.0)
        }
    }
}
