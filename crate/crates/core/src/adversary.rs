//! Carol and her Byzantine nodes: strategies, the pooled energy account, and
//! blocked-phase classification.
//!
//! Range-based strategies (phase blocking, spoofing, scripts) decide a whole
//! phase at its first slot from history alone and pay for it up front.
//! The reactive jammer decides slot by slot from the carrier-sense flag.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{JamAction, ParticipantId, Payload, Targets, Transmission};
use crate::error::{ConfigError, Error, Result};
use crate::ledger::{Action, CostLedger};
use crate::params::{parse_real, parse_uint, AdversaryMode, BudgetPolicy, Budgets, RawConfig, SimConfig};
use crate::protocol::Phase;
use crate::rng::{domain, stream_rng, uniform};

/// Carol's own id. Byzantine nodes take ids `n+1 ..= n+t`.
pub const CAROL: ParticipantId = ParticipantId(u32::MAX);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSet {
    pub inform: bool,
    pub propagation: bool,
    pub request: bool,
}

impl PhaseSet {
    pub const ALL: PhaseSet = PhaseSet {
        inform: true,
        propagation: true,
        request: true,
    };

    pub fn contains(&self, phase: Phase) -> bool {
        match phase {
            Phase::Inform => self.inform,
            Phase::Propagation { .. } => self.propagation,
            Phase::Request => self.request,
        }
    }

    fn parse(value: &str) -> Result<Self, ConfigError> {
        let mut set = PhaseSet {
            inform: false,
            propagation: false,
            request: false,
        };
        for part in value.split([',', ';', '+']).map(str::trim).filter(|s| !s.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "all" => set = PhaseSet::ALL,
                "inform" => set.inform = true,
                "propagation" | "propagate" => set.propagation = true,
                "request" => set.request = true,
                other => return Err(ConfigError::new("adversary.phases", format!("unknown phase `{other}`"))),
            }
        }
        if !(set.inform || set.propagation || set.request) {
            return Err(ConfigError::new("adversary.phases", "no phases selected"));
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum VictimRule {
    AllNodes,
    /// Leaves `spare_fraction * n` correct nodes unjammed.
    SpareSubset(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScriptPhase {
    Any,
    Inform,
    Propagation(Option<u32>),
    Request,
}

impl ScriptPhase {
    fn matches(&self, phase: Phase) -> bool {
        match (self, phase) {
            (ScriptPhase::Any, _) => true,
            (ScriptPhase::Inform, Phase::Inform) => true,
            (ScriptPhase::Propagation(None), Phase::Propagation { .. }) => true,
            (ScriptPhase::Propagation(Some(h)), Phase::Propagation { step }) => *h == step,
            (ScriptPhase::Request, Phase::Request) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScriptAction {
    Jam,
    Nack,
}

/// One line of a replay table: act on slots `from..to` of the matching
/// phase in rounds `first_round..=last_round`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRow {
    pub first_round: u32,
    pub last_round: u32,
    pub phase: ScriptPhase,
    pub from: u64,
    /// Exclusive; `None` runs to the end of the phase.
    pub to: Option<u64>,
    pub action: ScriptAction,
    /// `None` targets everyone.
    pub targets: Option<BTreeSet<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Strategy {
    Null,
    PhaseBlocker {
        phases: PhaseSet,
        gamma: f64,
        victims: VictimRule,
        stop_round: Option<u32>,
    },
    RequestSpoofer {
        stop_round: Option<u32>,
    },
    ReactiveJammer {
        p_commit: f64,
        stop_round: Option<u32>,
    },
    Scripted(Vec<ScriptRow>),
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Null => "null",
            Strategy::PhaseBlocker { .. } => "phase_blocker",
            Strategy::RequestSpoofer { .. } => "request_spoofer",
            Strategy::ReactiveJammer { .. } => "reactive_jammer",
            Strategy::Scripted(_) => "scripted",
        }
    }

    fn stop_round(&self) -> Option<u32> {
        match self {
            Strategy::PhaseBlocker { stop_round, .. }
            | Strategy::RequestSpoofer { stop_round }
            | Strategy::ReactiveJammer { stop_round, .. } => *stop_round,
            _ => None,
        }
    }

    /// Builds a strategy from the `adversary.*` keys.
    pub fn from_raw(raw: &RawConfig) -> Result<Strategy, ConfigError> {
        let name = raw.get("adversary.strategy").map(String::as_str).unwrap_or("null");
        let norm: String = name
            .chars()
            .filter(|c| !matches!(c, '_' | '-' | ' '))
            .collect::<String>()
            .to_ascii_lowercase();
        let stop_round = match raw.get("adversary.stop_round") {
            Some(v) if v != "none" => Some(parse_uint("adversary.stop_round", v)? as u32),
            _ => None,
        };
        let unit = |key: &str, default: f64| -> Result<f64, ConfigError> {
            let v = match raw.get(key) {
                Some(v) => parse_real(key, v)?,
                None => default,
            };
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError::new(key, "must lie in [0, 1]"));
            }
            Ok(v)
        };
        match norm.as_str() {
            "null" | "none" => Ok(Strategy::Null),
            "phaseblocker" | "blocker" => {
                let phases = match raw.get("adversary.phases") {
                    Some(v) => PhaseSet::parse(v)?,
                    None => PhaseSet::ALL,
                };
                let gamma = unit("adversary.gamma", 0.51)?;
                // default leaves 32 eps' n victims
                let eps = match raw.get("epsilon_prime") {
                    Some(v) => parse_real("epsilon_prime", v)?,
                    None => 1.0 / 1024.0,
                };
                let default_spare = (1.0 - 32.0 * eps).clamp(0.0, 1.0);
                let victims = match raw.get("adversary.victims").map(|s| s.to_ascii_lowercase()) {
                    None if raw.contains_key("adversary.spare_fraction") => {
                        VictimRule::SpareSubset(unit("adversary.spare_fraction", default_spare)?)
                    }
                    None => VictimRule::AllNodes,
                    Some(v) if v == "all" || v == "all-nodes" || v == "all_nodes" => VictimRule::AllNodes,
                    Some(v) if v.starts_with("spare") => {
                        VictimRule::SpareSubset(unit("adversary.spare_fraction", default_spare)?)
                    }
                    Some(v) => {
                        return Err(ConfigError::new("adversary.victims", format!("unknown victim rule `{v}`")))
                    }
                };
                Ok(Strategy::PhaseBlocker {
                    phases,
                    gamma,
                    victims,
                    stop_round,
                })
            }
            "requestspoofer" | "spoofer" => Ok(Strategy::RequestSpoofer { stop_round }),
            "reactivejammer" | "reactive" => Ok(Strategy::ReactiveJammer {
                p_commit: unit("adversary.p_commit", 1.0)?,
                stop_round,
            }),
            "scripted" => {
                let path = raw
                    .get("adversary.script")
                    .ok_or_else(|| ConfigError::new("adversary.script", "scripted strategy needs a script path"))?;
                load_script(Path::new(path))
                    .map(Strategy::Scripted)
                    .map_err(|e| ConfigError::new("adversary.script", e.to_string()))
            }
            _ => Err(ConfigError::new("adversary.strategy", format!("unknown strategy `{name}`"))),
        }
    }

    /// Rejects strategy/mode combinations the observation model forbids.
    pub fn check_mode(&self, mode: AdversaryMode) -> Result<(), ConfigError> {
        if matches!(self, Strategy::ReactiveJammer { .. }) && mode != AdversaryMode::Reactive {
            return Err(ConfigError::new(
                "adversary.strategy",
                "reactive_jammer requires adversary_mode = reactive",
            ));
        }
        Ok(())
    }
}

/// Reads a replay table with header `round,phase,from,to,action,targets`.
pub fn load_script(path: &Path) -> Result<Vec<ScriptRow>> {
    let text = std::fs::read_to_string(path)?;
    parse_script(&text)
}

pub fn parse_script(text: &str) -> Result<Vec<ScriptRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_ascii_lowercase).collect();
    if header != ["round", "phase", "from", "to", "action", "targets"] {
        return Err(Error::Script(format!(
            "expected header round,phase,from,to,action,targets, got {}",
            header.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |what: &str| Error::Script(format!("line {line}: {what}"));
        let num = |s: &str| s.parse::<u64>().map_err(|_| bad(&format!("`{s}` is not an integer")));
        let (first_round, last_round) = match &rec[0] {
            "*" => (0, u32::MAX),
            r => match r.split_once('-') {
                Some((a, b)) => (num(a)? as u32, num(b)? as u32),
                None => (num(r)? as u32, num(r)? as u32),
            },
        };
        let phase = match rec[1].to_ascii_lowercase().as_str() {
            "*" => ScriptPhase::Any,
            "inform" => ScriptPhase::Inform,
            "request" => ScriptPhase::Request,
            "propagation" => ScriptPhase::Propagation(None),
            p if p.starts_with("propagation") => ScriptPhase::Propagation(Some(num(&p[11..])? as u32)),
            p => return Err(bad(&format!("unknown phase `{p}`"))),
        };
        let from = num(&rec[2])?;
        let to = match &rec[3] {
            "end" | "*" => None,
            t => Some(num(t)?),
        };
        let action = match rec[4].to_ascii_lowercase().as_str() {
            "jam" => ScriptAction::Jam,
            "nack" => ScriptAction::Nack,
            a => return Err(bad(&format!("unknown action `{a}`"))),
        };
        let targets = match rec[5].to_ascii_lowercase().as_str() {
            "all" | "*" | "" => None,
            list => {
                let set = list
                    .split(';')
                    .map(|x| num(x.trim()).map(|v| v as u32))
                    .collect::<Result<BTreeSet<u32>>>()?;
                if set.is_empty() {
                    return Err(bad("empty target list"));
                }
                Some(set)
            }
        };
        rows.push(ScriptRow {
            first_round,
            last_round,
            phase,
            from,
            to,
            action,
            targets,
        });
    }
    Ok(rows)
}

/// Carol's ledger plus one per Byzantine node. Spending always enforces
/// the limits and rotates through the ledgers in a fixed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryPool {
    pub carol_ledger: CostLedger,
    pub byz_ledgers: Vec<CostLedger>,
    cursor: usize,
    remaining: u64,
}

impl AdversaryPool {
    pub fn new(budgets: &Budgets, byzantine: u64) -> Self {
        let byz_ledgers = (0..byzantine)
            .map(|_| CostLedger::new(budgets.node_budget, BudgetPolicy::Enforce))
            .collect();
        AdversaryPool {
            carol_ledger: CostLedger::new(budgets.carol_budget, BudgetPolicy::Enforce),
            byz_ledgers,
            cursor: 0,
            remaining: budgets.pooled_adversary(byzantine),
        }
    }

    /// Combined spend `T`.
    pub fn total(&self) -> u64 {
        self.carol_ledger.total() + self.byz_ledgers.iter().map(CostLedger::total).sum::<u64>()
    }

    pub fn remaining(&self) -> u64 {
        self.remaining
    }

    pub fn limit(&self) -> u64 {
        self.carol_ledger.limit + self.byz_ledgers.iter().map(|l| l.limit).sum::<u64>()
    }

    fn ledger_mut(&mut self, idx: usize) -> &mut CostLedger {
        if idx == 0 {
            &mut self.carol_ledger
        } else {
            &mut self.byz_ledgers[idx - 1]
        }
    }

    fn ledger_count(&self) -> usize {
        1 + self.byz_ledgers.len()
    }

    /// Pays up to `units` of `action` and returns the amount paid. Units are
    /// dealt one per ledger in rotation, skipping empty ledgers.
    pub fn pay(&mut self, action: Action, units: u64) -> u64 {
        let mut left = units.min(self.remaining);
        let paid = left;
        let count = self.ledger_count();
        while left > 0 {
            let live: Vec<usize> = (0..count)
                .map(|j| (self.cursor + j) % count)
                .filter(|&idx| {
                    let l = if idx == 0 { &self.carol_ledger } else { &self.byz_ledgers[idx - 1] };
                    l.remaining() > 0
                })
                .collect();
            let floor = live
                .iter()
                .map(|&idx| if idx == 0 { self.carol_ledger.remaining() } else { self.byz_ledgers[idx - 1].remaining() })
                .min()
                .expect("remaining > 0 implies a live ledger");
            let per = floor.min(left / live.len() as u64);
            if per > 0 {
                for &idx in &live {
                    self.ledger_mut(idx).charge_many(action, per);
                }
                left -= per * live.len() as u64;
            } else {
                for &idx in live.iter().take(left as usize) {
                    self.ledger_mut(idx).charge_many(action, 1);
                    self.cursor = (idx + 1) % count;
                }
                left = 0;
            }
        }
        self.remaining -= paid;
        paid
    }
}

/// Activity visible to the adversary. Adaptive strategies see only
/// completed slots; a reactive strategy also gets the current busy flag.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HistorySummary {
    pub slots_elapsed: u64,
    pub transmissions: u64,
    pub listens: u64,
    pub jams: u64,
    pub informed: u64,
    pub terminated: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub round: u32,
    pub phase: Phase,
    pub phase_len: u64,
    /// Global index of the phase's first slot.
    pub phase_start: u64,
    /// Slot index within the phase.
    pub slot: u64,
    pub busy: Option<bool>,
    pub history: HistorySummary,
}

/// A contiguous run of phase-local slots `start..end`.
#[derive(Debug, Clone, PartialEq)]
pub struct JamRange {
    pub start: u64,
    pub end: u64,
    pub targets: Targets,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpoofRange {
    pub start: u64,
    pub end: u64,
    pub sender: ParticipantId,
}

/// Everything a strategy has committed to for one phase.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhasePlan {
    pub jams: Vec<JamRange>,
    pub spoofs: Vec<SpoofRange>,
    /// Commit probability of a reactive jammer active in this phase.
    pub reactive: Option<f64>,
}

impl PhasePlan {
    pub fn planned_jams(&self) -> u64 {
        self.jams.iter().map(|r| r.end - r.start).sum()
    }

    pub fn planned_spoofs(&self) -> u64 {
        self.spoofs.iter().map(|r| r.end - r.start).sum()
    }
}

/// Adversary output for one slot.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SlotPlan {
    pub jams: Vec<JamAction>,
    pub transmissions: Vec<Transmission>,
}

/// Strategy state for one trial.
#[derive(Debug, Clone)]
pub struct AdversaryEngine {
    pub strategy: Strategy,
    pub mode: AdversaryMode,
    pub pool: AdversaryPool,
    /// Global slot at which the pool ran dry, if it did.
    pub exhausted_at: Option<u64>,
    spared: Option<Arc<HashSet<ParticipantId>>>,
    spoof_sender: ParticipantId,
    plan: PhasePlan,
    rng: ChaCha8Rng,
}

impl AdversaryEngine {
    pub fn new(cfg: &SimConfig, strategy: Strategy, budgets: &Budgets) -> Result<Self> {
        strategy.check_mode(cfg.adversary_mode)?;
        let byz = cfg.byzantine();
        let mut rng = stream_rng(cfg.seed, &[domain::ADVERSARY]);
        let spared = match &strategy {
            Strategy::PhaseBlocker {
                victims: VictimRule::SpareSubset(sigma),
                ..
            } => {
                let keep = ((sigma * cfg.n as f64) + 1e-9).floor() as usize;
                let picked = sample(&mut rng, cfg.n as usize, keep.min(cfg.n as usize));
                Some(Arc::new(picked.iter().map(|i| ParticipantId(i as u32 + 1)).collect()))
            }
            _ => None,
        };
        let spoof_sender = if byz > 0 { ParticipantId(cfg.n as u32 + 1) } else { CAROL };
        Ok(AdversaryEngine {
            strategy,
            mode: cfg.adversary_mode,
            pool: AdversaryPool::new(budgets, byz),
            exhausted_at: None,
            spared,
            spoof_sender,
            plan: PhasePlan::default(),
            rng,
        })
    }

    /// Correct nodes the blocker leaves alone.
    pub fn spared(&self) -> Option<&Arc<HashSet<ParticipantId>>> {
        self.spared.as_ref()
    }

    pub fn current_plan(&self) -> &PhasePlan {
        &self.plan
    }

    fn active_in(&self, round: u32) -> bool {
        self.strategy.stop_round().is_none_or(|r| round <= r)
    }

    fn pay_range(&mut self, action: Action, want: u64, obs: &Observation, offset: u64) -> u64 {
        let paid = self.pool.pay(action, want);
        if paid < want && self.exhausted_at.is_none() {
            self.exhausted_at = Some(obs.phase_start + offset + paid);
        }
        paid
    }

    /// Commits the range-based part of the strategy for the phase starting at
    /// `obs`. Everything returned is already paid for.
    pub fn begin_phase(&mut self, obs: &Observation) -> &PhasePlan {
        let mut plan = PhasePlan::default();
        let len = obs.phase_len;
        if self.active_in(obs.round) {
            match self.strategy.clone() {
                Strategy::Null => {}
                Strategy::PhaseBlocker { phases, gamma, victims, .. } => {
                    if phases.contains(obs.phase) && len > 0 {
                        let want = ((gamma * len as f64) - 1e-9).ceil().max(0.0) as u64;
                        let paid = self.pay_range(Action::Jam, want.min(len), obs, 0);
                        if paid > 0 {
                            let targets = match victims {
                                VictimRule::AllNodes => Targets::All,
                                VictimRule::SpareSubset(_) => {
                                    Targets::AllExcept(self.spared.clone().expect("spare set chosen at start"))
                                }
                            };
                            plan.jams.push(JamRange {
                                start: 0,
                                end: paid,
                                targets,
                            });
                        }
                    }
                }
                Strategy::RequestSpoofer { .. } => {
                    if obs.phase == Phase::Request && len > 0 {
                        let paid = self.pay_range(Action::Send, len, obs, 0);
                        if paid > 0 {
                            plan.spoofs.push(SpoofRange {
                                start: 0,
                                end: paid,
                                sender: self.spoof_sender,
                            });
                        }
                    }
                }
                Strategy::ReactiveJammer { p_commit, .. } => {
                    plan.reactive = Some(p_commit);
                }
                Strategy::Scripted(rows) => {
                    for row in rows.iter().filter(|r| {
                        (r.first_round..=r.last_round).contains(&obs.round) && r.phase.matches(obs.phase)
                    }) {
                        let end = row.to.unwrap_or(len).min(len);
                        if row.from >= end {
                            continue;
                        }
                        let (action, want) = match row.action {
                            ScriptAction::Jam => (Action::Jam, end - row.from),
                            ScriptAction::Nack => (Action::Send, end - row.from),
                        };
                        let paid = self.pay_range(action, want, obs, row.from);
                        if paid == 0 {
                            continue;
                        }
                        match row.action {
                            ScriptAction::Jam => plan.jams.push(JamRange {
                                start: row.from,
                                end: row.from + paid,
                                targets: match &row.targets {
                                    None => Targets::All,
                                    Some(set) => Targets::Only(set.iter().map(|&i| ParticipantId(i)).collect()),
                                },
                            }),
                            ScriptAction::Nack => plan.spoofs.push(SpoofRange {
                                start: row.from,
                                end: row.from + paid,
                                sender: self.spoof_sender,
                            }),
                        }
                    }
                }
            }
        }
        self.plan = plan;
        &self.plan
    }

    /// Reactive decision for the current slot. Pays one unit when it jams.
    pub fn react(&mut self, obs: &Observation, busy: bool) -> bool {
        let Some(p) = self.plan.reactive else {
            return false;
        };
        if !busy || self.mode != AdversaryMode::Reactive || self.pool.remaining() == 0 {
            return false;
        }
        if uniform(&mut self.rng) >= p {
            return false;
        }
        let paid = self.pool.pay(Action::Jam, 1);
        if self.pool.remaining() == 0 && self.exhausted_at.is_none() {
            self.exhausted_at = Some(obs.phase_start + obs.slot + 1);
        }
        paid == 1
    }

    /// Full adversary output for one slot: committed ranges covering
    /// `obs.slot` plus, in reactive mode, a jam decided from the busy flag.
    /// Adaptive observations carry no busy flag and never see the slot.
    pub fn plan_slot(&mut self, obs: &Observation) -> SlotPlan {
        let mut out = SlotPlan::default();
        for r in &self.plan.jams {
            if (r.start..r.end).contains(&obs.slot) {
                out.jams.push(JamAction {
                    jammer: CAROL,
                    targets: r.targets.clone(),
                });
            }
        }
        for r in &self.plan.spoofs {
            if (r.start..r.end).contains(&obs.slot) {
                out.transmissions.push(Transmission::new(r.sender, Payload::Nack));
            }
        }
        let busy = obs.busy.unwrap_or(false) || !out.transmissions.is_empty();
        if obs.busy.is_some() && out.jams.is_empty() && self.react(obs, busy) {
            out.jams.push(JamAction {
                jammer: CAROL,
                targets: Targets::All,
            });
        }
        out
    }
}

/// Per-phase jam tally used for blocked-phase classification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseJamLog {
    pub round: u32,
    pub phase: Phase,
    pub length: u64,
    pub jammed: u64,
    /// Jammed slots that carried `m` or at least one decoy.
    pub jammed_active: u64,
    pub complete: bool,
}

/// Blocked iff the jam count exceeds the phase's threshold: `beta L` for
/// inform and propagation, `(1 - e^{-4 eps'}) L` for request, and `L/4`
/// jammed active slots when a reactive adversary faces decoys.
pub fn classify_blocked(log: &PhaseJamLog, cfg: &SimConfig) -> Result<bool> {
    if !log.complete || log.jammed > log.length || log.jammed_active > log.jammed {
        return Err(Error::IncompleteLog(format!(
            "round {} {}: {} jams over {} slots",
            log.round,
            log.phase.label(),
            log.jammed,
            log.length
        )));
    }
    let len = log.length as f64;
    if cfg.adversary_mode == AdversaryMode::Reactive && cfg.decoys_enabled {
        return Ok(log.jammed_active as f64 > len / 4.0);
    }
    Ok(match log.phase {
        Phase::Inform | Phase::Propagation { .. } => log.jammed as f64 > cfg.beta * len,
        Phase::Request => log.jammed as f64 > (1.0 - (-4.0 * cfg.epsilon_prime).exp()) * len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{default_raw, derive_budgets, validate_config};

    fn cfg(extra: &[(&str, &str)]) -> SimConfig {
        let mut raw = default_raw();
        for (k, v) in extra {
            raw.insert(k.to_string(), v.to_string());
        }
        validate_config(&raw).unwrap()
    }

    fn obs(round: u32, phase: Phase, len: u64) -> Observation {
        Observation {
            round,
            phase,
            phase_len: len,
            phase_start: 1000,
            slot: 0,
            busy: None,
            history: HistorySummary::default(),
        }
    }

    fn blocker(gamma: f64, phases: PhaseSet) -> Strategy {
        Strategy::PhaseBlocker {
            phases,
            gamma,
            victims: VictimRule::AllNodes,
            stop_round: None,
        }
    }

    const INFORM_ONLY: PhaseSet = PhaseSet {
        inform: true,
        propagation: false,
        request: false,
    };

    #[test]
    fn null_never_acts() {
        let c = cfg(&[]);
        let mut e = AdversaryEngine::new(&c, Strategy::Null, &derive_budgets(&c)).unwrap();
        let before = e.pool.clone();
        let plan = e.begin_phase(&obs(3, Phase::Inform, 64)).clone();
        assert_eq!(plan, PhasePlan::default());
        let mut o = obs(3, Phase::Inform, 64);
        o.slot = 5;
        assert_eq!(e.plan_slot(&o), SlotPlan::default());
        assert_eq!(e.pool, before);
    }

    #[test]
    fn blocker_jams_ceil_gamma_l_and_blocks() {
        let c = cfg(&[]);
        let mut e = AdversaryEngine::new(&c, blocker(0.6, INFORM_ONLY), &derive_budgets(&c)).unwrap();
        let plan = e.begin_phase(&obs(4, Phase::Inform, 64)).clone();
        assert_eq!(plan.planned_jams(), 39);
        assert_eq!(e.pool.total(), 39);
        let log = PhaseJamLog {
            round: 4,
            phase: Phase::Inform,
            length: 64,
            jammed: 39,
            jammed_active: 0,
            complete: true,
        };
        assert!(classify_blocked(&log, &c).unwrap());
        let none = e.begin_phase(&obs(4, Phase::Request, 64)).clone();
        assert_eq!(none.planned_jams(), 0);
    }

    #[test]
    fn blocker_degrades_when_pool_runs_dry() {
        let c = cfg(&[("f", "0")]);
        let mut budgets = derive_budgets(&c);
        budgets.carol_budget = 1;
        let mut e = AdversaryEngine::new(&c, blocker(0.6, INFORM_ONLY), &budgets).unwrap();
        let plan = e.begin_phase(&obs(4, Phase::Inform, 64)).clone();
        assert_eq!(plan.planned_jams(), 1);
        assert_eq!(e.exhausted_at, Some(1001));
        assert_eq!(e.pool.remaining(), 0);
        let later = e.begin_phase(&obs(5, Phase::Inform, 128)).clone();
        assert_eq!(later.planned_jams(), 0);
        assert_eq!(e.exhausted_at, Some(1001));
    }

    #[test]
    fn reactive_never_jams_silent_slots() {
        let c = cfg(&[("adversary_mode", "reactive")]);
        let strat = Strategy::ReactiveJammer {
            p_commit: 1.0,
            stop_round: None,
        };
        let mut e = AdversaryEngine::new(&c, strat, &derive_budgets(&c)).unwrap();
        e.begin_phase(&obs(4, Phase::Inform, 64));
        for slot in 0..64 {
            let mut o = obs(4, Phase::Inform, 64);
            o.slot = slot;
            o.busy = Some(false);
            assert!(e.plan_slot(&o).jams.is_empty());
        }
        assert_eq!(e.pool.total(), 0);
        let mut o = obs(4, Phase::Inform, 64);
        o.busy = Some(true);
        assert_eq!(e.plan_slot(&o).jams.len(), 1);
        assert_eq!(e.pool.total(), 1);
    }

    #[test]
    fn reactive_needs_reactive_mode() {
        let c = cfg(&[]);
        let strat = Strategy::ReactiveJammer {
            p_commit: 1.0,
            stop_round: None,
        };
        assert!(AdversaryEngine::new(&c, strat, &derive_budgets(&c)).is_err());
    }

    #[test]
    fn adaptive_plan_ignores_current_slot() {
        // the adaptive observation carries no busy flag, so whatever correct
        // nodes do in slot t cannot reach the slot-t decision
        let c = cfg(&[]);
        let mut a = AdversaryEngine::new(&c, blocker(0.51, PhaseSet::ALL), &derive_budgets(&c)).unwrap();
        let mut b = a.clone();
        a.begin_phase(&obs(4, Phase::Inform, 64));
        b.begin_phase(&obs(4, Phase::Inform, 64));
        for slot in 0..64 {
            let mut o = obs(4, Phase::Inform, 64);
            o.slot = slot;
            let mut o2 = o;
            o2.history.transmissions = 17;
            assert_eq!(a.plan_slot(&o), b.plan_slot(&o2));
        }
    }

    #[test]
    fn classification_thresholds() {
        let c = cfg(&[("epsilon_prime", "0.05")]);
        let log = |phase, jammed| PhaseJamLog {
            round: 4,
            phase,
            length: 64,
            jammed,
            jammed_active: 0,
            complete: true,
        };
        assert!(classify_blocked(&log(Phase::Inform, 33), &c).unwrap());
        assert!(!classify_blocked(&log(Phase::Inform, 32), &c).unwrap());
        // (1 - e^-0.2) * 64 = 11.60
        assert!(!classify_blocked(&log(Phase::Request, 11), &c).unwrap());
        assert!(classify_blocked(&log(Phase::Request, 12), &c).unwrap());
        for p in [Phase::Inform, Phase::Propagation { step: 1 }, Phase::Request] {
            assert!(!classify_blocked(&log(p, 0), &c).unwrap());
        }
        let mut bad = log(Phase::Inform, 10);
        bad.complete = false;
        assert!(matches!(classify_blocked(&bad, &c), Err(Error::IncompleteLog(_))));
    }

    #[test]
    fn reactive_decoy_rule_counts_active_slots() {
        let c = cfg(&[("adversary_mode", "reactive"), ("decoys_enabled", "true")]);
        let mut log = PhaseJamLog {
            round: 4,
            phase: Phase::Inform,
            length: 64,
            jammed: 60,
            jammed_active: 16,
            complete: true,
        };
        assert!(!classify_blocked(&log, &c).unwrap());
        log.jammed_active = 17;
        assert!(classify_blocked(&log, &c).unwrap());
    }

    #[test]
    fn pool_rotates_and_stops_at_limit() {
        let budgets = Budgets {
            node_budget: 3,
            alice_budget: 0,
            carol_budget: 5,
        };
        let mut pool = AdversaryPool::new(&budgets, 2);
        assert_eq!(pool.limit(), 11);
        assert_eq!(pool.pay(Action::Jam, 4), 4);
        assert_eq!(pool.carol_ledger.total(), 2);
        assert_eq!(pool.byz_ledgers[0].total(), 1);
        assert_eq!(pool.byz_ledgers[1].total(), 1);
        assert_eq!(pool.pay(Action::Jam, 100), 7);
        assert_eq!(pool.total(), 11);
        assert_eq!(pool.pay(Action::Jam, 1), 0);
        assert!(pool.byz_ledgers.iter().all(|l| l.total() == 3 && !l.violated));
    }

    #[test]
    fn spoofer_sends_one_nack_per_request_slot() {
        let c = cfg(&[]);
        let mut e = AdversaryEngine::new(&c, Strategy::RequestSpoofer { stop_round: None }, &derive_budgets(&c)).unwrap();
        assert!(e.begin_phase(&obs(4, Phase::Inform, 64)).spoofs.is_empty());
        let plan = e.begin_phase(&obs(4, Phase::Request, 64)).clone();
        assert_eq!(plan.planned_spoofs(), 64);
        let mut o = obs(4, Phase::Request, 64);
        o.slot = 10;
        let slot = e.plan_slot(&o);
        assert_eq!(slot.transmissions.len(), 1);
        assert_eq!(slot.transmissions[0].payload, Payload::Nack);
        assert_eq!(slot.transmissions[0].sender, ParticipantId(1025));
    }

    #[test]
    fn spare_subset_has_requested_size() {
        let c = cfg(&[]);
        let strat = Strategy::PhaseBlocker {
            phases: PhaseSet::ALL,
            gamma: 0.51,
            victims: VictimRule::SpareSubset(0.25),
            stop_round: None,
        };
        let e = AdversaryEngine::new(&c, strat, &derive_budgets(&c)).unwrap();
        let spared = e.spared().unwrap();
        assert_eq!(spared.len(), 256);
        assert!(spared.iter().all(|p| (1..=1024).contains(&p.0)));
    }

    #[test]
    fn script_parsing() {
        let text = "round,phase,from,to,action,targets\n1-3,*,0,end,jam,all\n4,propagation1,5,9,jam,1;2\n2,request,0,3,nack,all\n";
        let rows = parse_script(text).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!((rows[0].first_round, rows[0].last_round), (1, 3));
        assert_eq!(rows[1].phase, ScriptPhase::Propagation(Some(1)));
        assert_eq!(rows[1].targets, Some(BTreeSet::from([1, 2])));
        assert_eq!(rows[2].action, ScriptAction::Nack);
        assert!(parse_script("a,b\n1,2\n").is_err());
        assert!(parse_script("round,phase,from,to,action,targets\n1,inform,0,end,dance,all\n").is_err());
    }

    #[test]
    fn strategy_from_raw() {
        let mut raw = default_raw();
        raw.insert("adversary.strategy".into(), "PhaseBlocker".into());
        raw.insert("adversary.phases".into(), "inform,request".into());
        raw.insert("adversary.spare_fraction".into(), "0.9".into());
        match Strategy::from_raw(&raw).unwrap() {
            Strategy::PhaseBlocker { phases, victims, gamma, .. } => {
                assert!(phases.inform && phases.request && !phases.propagation);
                assert_eq!(victims, VictimRule::SpareSubset(0.9));
                assert_eq!(gamma, 0.51);
            }
            s => panic!("{s:?}"),
        }
        raw.remove("adversary.spare_fraction");
        raw.insert("adversary.victims".into(), "spare".into());
        raw.insert("epsilon_prime".into(), "1/4096".into());
        match Strategy::from_raw(&raw).unwrap() {
            Strategy::PhaseBlocker { victims, .. } => {
                assert_eq!(victims, VictimRule::SpareSubset(1.0 - 32.0 / 4096.0))
            }
            s => panic!("{s:?}"),
        }
        raw.insert("adversary.strategy".into(), "bogus".into());
        assert_eq!(Strategy::from_raw(&raw).unwrap_err().field, "adversary.strategy");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn pool_never_overdraws(node in 0u64..50, carol in 0u64..50, byz in 0u64..6,
                                    asks in proptest::collection::vec(0u64..40, 1..20)) {
                let budgets = Budgets { node_budget: node, alice_budget: 0, carol_budget: carol };
                let mut pool = AdversaryPool::new(&budgets, byz);
                let mut spent = 0;
                for a in asks {
                    let before = pool.total();
                    let paid = pool.pay(Action::Jam, a);
                    spent += paid;
                    prop_assert_eq!(pool.total(), before + paid);
                    prop_assert!(pool.total() <= pool.limit());
                    prop_assert_eq!(pool.remaining(), pool.limit() - pool.total());
                }
                prop_assert_eq!(spent, pool.total());
                prop_assert!(!pool.carol_ledger.violated);
                prop_assert!(pool.byz_ledgers.iter().all(|l| !l.violated));
            }
        }
    }
}
