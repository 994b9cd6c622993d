//! Trial engine.
//!
//! Sends, decoys and nacks are sparse and are enumerated one by one from
//! geometric-gap streams. Listening can be dense (the listen probabilities
//! clamp to 1 in early rounds), so listens are accounted per phase:
//!
//! * In inform and propagation phases a listener's state only changes in a
//!   slot that carries exactly one copy of `m` and is not jammed for it.
//!   Each listener draws how many such slots it skips (a geometric count)
//!   and listens in the next one. Its remaining listens fall on slots where
//!   nothing it could hear matters and are drawn as one binomial count.
//! * In the request phase only the number of noisy slots heard matters, so
//!   noisy and silent listens are two binomial counts over the exact sizes
//!   of the noisy and silent slot sets.
//!
//! Both are equal in law to an independent per-slot draw, because within a
//! phase neither the transmissions of others nor any built-in strategy
//! depends on where a given node listened. A decoy candidate that would
//! otherwise be listening takes an explicit per-slot listen draw, and that
//! slot is then excluded from its bulk count.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::adversary::{classify_blocked, AdversaryEngine, HistorySummary, Observation, PhaseJamLog, PhasePlan, Strategy};
use crate::channel::{ParticipantId, Payload, Targets, Transmission, ALICE};
use crate::error::{Error, Result};
use crate::ledger::{Action, CostLedger};
use crate::params::{approx_replications, approx_slot_inflation, derive_budgets, propagation_passes, round_schedule, RoundSchedule, SimConfig};
use crate::protocol::{end_of_phase, ApproxParams, ParticipantState, Phase, PhaseContext, Status};
use crate::rng::{derive_seed, domain, stream_rng, BernoulliStream};

/// Upper bound on slot-trace rows kept per trial.
pub const TRACE_ROW_CAP: usize = 1_000_000;

mod kind {
    pub const SEND: u64 = 1;
    pub const CHAIN: u64 = 2;
    pub const BULK: u64 = 3;
    pub const DECOY: u64 = 4;
    pub const SLOT: u64 = 5;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrialOptions {
    /// Keep up to this many slot-trace rows (0 disables tracing).
    pub trace_cap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub round: u32,
    pub phase: Phase,
    /// Replication index under the unknown-`n` variant, else 0.
    pub replication: u32,
    pub start: u64,
    pub length: u64,
    pub jammed: u64,
    pub jammed_active: u64,
    pub blocked: bool,
    pub transmissions: u64,
    pub listens: u64,
    pub newly_informed: u64,
}

/// Realized size of the relay set `S_{i,h}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaySetRecord {
    pub round: u32,
    pub h: u32,
    pub size: u64,
    /// Active uninformed nodes when the round began.
    pub active_uninformed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub slots: u64,
    pub propagation_steps: u32,
    pub replications: u32,
    pub clamped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub round: u32,
    pub phase: String,
    pub global_slot: u64,
    pub transmissions: u32,
    pub carries_m: bool,
    pub decoys: u32,
    pub jammed: bool,
    pub newly_informed: u32,
}

/// Busy slots seen by a reactive jammer before its pool ran dry, split by
/// whether they carried `m` or only decoys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReactiveTable {
    pub m_jammed: u64,
    pub m_clear: u64,
    pub decoy_jammed: u64,
    pub decoy_clear: u64,
}

impl ReactiveTable {
    pub fn add(&mut self, other: &ReactiveTable) {
        self.m_jammed += other.m_jammed;
        self.m_clear += other.m_clear;
        self.decoy_jammed += other.decoy_jammed;
        self.decoy_clear += other.decoy_clear;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub n: u64,
    pub f: f64,
    pub k: u32,
    pub epsilon_prime: f64,
    pub strategy: String,
    pub informed_count: u64,
    pub uninformed_terminated_count: u64,
    pub still_active: u64,
    pub alice_terminated: bool,
    pub max_rounds_hit: bool,
    /// Set when `max_rounds = 0`: nothing ran.
    pub empty: bool,
    pub termination_slot: Option<u64>,
    pub termination_round: Option<u32>,
    pub slots_simulated: u64,
    pub alice_cost: u64,
    pub max_node_cost: u64,
    pub mean_node_cost: f64,
    pub node_budget: u64,
    pub adversary_cost: u64,
    pub pooled_budget: u64,
    pub budget_violations: u64,
    pub exhausted_at: Option<u64>,
    pub phases: Vec<PhaseRecord>,
    pub relay_sets: Vec<RelaySetRecord>,
    pub rounds: Vec<RoundRecord>,
    pub reactive_table: ReactiveTable,
    pub conservation_ok: bool,
    pub threshold_consistent: bool,
    pub approx_inflation: Option<f64>,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

impl TrialResult {
    pub fn informed_frac(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.informed_count as f64 / self.n as f64
        }
    }

    pub fn blocked_phase_count(&self) -> u64 {
        self.phases.iter().filter(|p| p.blocked).count() as u64
    }

    /// First round in which no phase was blocked.
    pub fn first_unblocked_round(&self) -> Option<u32> {
        self.rounds
            .iter()
            .map(|r| r.round)
            .find(|&r| !self.phases.iter().any(|p| p.round == r && p.blocked))
    }
}

fn binomial(rng: &mut impl Rng, trials: u64, p: f64) -> u64 {
    if trials == 0 || p <= 0.0 {
        0
    } else if p >= 1.0 {
        trials
    } else {
        Binomial::new(trials, p).expect("valid binomial").sample(rng)
    }
}

/// Failures before the first success, `None` when `p = 0`.
fn failures_before_hit(rng: &mut impl Rng, p: f64) -> Option<u64> {
    if p <= 0.0 {
        None
    } else if p >= 1.0 {
        Some(0)
    } else {
        Some(Geometric::new(p).expect("valid geometric").sample(rng))
    }
}

fn unit_from(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Union of half-open intervals, merged and sorted.
fn merge_intervals(mut v: Vec<(u64, u64)>) -> Vec<(u64, u64)> {
    v.retain(|(a, b)| a < b);
    v.sort_unstable();
    let mut out: Vec<(u64, u64)> = Vec::with_capacity(v.len());
    for (a, b) in v {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

fn inside(merged: &[(u64, u64)], x: u64) -> bool {
    let i = merged.partition_point(|&(a, _)| a <= x);
    i > 0 && x < merged[i - 1].1
}

/// Partition of listeners by which of the phase's jam target sets cover them.
struct JamClasses {
    sets: Vec<Targets>,
    range_bits: Vec<u64>,
}

impl JamClasses {
    fn new(plan: &PhasePlan) -> Result<Self> {
        let mut sets: Vec<Targets> = Vec::new();
        let mut range_bits = Vec::with_capacity(plan.jams.len());
        for r in &plan.jams {
            let idx = match sets.iter().position(|t| *t == r.targets) {
                Some(i) => i,
                None => {
                    sets.push(r.targets.clone());
                    sets.len() - 1
                }
            };
            if idx >= 64 {
                return Err(Error::Script("more than 64 distinct jam target sets in one phase".into()));
            }
            range_bits.push(1u64 << idx);
        }
        Ok(JamClasses { sets, range_bits })
    }

    fn signature(&self, id: ParticipantId) -> u64 {
        self.sets
            .iter()
            .enumerate()
            .filter(|(_, t)| t.contains(id))
            .fold(0, |m, (b, _)| m | (1 << b))
    }

    fn mask_at(&self, plan: &PhasePlan, slot: u64) -> u64 {
        plan.jams
            .iter()
            .zip(&self.range_bits)
            .filter(|(r, _)| (r.start..r.end).contains(&slot))
            .fold(0, |m, (_, b)| m | b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StreamKind {
    Send,
    Decoy,
}

struct ListenerState {
    class: usize,
    explicit_listens: u64,
    explicit_decided: u64,
    informed_slot: Option<u64>,
    chain_decided: u64,
    via_chain: bool,
}

struct ClassState {
    sig: u64,
    counter: u64,
    queue: BinaryHeap<Reverse<(u64, u32)>>,
}

struct Trial<'c> {
    cfg: &'c SimConfig,
    parts: Vec<ParticipantState>,
    ever_informed: Vec<bool>,
    adv: AdversaryEngine,
    global: u64,
    history: HistorySummary,
    phases: Vec<PhaseRecord>,
    relay_sets: Vec<RelaySetRecord>,
    rounds: Vec<RoundRecord>,
    trace: Vec<TraceRow>,
    trace_cap: usize,
    reactive_table: ReactiveTable,
    threshold_consistent: bool,
    tally_tx: u64,
    tally_listens: u64,
    tally_jams: u64,
}

impl<'c> Trial<'c> {
    fn n(&self) -> usize {
        self.cfg.n as usize
    }

    fn coords(&self, id: u32, round: u32, phase: Phase, pass: u32, kind: u64) -> [u64; 6] {
        [domain::PARTICIPANT, id as u64, round as u64, phase.code(), pass as u64, kind]
    }

    fn observation(&self, round: u32, phase: Phase, len: u64) -> Observation {
        Observation {
            round,
            phase,
            phase_len: len,
            phase_start: self.global,
            slot: 0,
            busy: None,
            history: self.history,
        }
    }

    fn inform(&mut self, id: u32, round: u32, phase: Phase) {
        let step = match phase {
            Phase::Propagation { step } => step,
            _ => 0,
        };
        let p = &mut self.parts[id as usize];
        p.status = Status::Informed { round, step };
        p.newly_informed = true;
        self.ever_informed[id as usize] = true;
    }

    fn push_trace(&mut self, row: TraceRow) {
        if self.trace.len() < self.trace_cap {
            self.trace.push(row);
        }
    }

    fn finish_phase(&mut self, plan_jams: u64, log: PhaseJamLog, replication: u32, tx: u64, listens: u64, newly: u64) -> Result<()> {
        let blocked = classify_blocked(&log, self.cfg)?;
        self.phases.push(PhaseRecord {
            round: log.round,
            phase: log.phase,
            replication,
            start: self.global,
            length: log.length,
            jammed: log.jammed,
            jammed_active: log.jammed_active,
            blocked,
            transmissions: tx,
            listens,
            newly_informed: newly,
        });
        self.tally_tx += tx;
        self.tally_listens += listens;
        self.tally_jams += log.jammed;
        debug_assert!(log.jammed >= plan_jams);
        self.history.slots_elapsed += log.length;
        self.history.transmissions += tx;
        self.history.listens += listens;
        self.history.jams += log.jammed;
        self.history.informed = self.ever_informed.iter().filter(|&&b| b).count() as u64;
        self.history.terminated = self.parts.iter().filter(|p| p.is_terminated()).count() as u64;
        self.global += log.length;
        Ok(())
    }

    /// Inform phase or one propagation pass. Returns the number of nodes
    /// informed in it.
    fn broadcast_phase(&mut self, sched: &RoundSchedule, phase: Phase, pass: u32, len: u64, send_p: f64) -> Result<u64> {
        let round = sched.round;
        let seed = self.cfg.seed;
        let obs = self.observation(round, phase, len);
        let plan = self.adv.begin_phase(&obs).clone();
        let classes_def = JamClasses::new(&plan)?;
        let is_inform = phase == Phase::Inform;
        let listen_p = if is_inform {
            sched.node_inform_listen_p
        } else {
            sched.node_prop_listen_p
        };

        let mut streams: Vec<(u32, StreamKind, BernoulliStream)> = Vec::new();
        if is_inform && !self.parts[0].is_terminated() {
            let s = derive_seed(seed, &self.coords(0, round, phase, pass, kind::SEND));
            streams.push((0, StreamKind::Send, BernoulliStream::new(s, sched.alice_send_p, len)));
        }
        if !is_inform {
            for id in 1..=self.n() as u32 {
                let p = &self.parts[id as usize];
                if p.sender_duty && !p.is_terminated() {
                    let s = derive_seed(seed, &self.coords(id, round, phase, pass, kind::SEND));
                    streams.push((id, StreamKind::Send, BernoulliStream::new(s, send_p, len)));
                }
            }
        }
        if self.cfg.decoys_enabled && sched.decoy_send_p > 0.0 {
            for id in 1..=self.n() as u32 {
                if !self.parts[id as usize].is_terminated() {
                    let s = derive_seed(seed, &self.coords(id, round, phase, pass, kind::DECOY));
                    streams.push((id, StreamKind::Decoy, BernoulliStream::new(s, sched.decoy_send_p, len)));
                }
            }
        }
        let mut heap: BinaryHeap<Reverse<(u64, usize)>> = streams
            .iter()
            .enumerate()
            .filter_map(|(i, (_, _, s))| s.peek().map(|slot| Reverse((slot, i))))
            .collect();

        let mut classes: Vec<ClassState> = Vec::new();
        let mut listeners: Vec<Option<ListenerState>> = (0..=self.n()).map(|_| None).collect();
        let mut listener_ids = Vec::new();
        for id in 1..=self.n() as u32 {
            let p = &self.parts[id as usize];
            if !p.is_uninformed() || p.is_terminated() {
                continue;
            }
            let sig = classes_def.signature(ParticipantId(id));
            let class = match classes.iter().position(|c| c.sig == sig) {
                Some(c) => c,
                None => {
                    classes.push(ClassState {
                        sig,
                        counter: 0,
                        queue: BinaryHeap::new(),
                    });
                    classes.len() - 1
                }
            };
            let mut rng = stream_rng(seed, &self.coords(id, round, phase, pass, kind::CHAIN));
            if let Some(g) = failures_before_hit(&mut rng, listen_p) {
                classes[class].queue.push(Reverse((g + 1, id)));
            }
            listeners[id as usize] = Some(ListenerState {
                class,
                explicit_listens: 0,
                explicit_decided: 0,
                informed_slot: None,
                chain_decided: 0,
                via_chain: false,
            });
            listener_ids.push(id);
        }

        let mut tx_count = 0u64;
        let mut reactive_jams = 0u64;
        let mut jammed_active = 0u64;
        let mut newly_total = 0u64;
        let mut fired: Vec<usize> = Vec::new();
        let mut tx: Vec<Transmission> = Vec::new();
        let mut explicit_now: Vec<u32> = Vec::new();

        while let Some(&Reverse((slot, _))) = heap.peek() {
            fired.clear();
            while let Some(&Reverse((s, i))) = heap.peek() {
                if s != slot {
                    break;
                }
                heap.pop();
                fired.push(i);
            }
            tx.clear();
            explicit_now.clear();
            for &i in &fired {
                let (id, kind_, _) = streams[i];
                if kind_ != StreamKind::Send {
                    continue;
                }
                if self.parts[id as usize].ledger.charge(Action::Send).is_ok() {
                    tx.push(if id == 0 {
                        Transmission::new(ALICE, Payload::MessageM)
                    } else {
                        Transmission::relay(ParticipantId(id))
                    });
                }
            }
            for &i in &fired {
                let (id, kind_, _) = streams[i];
                if kind_ != StreamKind::Decoy || tx.iter().any(|t| t.sender.0 == id) {
                    continue;
                }
                if let Some(l) = listeners[id as usize].as_mut() {
                    if l.informed_slot.is_none() && listen_p > 0.0 {
                        l.explicit_decided += 1;
                        let mut c = self.coords(id, round, phase, pass, kind::SLOT).to_vec();
                        c.push(slot);
                        if unit_from(derive_seed(seed, &c)) < listen_p {
                            l.explicit_listens += 1;
                            explicit_now.push(id);
                            continue;
                        }
                    }
                }
                if self.parts[id as usize].ledger.charge(Action::Send).is_ok() {
                    tx.push(Transmission::new(ParticipantId(id), Payload::Decoy));
                }
            }
            for &i in &fired {
                streams[i].2.advance_past(slot);
                if let Some(next) = streams[i].2.peek() {
                    heap.push(Reverse((next, i)));
                }
            }
            let correct_tx = tx.len() as u64;
            for r in &plan.spoofs {
                if (r.start..r.end).contains(&slot) {
                    tx.push(Transmission::new(r.sender, Payload::Nack));
                }
            }

            let mask = classes_def.mask_at(&plan, slot);
            let carries_m = tx.iter().any(|t| t.payload == Payload::MessageM && t.authenticated);
            let decoys = tx.iter().filter(|t| t.payload == Payload::Decoy).count() as u32;
            let busy = !tx.is_empty();
            let mut reactive_jam = false;
            if plan.reactive.is_some() && busy && mask == 0 {
                let live = self.adv.pool.remaining() > 0;
                let mut o = obs;
                o.slot = slot;
                o.busy = Some(true);
                reactive_jam = self.adv.react(&o, true);
                if reactive_jam {
                    reactive_jams += 1;
                }
                if live {
                    let t = &mut self.reactive_table;
                    match (carries_m, decoys > 0, reactive_jam) {
                        (true, _, true) => t.m_jammed += 1,
                        (true, _, false) => t.m_clear += 1,
                        (false, true, true) => t.decoy_jammed += 1,
                        (false, true, false) => t.decoy_clear += 1,
                        _ => {}
                    }
                }
            }
            let jammed_any = mask != 0 || reactive_jam;
            if jammed_any && (carries_m || decoys > 0) {
                jammed_active += 1;
            }
            tx_count += correct_tx;

            let mut newly = 0u32;
            if tx.len() == 1 && carries_m && !reactive_jam {
                for &id in explicit_now.iter() {
                    let l = listeners[id as usize].as_mut().expect("explicit listener is tracked");
                    if classes[l.class].sig & mask == 0 {
                        l.informed_slot = Some(slot);
                        l.chain_decided = classes[l.class].counter;
                        newly += 1;
                        self.inform(id, round, phase);
                    }
                }
                for class in classes.iter_mut() {
                    if class.sig & mask != 0 {
                        continue;
                    }
                    class.counter += 1;
                    let counter = class.counter;
                    while let Some(&Reverse((target, id))) = class.queue.peek() {
                        if target > counter {
                            break;
                        }
                        class.queue.pop();
                        let l = listeners[id as usize].as_mut().expect("queued listener is tracked");
                        if l.informed_slot.is_none() {
                            l.informed_slot = Some(slot);
                            l.chain_decided = target - 1;
                            l.via_chain = true;
                            newly += 1;
                            self.inform(id, round, phase);
                        }
                    }
                }
            }
            newly_total += newly as u64;
            if self.trace.len() < self.trace_cap {
                self.push_trace(TraceRow {
                    round,
                    phase: phase.label(),
                    global_slot: self.global + slot,
                    transmissions: tx.len() as u32,
                    carries_m,
                    decoys,
                    jammed: jammed_any,
                    newly_informed: newly,
                });
            }
        }

        let mut listens_total = 0u64;
        for id in listener_ids {
            let l = listeners[id as usize].take().expect("listener present");
            let window = l.informed_slot.map_or(len, |s| s + 1);
            let chain = if l.informed_slot.is_some() {
                l.chain_decided
            } else {
                classes[l.class].counter
            };
            let chain_listen = l.via_chain as u64;
            let decided = l.explicit_decided + chain + chain_listen;
            debug_assert!(decided <= window, "decided {decided} > window {window}");
            let mut rng = stream_rng(seed, &self.coords(id, round, phase, pass, kind::BULK));
            let bulk = binomial(&mut rng, window.saturating_sub(decided), listen_p);
            let want = l.explicit_listens + chain_listen + bulk;
            let part = &mut self.parts[id as usize];
            let got = part.ledger.charge_many(Action::Listen, want);
            if got < want && l.informed_slot.is_some() {
                // ran dry before reaching the slot that would have informed it
                part.status = Status::Uninformed;
                part.newly_informed = false;
                self.ever_informed[id as usize] = false;
                newly_total -= 1;
            }
            listens_total += got;
        }

        let jams = plan.planned_jams() + reactive_jams;
        let log = PhaseJamLog {
            round,
            phase,
            length: len,
            jammed: jams,
            jammed_active,
            complete: true,
        };
        self.finish_phase(plan.planned_jams(), log, pass, tx_count + plan.planned_spoofs(), listens_total, newly_total)?;
        Ok(newly_total)
    }

    fn request_phase(&mut self, sched: &RoundSchedule) -> Result<()> {
        let round = sched.round;
        let phase = Phase::Request;
        let seed = self.cfg.seed;
        let len = sched.request_slots;
        let obs = self.observation(round, phase, len);
        let plan = self.adv.begin_phase(&obs).clone();
        let classes_def = JamClasses::new(&plan)?;

        let nackers: Vec<u32> = (1..=self.n() as u32)
            .filter(|&id| {
                let p = &self.parts[id as usize];
                p.is_uninformed() && !p.is_terminated()
            })
            .collect();
        let mut own = vec![0u64; self.n() + 1];
        let mut nack_slots: Vec<u64> = Vec::new();
        for &id in &nackers {
            let s = derive_seed(seed, &self.coords(id, round, phase, 0, kind::SEND));
            let mut stream = BernoulliStream::new(s, sched.nack_send_p, len);
            while let Some(slot) = stream.peek() {
                if self.parts[id as usize].ledger.charge(Action::Send).is_err() {
                    break;
                }
                own[id as usize] += 1;
                nack_slots.push(slot);
                stream.advance_past(slot);
            }
        }
        let sends = nack_slots.len() as u64;
        nack_slots.sort_unstable();
        let mut busy_slots = nack_slots.clone();
        busy_slots.dedup();

        let mut reactive_jams = 0u64;
        if plan.reactive.is_some() {
            for &slot in &busy_slots {
                let mut o = obs;
                o.slot = slot;
                o.busy = Some(true);
                if self.adv.react(&o, true) {
                    reactive_jams += 1;
                }
            }
        }
        if self.trace.len() < self.trace_cap {
            let mut i = 0;
            while i < nack_slots.len() && self.trace.len() < self.trace_cap {
                let slot = nack_slots[i];
                let j = nack_slots[i..].partition_point(|&s| s == slot) + i;
                let mask = classes_def.mask_at(&plan, slot);
                self.push_trace(TraceRow {
                    round,
                    phase: phase.label(),
                    global_slot: self.global + slot,
                    transmissions: (j - i) as u32,
                    carries_m: false,
                    decoys: 0,
                    jammed: mask != 0,
                    newly_informed: 0,
                });
                i = j;
            }
        }

        // noisy-slot count per jam-target class: jammed or spoofed ranges
        // plus nack slots outside them
        let spoof_ranges: Vec<(u64, u64)> = plan.spoofs.iter().map(|r| (r.start, r.end)).collect();
        let mut noisy_by_sig: Vec<(u64, u64)> = Vec::new();
        let mut noisy_for = |sig: u64| -> u64 {
            if let Some(&(_, v)) = noisy_by_sig.iter().find(|(s, _)| *s == sig) {
                return v;
            }
            let mut iv = spoof_ranges.clone();
            for (r, bit) in plan.jams.iter().zip(&classes_def.range_bits) {
                if sig & bit != 0 {
                    iv.push((r.start, r.end));
                }
            }
            let merged = merge_intervals(iv);
            let covered: u64 = merged.iter().map(|(a, b)| b - a).sum();
            let outside = busy_slots.iter().filter(|&&s| !inside(&merged, s)).count() as u64;
            let v = covered + outside;
            noisy_by_sig.push((sig, v));
            v
        };

        let mut listeners: Vec<(u32, f64)> = Vec::new();
        if !self.parts[0].is_terminated() {
            listeners.push((0, sched.alice_request_listen_p));
        }
        listeners.extend(nackers.iter().map(|&id| (id, sched.node_request_listen_p)));
        let mut listens_total = 0u64;
        for (id, p) in listeners {
            let noisy = noisy_for(classes_def.signature(ParticipantId(id)));
            let mine = own[id as usize];
            let mut rng = stream_rng(seed, &self.coords(id, round, phase, 0, kind::BULK));
            let heard = binomial(&mut rng, noisy - mine, p);
            let quiet = binomial(&mut rng, len - noisy, p);
            let part = &mut self.parts[id as usize];
            let got = part.ledger.charge_many(Action::Listen, heard + quiet);
            // under enforcement the listens that did happen are a uniform
            // subset of the intended ones
            let heard = if got < heard + quiet {
                binomial_subset(&mut rng, heard, heard + quiet, got)
            } else {
                heard
            };
            part.noisy_heard = heard as u32;
            listens_total += got;
        }

        let log = PhaseJamLog {
            round,
            phase,
            length: len,
            jammed: plan.planned_jams() + reactive_jams,
            jammed_active: 0,
            complete: true,
        };
        let ctx = PhaseContext {
            round,
            phase,
            slot: len,
            length: len,
            schedule: sched,
            informed_send_p: sched.informed_send_p,
            decoys_enabled: self.cfg.decoys_enabled,
        };
        let end = self.global + len;
        let gate = self.cfg.min_termination_round;
        for id in 0..=self.n() {
            let p = &mut self.parts[id];
            if p.is_terminated() {
                continue;
            }
            let heard = p.noisy_heard;
            let uninformed = p.is_uninformed();
            end_of_phase(p, &ctx, end, gate);
            if p.is_terminated() && (uninformed || id == 0) && heard as f64 > sched.termination_threshold {
                self.threshold_consistent = false;
            }
        }
        self.finish_phase(plan.planned_jams(), log, 0, sends + plan.planned_spoofs(), listens_total, 0)
    }

    fn close_broadcast(&mut self, sched: &RoundSchedule, phase: Phase) {
        let ctx = PhaseContext {
            round: sched.round,
            phase,
            slot: sched.inform_slots,
            length: sched.inform_slots,
            schedule: sched,
            informed_send_p: sched.informed_send_p,
            decoys_enabled: self.cfg.decoys_enabled,
        };
        let end = self.global;
        let gate = self.cfg.min_termination_round;
        for p in self.parts.iter_mut().skip(1) {
            end_of_phase(p, &ctx, end, gate);
        }
    }

    fn all_terminated(&self) -> bool {
        self.parts.iter().all(ParticipantState::is_terminated)
    }

    fn active_uninformed(&self) -> u64 {
        self.parts
            .iter()
            .skip(1)
            .filter(|p| p.is_uninformed() && !p.is_terminated())
            .count() as u64
    }

    fn run_round(&mut self, round: u32) -> Result<()> {
        let sched = round_schedule(self.cfg, round)?;
        let passes = propagation_passes(self.cfg, &sched)?;
        let slots = sched.inform_slots
            + passes.iter().map(|p| p.slots).sum::<u64>()
            + sched.request_slots;
        self.rounds.push(RoundRecord {
            round,
            slots,
            propagation_steps: sched.propagation_steps,
            replications: passes.len() as u32 / sched.propagation_steps.max(1),
            clamped: sched.clamped.clone(),
        });
        let start_uninformed = self.active_uninformed();

        let newly = self.broadcast_phase(&sched, Phase::Inform, 0, sched.inform_slots, 0.0)?;
        self.close_broadcast(&sched, Phase::Inform);
        self.relay_sets.push(RelaySetRecord {
            round,
            h: 1,
            size: newly,
            active_uninformed: start_uninformed,
        });

        for step in 1..=sched.propagation_steps {
            let phase = Phase::Propagation { step };
            let mut newly = 0;
            for pass in passes.iter().filter(|p| p.step == step) {
                newly += self.broadcast_phase(&sched, phase, pass.replication, pass.slots, pass.informed_send_p)?;
            }
            self.close_broadcast(&sched, phase);
            self.relay_sets.push(RelaySetRecord {
                round,
                h: step + 1,
                size: newly,
                active_uninformed: start_uninformed,
            });
        }

        self.request_phase(&sched)
    }
}

/// Thins `heard` of `total` events down to a uniformly chosen `keep` subset
/// and returns how many of the `heard` survive.
fn binomial_subset(rng: &mut impl Rng, heard: u64, total: u64, keep: u64) -> u64 {
    use rand_distr::Hypergeometric;
    if keep == 0 || heard == 0 {
        return 0;
    }
    Hypergeometric::new(total, heard, keep).expect("valid hypergeometric").sample(rng)
}

/// Simulates one trial of the protocol against `strategy`, seeded by
/// `cfg.seed`.
pub fn run_trial(cfg: &SimConfig, strategy: &Strategy, opts: &TrialOptions) -> Result<TrialResult> {
    let budgets = derive_budgets(cfg);
    let policy = cfg.budget_policy_correct;
    let mut parts = Vec::with_capacity(cfg.n as usize + 1);
    parts.push(ParticipantState::alice(CostLedger::new(budgets.alice_budget, policy)));
    let approx = approx_replications(cfg).map(|ell| ApproxParams {
        nu: (cfg.n as f64).powf(cfg.approx_n_mode.unwrap_or(1.0)),
        ell,
    });
    for id in 1..=cfg.n as u32 {
        let mut p = ParticipantState::node(ParticipantId(id), CostLedger::new(budgets.node_budget, policy));
        p.approx_params = approx;
        parts.push(p);
    }
    let adv = AdversaryEngine::new(cfg, strategy.clone(), &budgets)?;
    let pooled_budget = adv.pool.limit();
    let mut trial = Trial {
        cfg,
        ever_informed: vec![false; parts.len()],
        parts,
        adv,
        global: 0,
        history: HistorySummary::default(),
        phases: Vec::new(),
        relay_sets: Vec::new(),
        rounds: Vec::new(),
        trace: Vec::new(),
        trace_cap: opts.trace_cap.min(TRACE_ROW_CAP),
        reactive_table: ReactiveTable::default(),
        threshold_consistent: true,
        tally_tx: 0,
        tally_listens: 0,
        tally_jams: 0,
    };
    trial.ever_informed[0] = true;

    let mut termination = None;
    for round in cfg.i_start..cfg.i_start.saturating_add(cfg.max_rounds) {
        trial.run_round(round)?;
        if trial.all_terminated() {
            termination = Some((trial.global, round));
            break;
        }
    }

    let n = cfg.n;
    let nodes = &trial.parts[1..];
    let informed_count = trial.ever_informed[1..].iter().filter(|&&b| b).count() as u64;
    let uninformed_terminated_count = nodes
        .iter()
        .zip(&trial.ever_informed[1..])
        .filter(|(p, &inf)| p.is_terminated() && !inf)
        .count() as u64;
    let still_active = nodes
        .iter()
        .zip(&trial.ever_informed[1..])
        .filter(|(p, &inf)| !p.is_terminated() && !inf)
        .count() as u64;
    let node_costs: Vec<u64> = nodes.iter().map(|p| p.ledger.total()).collect();
    let correct_total: u64 = trial.parts.iter().map(|p| p.ledger.total()).sum();
    let adversary_cost = trial.adv.pool.total();
    let conservation_ok =
        correct_total + adversary_cost == trial.tally_tx + trial.tally_listens + trial.tally_jams;
    Ok(TrialResult {
        seed: cfg.seed,
        n,
        f: cfg.f,
        k: cfg.k,
        epsilon_prime: cfg.epsilon_prime,
        strategy: strategy.name().to_string(),
        informed_count,
        uninformed_terminated_count,
        still_active,
        alice_terminated: trial.parts[0].is_terminated(),
        max_rounds_hit: termination.is_none() && cfg.max_rounds > 0,
        empty: cfg.max_rounds == 0,
        termination_slot: termination.map(|t| t.0),
        termination_round: termination.map(|t| t.1),
        slots_simulated: trial.global,
        alice_cost: trial.parts[0].ledger.total(),
        max_node_cost: node_costs.iter().copied().max().unwrap_or(0),
        mean_node_cost: if n == 0 {
            0.0
        } else {
            node_costs.iter().sum::<u64>() as f64 / n as f64
        },
        node_budget: budgets.node_budget,
        adversary_cost,
        pooled_budget,
        budget_violations: trial.parts.iter().filter(|p| p.ledger.violated).count() as u64,
        exhausted_at: trial.adv.exhausted_at,
        phases: trial.phases,
        relay_sets: trial.relay_sets,
        rounds: trial.rounds,
        reactive_table: trial.reactive_table,
        conservation_ok,
        threshold_consistent: trial.threshold_consistent,
        approx_inflation: cfg.approx_n_mode.map(|_| approx_slot_inflation(cfg)),
        trace: trial.trace,
    })
}
