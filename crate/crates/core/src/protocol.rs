//! Per-slot behavior of Alice and the correct nodes, and their per-phase
//! state transitions.
//!
//! Randomness enters only through a [`Sampler`], which answers "does the
//! Bernoulli(p) draw of this kind fire in the current slot". Inside a slot
//! the send draw is taken first; the listen draw is only consulted if no
//! send fired, and the decoy draw only if the participant would otherwise
//! stay idle.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{ParticipantId, Payload, Perception};
use crate::ledger::{Action, CostLedger};
use crate::params::RoundSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Alice,
    CorrectNode,
    ByzantineNode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Uninformed,
    /// `step` is 0 for the inform phase, `h` for propagation step `h`.
    Informed { round: u32, step: u32 },
    Terminated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Inform,
    Propagation { step: u32 },
    Request,
}

impl Phase {
    pub fn label(&self) -> String {
        match self {
            Phase::Inform => "inform".into(),
            Phase::Propagation { step } => format!("propagation{step}"),
            Phase::Request => "request".into(),
        }
    }

    /// Stable numeric code for seed derivation.
    pub fn code(&self) -> u64 {
        match self {
            Phase::Inform => 0,
            Phase::Propagation { step } => *step as u64,
            Phase::Request => 1 << 20,
        }
    }
}

/// Unknown-`n` parameters held by each node: `nu = n^c'`, `ell = ceil(c ln nu)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproxParams {
    pub nu: f64,
    pub ell: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantState {
    pub id: ParticipantId,
    pub role: Role,
    pub status: Status,
    /// Relays `m` in the current propagation step.
    pub sender_duty: bool,
    /// Became informed during the phase in progress.
    pub newly_informed: bool,
    /// Noisy slots heard in the current request phase.
    pub noisy_heard: u32,
    pub ledger: CostLedger,
    pub approx_params: Option<ApproxParams>,
    /// Global slot index at which the participant terminated.
    pub terminated_at: Option<u64>,
}

impl ParticipantState {
    pub fn alice(ledger: CostLedger) -> Self {
        Self::with_role(crate::channel::ALICE, Role::Alice, Status::Informed { round: 0, step: 0 }, ledger)
    }

    pub fn node(id: ParticipantId, ledger: CostLedger) -> Self {
        Self::with_role(id, Role::CorrectNode, Status::Uninformed, ledger)
    }

    fn with_role(id: ParticipantId, role: Role, status: Status, ledger: CostLedger) -> Self {
        ParticipantState {
            id,
            role,
            status,
            sender_duty: false,
            newly_informed: false,
            noisy_heard: 0,
            ledger,
            approx_params: None,
            terminated_at: None,
        }
    }

    pub fn is_terminated(&self) -> bool {
        self.status == Status::Terminated
    }

    pub fn is_uninformed(&self) -> bool {
        self.status == Status::Uninformed
    }

    pub fn is_informed(&self) -> bool {
        matches!(self.status, Status::Informed { .. })
    }
}

/// Where in a round a slot sits.
#[derive(Debug, Clone, Copy)]
pub struct PhaseContext<'a> {
    pub round: u32,
    pub phase: Phase,
    pub slot: u64,
    pub length: u64,
    pub schedule: &'a RoundSchedule,
    /// Relay probability for this propagation pass (`1/n`, or the
    /// unknown-`n` replacement).
    pub informed_send_p: f64,
    pub decoys_enabled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DrawKind {
    Send,
    Listen,
    Decoy,
}

/// Source of per-slot Bernoulli outcomes.
pub trait Sampler {
    fn fires(&mut self, kind: DrawKind, p: f64) -> bool;
}

/// One fresh uniform per query: fires iff `u < p`.
pub struct UniformSampler<'r, R: Rng>(pub &'r mut R);

impl<R: Rng> Sampler for UniformSampler<'_, R> {
    fn fires(&mut self, _kind: DrawKind, p: f64) -> bool {
        crate::rng::uniform(self.0) < p
    }
}

/// Replays a fixed list of uniforms in query order.
pub struct FixedDraws(pub std::collections::VecDeque<f64>);

impl FixedDraws {
    pub fn new(draws: &[f64]) -> Self {
        FixedDraws(draws.iter().copied().collect())
    }
}

impl Sampler for FixedDraws {
    fn fires(&mut self, _kind: DrawKind, p: f64) -> bool {
        let u = self.0.pop_front().expect("ran out of scripted draws");
        u < p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrectAction {
    Idle,
    Listen,
    Send(Payload),
}

fn charged(ledger: &mut CostLedger, action: CorrectAction) -> CorrectAction {
    let unit = match action {
        CorrectAction::Idle => return action,
        CorrectAction::Listen => Action::Listen,
        CorrectAction::Send(_) => Action::Send,
    };
    match ledger.charge(unit) {
        Ok(()) => action,
        Err(_) => CorrectAction::Idle,
    }
}

/// Alice: sends `m` during inform, sleeps through propagation, listens for
/// complaints during request.
pub fn alice_action(state: &mut ParticipantState, ctx: &PhaseContext<'_>, sampler: &mut impl Sampler) -> CorrectAction {
    if state.is_terminated() {
        return CorrectAction::Idle;
    }
    let s = ctx.schedule;
    let action = match ctx.phase {
        Phase::Inform if sampler.fires(DrawKind::Send, s.alice_send_p) => CorrectAction::Send(Payload::MessageM),
        Phase::Request if sampler.fires(DrawKind::Listen, s.alice_request_listen_p) => CorrectAction::Listen,
        _ => CorrectAction::Idle,
    };
    charged(&mut state.ledger, action)
}

/// A correct node's action for one slot.
pub fn node_action(state: &mut ParticipantState, ctx: &PhaseContext<'_>, sampler: &mut impl Sampler) -> CorrectAction {
    if state.is_terminated() {
        return CorrectAction::Idle;
    }
    let s = ctx.schedule;
    let uninformed = state.is_uninformed();
    let mut action = match ctx.phase {
        Phase::Inform => {
            if uninformed && sampler.fires(DrawKind::Listen, s.node_inform_listen_p) {
                CorrectAction::Listen
            } else {
                CorrectAction::Idle
            }
        }
        Phase::Propagation { .. } => {
            if state.sender_duty {
                if sampler.fires(DrawKind::Send, ctx.informed_send_p) {
                    CorrectAction::Send(Payload::MessageM)
                } else {
                    CorrectAction::Idle
                }
            } else if uninformed && sampler.fires(DrawKind::Listen, s.node_prop_listen_p) {
                CorrectAction::Listen
            } else {
                CorrectAction::Idle
            }
        }
        Phase::Request => {
            if !uninformed {
                CorrectAction::Idle
            } else if sampler.fires(DrawKind::Send, s.nack_send_p) {
                CorrectAction::Send(Payload::Nack)
            } else if sampler.fires(DrawKind::Listen, s.node_request_listen_p) {
                CorrectAction::Listen
            } else {
                CorrectAction::Idle
            }
        }
    };
    if action == CorrectAction::Idle
        && ctx.decoys_enabled
        && ctx.phase != Phase::Request
        && sampler.fires(DrawKind::Decoy, s.decoy_send_p)
    {
        action = CorrectAction::Send(Payload::Decoy);
    }
    charged(&mut state.ledger, action)
}

/// Applies what a listener heard. Returns true if the participant became
/// informed.
pub fn absorb_perception(state: &mut ParticipantState, ctx: &PhaseContext<'_>, perception: Perception) -> bool {
    if state.is_terminated() {
        return false;
    }
    // an unauthenticated copy of m is tampering and reads as noise
    let perception = match perception {
        Perception::Delivered {
            payload: Payload::MessageM,
            authenticated: false,
        } => Perception::Noise,
        p => p,
    };
    if ctx.phase == Phase::Request && perception != Perception::Silence {
        state.noisy_heard += 1;
    }
    if let Perception::Delivered {
        payload: Payload::MessageM,
        authenticated: true,
    } = perception
    {
        if state.role == Role::CorrectNode && state.is_uninformed() {
            let step = match ctx.phase {
                Phase::Propagation { step } => step,
                _ => 0,
            };
            state.status = Status::Informed { round: ctx.round, step };
            state.newly_informed = true;
            return true;
        }
    }
    false
}

/// Phase-boundary transitions. `global_slot` is the index just past the
/// phase; `min_termination_round` gates request-phase termination.
pub fn end_of_phase(state: &mut ParticipantState, ctx: &PhaseContext<'_>, global_slot: u64, min_termination_round: u32) {
    if state.is_terminated() {
        return;
    }
    let mut terminate = false;
    match ctx.phase {
        Phase::Inform => {
            if state.newly_informed {
                state.sender_duty = true;
            }
        }
        Phase::Propagation { step } => {
            if state.sender_duty {
                state.sender_duty = false;
                terminate = true;
            }
            if state.newly_informed {
                if step < ctx.schedule.propagation_steps {
                    state.sender_duty = true;
                } else {
                    terminate = true;
                }
            }
        }
        Phase::Request => {
            let eligible = state.role == Role::Alice || state.is_uninformed();
            if eligible
                && ctx.round >= min_termination_round
                && (state.noisy_heard as f64) <= ctx.schedule.termination_threshold
            {
                terminate = true;
            }
            state.noisy_heard = 0;
        }
    }
    state.newly_informed = false;
    if terminate {
        state.status = Status::Terminated;
        state.sender_duty = false;
        state.terminated_at = Some(global_slot);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{round_schedule, validate_config, BudgetPolicy, SimConfig};

    fn cfg(extra: &[(&str, &str)]) -> SimConfig {
        let mut raw = crate::params::default_raw();
        raw.remove("trials");
        raw.remove("adversary.strategy");
        for (k, v) in extra {
            raw.insert(k.to_string(), v.to_string());
        }
        validate_config(&raw).unwrap()
    }

    fn ledger() -> CostLedger {
        CostLedger::new(1_000_000, BudgetPolicy::RecordOnly)
    }

    fn ctx<'a>(s: &'a RoundSchedule, phase: Phase) -> PhaseContext<'a> {
        PhaseContext {
            round: s.round,
            phase,
            slot: 0,
            length: s.inform_slots,
            schedule: s,
            informed_send_p: s.informed_send_p,
            decoys_enabled: false,
        }
    }

    #[test]
    fn alice_idles_in_propagation() {
        let c = cfg(&[]);
        let s = round_schedule(&c, 10).unwrap();
        let mut a = ParticipantState::alice(ledger());
        let act = alice_action(&mut a, &ctx(&s, Phase::Propagation { step: 1 }), &mut FixedDraws::new(&[0.0; 4]));
        assert_eq!(act, CorrectAction::Idle);
        assert_eq!(a.ledger.total(), 0);
    }

    #[test]
    fn alice_send_threshold() {
        let c = cfg(&[("n", "1024")]);
        let s = round_schedule(&c, 10).unwrap();
        let mut a = ParticipantState::alice(ledger());
        let act = alice_action(&mut a, &ctx(&s, Phase::Inform), &mut FixedDraws::new(&[0.010]));
        assert_eq!(act, CorrectAction::Send(Payload::MessageM));
        assert_eq!(a.ledger.sends, 1);
        let act = alice_action(&mut a, &ctx(&s, Phase::Inform), &mut FixedDraws::new(&[0.014]));
        assert_eq!(act, CorrectAction::Idle);
    }

    #[test]
    fn alice_request_upper_boundary() {
        let c = cfg(&[]);
        let s = round_schedule(&c, 12).unwrap();
        let mut a = ParticipantState::alice(ledger());
        let draw = 1.0 - f64::EPSILON / 2.0;
        let act = alice_action(&mut a, &ctx(&s, Phase::Request), &mut FixedDraws::new(&[draw]));
        assert_eq!(act, CorrectAction::Idle);
    }

    #[test]
    fn uninformed_inform_listen() {
        let c = cfg(&[("epsilon_prime", "0.05")]);
        let s = round_schedule(&c, 10).unwrap();
        // 2/(0.05 * 1024) = 0.039
        let mut u = ParticipantState::node(ParticipantId(1), ledger());
        let act = node_action(&mut u, &ctx(&s, Phase::Inform), &mut FixedDraws::new(&[0.02]));
        assert_eq!(act, CorrectAction::Listen);
        assert_eq!(u.ledger.listens, 1);
    }

    #[test]
    fn duty_node_relays() {
        let c = cfg(&[("n", "1024")]);
        let s = round_schedule(&c, 10).unwrap();
        let mut u = ParticipantState::node(ParticipantId(1), ledger());
        u.status = Status::Informed { round: 10, step: 0 };
        u.sender_duty = true;
        let act = node_action(&mut u, &ctx(&s, Phase::Propagation { step: 1 }), &mut FixedDraws::new(&[0.0005]));
        assert_eq!(act, CorrectAction::Send(Payload::MessageM));
    }

    #[test]
    fn terminated_is_absorbing() {
        let c = cfg(&[]);
        let s = round_schedule(&c, 3).unwrap();
        let mut u = ParticipantState::node(ParticipantId(1), ledger());
        u.status = Status::Terminated;
        for phase in [Phase::Inform, Phase::Propagation { step: 1 }, Phase::Request] {
            let act = node_action(&mut u, &ctx(&s, phase), &mut FixedDraws::new(&[]));
            assert_eq!(act, CorrectAction::Idle);
            let m = Perception::Delivered { payload: Payload::MessageM, authenticated: true };
            assert!(!absorb_perception(&mut u, &ctx(&s, phase), m));
            end_of_phase(&mut u, &ctx(&s, phase), 0, 0);
        }
        assert_eq!(u.status, Status::Terminated);
        assert_eq!(u.ledger.total(), 0);
    }

    #[test]
    fn nack_skips_listen_draw() {
        let c = cfg(&[("n", "4")]);
        let s = round_schedule(&c, 2).unwrap();
        let mut u = ParticipantState::node(ParticipantId(1), ledger());
        // a single draw is consumed: the send fires, listen is never sampled
        let mut draws = FixedDraws::new(&[0.1]);
        let act = node_action(&mut u, &ctx(&s, Phase::Request), &mut draws);
        assert_eq!(act, CorrectAction::Send(Payload::Nack));
        assert!(draws.0.is_empty());
        assert_eq!((u.ledger.sends, u.ledger.listens), (1, 0));
    }

    #[test]
    fn decoy_only_when_idle() {
        let c = cfg(&[("decoys_enabled", "true"), ("epsilon_prime", "0.5"), ("n", "4")]);
        let s = round_schedule(&c, 12).unwrap();
        let mut cx = ctx(&s, Phase::Inform);
        cx.decoys_enabled = true;
        let mut u = ParticipantState::node(ParticipantId(1), ledger());
        u.status = Status::Informed { round: 1, step: 0 };
        let act = node_action(&mut u, &cx, &mut FixedDraws::new(&[0.0]));
        assert_eq!(act, CorrectAction::Send(Payload::Decoy));
        let mut r = cx;
        r.phase = Phase::Request;
        assert_eq!(node_action(&mut u, &r, &mut FixedDraws::new(&[])), CorrectAction::Idle);
    }

    #[test]
    fn enforce_turns_refusal_into_idle() {
        let c = cfg(&[]);
        let s = round_schedule(&c, 1).unwrap();
        let mut u = ParticipantState::node(ParticipantId(1), CostLedger::new(0, BudgetPolicy::Enforce));
        let act = node_action(&mut u, &ctx(&s, Phase::Inform), &mut FixedDraws::new(&[0.0]));
        assert_eq!(act, CorrectAction::Idle);
        assert_eq!(u.ledger.total(), 0);
    }

    #[test]
    fn informed_by_authenticated_m_only() {
        let c = cfg(&[]);
        let s = round_schedule(&c, 3).unwrap();
        let cx = ctx(&s, Phase::Inform);
        let mut u = ParticipantState::node(ParticipantId(1), ledger());
        for p in [Payload::Decoy, Payload::Garbage, Payload::Nack] {
            assert!(!absorb_perception(&mut u, &cx, Perception::Delivered { payload: p, authenticated: false }));
        }
        assert!(!absorb_perception(
            &mut u,
            &cx,
            Perception::Delivered { payload: Payload::MessageM, authenticated: false }
        ));
        assert!(u.is_uninformed());
        assert!(absorb_perception(
            &mut u,
            &cx,
            Perception::Delivered { payload: Payload::MessageM, authenticated: true }
        ));
        assert_eq!(u.status, Status::Informed { round: 3, step: 0 });
    }

    #[test]
    fn alice_counts_nacks() {
        let c = cfg(&[]);
        let s = round_schedule(&c, 3).unwrap();
        let mut a = ParticipantState::alice(ledger());
        absorb_perception(
            &mut a,
            &ctx(&s, Phase::Request),
            Perception::Delivered { payload: Payload::Nack, authenticated: false },
        );
        assert_eq!(a.noisy_heard, 1);
        absorb_perception(&mut a, &ctx(&s, Phase::Request), Perception::Silence);
        assert_eq!(a.noisy_heard, 1);
    }

    #[test]
    fn relay_set_terminates_after_its_step() {
        let c = cfg(&[("k", "2")]);
        let s = round_schedule(&c, 4).unwrap();
        let mut u = ParticipantState::node(ParticipantId(1), ledger());
        let m = Perception::Delivered { payload: Payload::MessageM, authenticated: true };
        absorb_perception(&mut u, &ctx(&s, Phase::Inform), m);
        end_of_phase(&mut u, &ctx(&s, Phase::Inform), 64, 1);
        assert!(u.sender_duty);
        end_of_phase(&mut u, &ctx(&s, Phase::Propagation { step: 1 }), 128, 1);
        assert_eq!(u.status, Status::Terminated);
        assert_eq!(u.terminated_at, Some(128));
    }

    #[test]
    fn general_k_duty_chain() {
        let c = cfg(&[("k", "3")]);
        let s = round_schedule(&c, 6).unwrap();
        let m = Perception::Delivered { payload: Payload::MessageM, authenticated: true };
        let mut u = ParticipantState::node(ParticipantId(1), ledger());
        absorb_perception(&mut u, &ctx(&s, Phase::Propagation { step: 1 }), m);
        end_of_phase(&mut u, &ctx(&s, Phase::Propagation { step: 1 }), 0, 1);
        assert!(u.sender_duty && u.is_informed());
        end_of_phase(&mut u, &ctx(&s, Phase::Propagation { step: 2 }), 0, 1);
        assert!(u.is_terminated());
        // informed in the last step: no duty, straight to terminated
        let mut v = ParticipantState::node(ParticipantId(2), ledger());
        absorb_perception(&mut v, &ctx(&s, Phase::Propagation { step: 2 }), m);
        end_of_phase(&mut v, &ctx(&s, Phase::Propagation { step: 2 }), 0, 1);
        assert!(v.is_terminated());
    }

    #[test]
    fn request_threshold() {
        let c = cfg(&[("c", "4"), ("n", "1024")]);
        let s = round_schedule(&c, 10).unwrap();
        // 5 * 4 * ln 1024 = 138.63
        let mut u = ParticipantState::node(ParticipantId(1), ledger());
        u.noisy_heard = 100;
        end_of_phase(&mut u, &ctx(&s, Phase::Request), 0, 1);
        assert!(u.is_terminated());
        let mut a = ParticipantState::alice(ledger());
        a.noisy_heard = 139;
        end_of_phase(&mut a, &ctx(&s, Phase::Request), 0, 1);
        assert!(!a.is_terminated());
        assert_eq!(a.noisy_heard, 0);
        let mut b = ParticipantState::alice(ledger());
        b.noisy_heard = 138;
        end_of_phase(&mut b, &ctx(&s, Phase::Request), 0, 1);
        assert!(b.is_terminated());
    }

    #[test]
    fn termination_gate_holds_early_rounds() {
        let c = cfg(&[]);
        let s = round_schedule(&c, 2).unwrap();
        let mut a = ParticipantState::alice(ledger());
        end_of_phase(&mut a, &ctx(&s, Phase::Request), 0, 9);
        assert!(!a.is_terminated());
    }
}
