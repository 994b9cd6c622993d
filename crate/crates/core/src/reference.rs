//! Direct slot-by-slot simulation: every participant samples every slot
//! through [`crate::protocol`] and every slot goes through
//! [`crate::channel::resolve_slot`]. Far too slow for real sizes; used to
//! cross-check the trial engine's distributions on small instances.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{classify_blocked, AdversaryEngine, HistorySummary, Observation, PhaseJamLog, Strategy};
use crate::channel::{resolve_slot, ParticipantId, Payload, Transmission, ALICE};
use crate::error::Result;
use crate::ledger::CostLedger;
use crate::params::{approx_replications, derive_budgets, propagation_passes, round_schedule, AdversaryMode, SimConfig};
use crate::protocol::{
    absorb_perception, alice_action, end_of_phase, node_action, ApproxParams, CorrectAction, ParticipantState, Phase, PhaseContext,
    UniformSampler,
};
use crate::rng::{domain, stream_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceOutcome {
    pub informed_count: u64,
    pub alice_cost: u64,
    pub max_node_cost: u64,
    pub mean_node_cost: f64,
    pub termination_round: Option<u32>,
    pub adversary_cost: u64,
    pub blocked_phase_count: u64,
}

pub fn reference_trial(cfg: &SimConfig, strategy: &Strategy) -> Result<ReferenceOutcome> {
    let budgets = derive_budgets(cfg);
    let n = cfg.n as usize;
    let mut parts = vec![ParticipantState::alice(CostLedger::new(
        budgets.alice_budget,
        cfg.budget_policy_correct,
    ))];
    let approx = approx_replications(cfg).map(|ell| ApproxParams {
        nu: (cfg.n as f64).powf(cfg.approx_n_mode.unwrap_or(1.0)),
        ell,
    });
    for id in 1..=n as u32 {
        let mut p = ParticipantState::node(
            ParticipantId(id),
            CostLedger::new(budgets.node_budget, cfg.budget_policy_correct),
        );
        p.approx_params = approx;
        parts.push(p);
    }
    let mut informed = vec![false; n + 1];
    let mut rngs: Vec<ChaCha8Rng> = (0..=n as u64)
        .map(|id| stream_rng(cfg.seed, &[domain::PARTICIPANT, id, 0xfeed]))
        .collect();
    let mut adv = AdversaryEngine::new(cfg, strategy.clone(), &budgets)?;
    let mut global = 0u64;
    let mut blocked = 0u64;
    let mut termination = None;

    for round in cfg.i_start..cfg.i_start.saturating_add(cfg.max_rounds) {
        let sched = round_schedule(cfg, round)?;
        let passes = propagation_passes(cfg, &sched)?;
        let mut plan: Vec<(Phase, u64, f64, bool)> = vec![(Phase::Inform, sched.inform_slots, sched.informed_send_p, true)];
        for (i, p) in passes.iter().enumerate() {
            let last_of_step = passes.get(i + 1).is_none_or(|q| q.step != p.step);
            plan.push((Phase::Propagation { step: p.step }, p.slots, p.informed_send_p, last_of_step));
        }
        plan.push((Phase::Request, sched.request_slots, sched.informed_send_p, true));

        for (phase, len, send_p, closes) in plan {
            let ctx = PhaseContext {
                round,
                phase,
                slot: 0,
                length: len,
                schedule: &sched,
                informed_send_p: send_p,
                decoys_enabled: cfg.decoys_enabled,
            };
            let obs = Observation {
                round,
                phase,
                phase_len: len,
                phase_start: global,
                slot: 0,
                busy: None,
                history: HistorySummary::default(),
            };
            let range_jams = adv.begin_phase(&obs).planned_jams();
            let mut reactive_jams = 0u64;
            let mut jammed_active = 0u64;
            for slot in 0..len {
                let mut ctx = ctx;
                ctx.slot = slot;
                let mut tx = Vec::new();
                let mut listeners = Vec::new();
                for id in 0..=n {
                    if parts[id].is_terminated() {
                        continue;
                    }
                    let mut sampler = UniformSampler(&mut rngs[id]);
                    let act = if id == 0 {
                        alice_action(&mut parts[id], &ctx, &mut sampler)
                    } else {
                        node_action(&mut parts[id], &ctx, &mut sampler)
                    };
                    let pid = ParticipantId(id as u32);
                    match act {
                        CorrectAction::Idle => {}
                        CorrectAction::Listen => listeners.push(pid),
                        CorrectAction::Send(Payload::MessageM) if id != 0 => tx.push(Transmission::relay(pid)),
                        CorrectAction::Send(p) => tx.push(Transmission::new(pid, p)),
                    }
                }
                let mut o = obs;
                o.slot = slot;
                if cfg.adversary_mode == AdversaryMode::Reactive {
                    o.busy = Some(!tx.is_empty());
                }
                let had_range = adv.current_plan().jams.iter().any(|r| (r.start..r.end).contains(&slot));
                let adv_slot = adv.plan_slot(&o);
                if !had_range && !adv_slot.jams.is_empty() {
                    reactive_jams += 1;
                }
                let active = tx
                    .iter()
                    .any(|t| t.payload == Payload::Decoy || (t.payload == Payload::MessageM && t.authenticated));
                if active && !adv_slot.jams.is_empty() {
                    jammed_active += 1;
                }
                tx.extend(adv_slot.transmissions);
                let out = resolve_slot(slot, &tx, &adv_slot.jams, &listeners)?;
                for (id, perception) in out.perception {
                    if absorb_perception(&mut parts[id.0 as usize], &ctx, perception) {
                        informed[id.0 as usize] = true;
                    }
                }
            }
            let log = PhaseJamLog {
                round,
                phase,
                length: len,
                jammed: range_jams + reactive_jams,
                jammed_active,
                complete: true,
            };
            if classify_blocked(&log, cfg)? {
                blocked += 1;
            }
            global += len;
            if closes {
                let mut end_ctx = ctx;
                end_ctx.slot = len;
                for p in parts.iter_mut() {
                    if phase != Phase::Request && p.id == ALICE {
                        continue;
                    }
                    end_of_phase(p, &end_ctx, global, cfg.min_termination_round);
                }
            }
        }
        if parts.iter().all(ParticipantState::is_terminated) {
            termination = Some(round);
            break;
        }
    }

    let node_costs: Vec<u64> = parts[1..].iter().map(|p| p.ledger.total()).collect();
    Ok(ReferenceOutcome {
        informed_count: informed[1..].iter().filter(|&&b| b).count() as u64,
        alice_cost: parts[0].ledger.total(),
        max_node_cost: node_costs.iter().copied().max().unwrap_or(0),
        mean_node_cost: node_costs.iter().sum::<u64>() as f64 / n.max(1) as f64,
        termination_round: termination,
        adversary_cost: adv.pool.total(),
        blocked_phase_count: blocked,
    })
}
