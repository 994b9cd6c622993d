//! Exhaustive truth-table check of slot resolution on micro-instances.
//!
//! Each of up to three participants picks one raw choice (idle, listen, send
//! `m`, send `nack`, jam everyone, jam one named peer). Participant 0 plays
//! Alice. The expected perception of every listener is read off a fixed
//! table indexed by (transmitter count, jammed-for-me), written without
//! reference to the resolver under test.

use std::collections::BTreeSet;

use super::{JamAction, ParticipantId, Payload, Perception, SlotOutcome, Targets, Transmission};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MicroAction {
    Idle,
    Listen,
    SendM,
    SendNack,
    JamAll,
    JamOne(u32),
}

/// Signature shared by [`super::resolve_slot`] and the fault-injected variant.
pub type Resolver = fn(u64, &[Transmission], &[JamAction], &[ParticipantId]) -> Result<SlotOutcome>;

#[derive(Debug, Clone, Default)]
pub struct OracleReport {
    pub cases: usize,
    pub mismatches: Vec<String>,
}

/// Every choice vector for `participants` players.
pub fn enumerate(participants: u32) -> Vec<Vec<MicroAction>> {
    let choices = |me: u32| -> Vec<MicroAction> {
        let mut v = vec![
            MicroAction::Idle,
            MicroAction::Listen,
            MicroAction::SendM,
            MicroAction::SendNack,
            MicroAction::JamAll,
        ];
        v.extend((0..participants).filter(|&x| x != me).map(MicroAction::JamOne));
        v
    };
    let mut cases: Vec<Vec<MicroAction>> = vec![vec![]];
    for me in 0..participants {
        let mut next = Vec::new();
        for prefix in &cases {
            for ch in choices(me) {
                let mut v = prefix.clone();
                v.push(ch);
                next.push(v);
            }
        }
        cases = next;
    }
    cases
}

// (transmitters in slot, jammed for me) -> expected class
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Expect {
    Silence,
    DeliverTheOne,
    Noise,
}

const TRUTH_TABLE: [((u8, bool), Expect); 6] = [
    ((0, false), Expect::Silence),
    ((0, true), Expect::Noise),
    ((1, false), Expect::DeliverTheOne),
    ((1, true), Expect::Noise),
    ((2, false), Expect::Noise),
    ((2, true), Expect::Noise),
];

fn lookup(tx: usize, jammed: bool) -> Expect {
    let bucket = tx.min(2) as u8;
    TRUTH_TABLE
        .iter()
        .find(|((t, j), _)| *t == bucket && *j == jammed)
        .map(|(_, e)| *e)
        .expect("table covers every bucket")
}

/// Expected perception for every listening participant.
pub fn expected(case: &[MicroAction]) -> Vec<(ParticipantId, Perception)> {
    let sending: Vec<(u32, MicroAction)> = case
        .iter()
        .enumerate()
        .filter(|(_, a)| matches!(a, MicroAction::SendM | MicroAction::SendNack))
        .map(|(i, a)| (i as u32, *a))
        .collect();
    let mut out = Vec::new();
    for (me, a) in case.iter().enumerate() {
        if *a != MicroAction::Listen {
            continue;
        }
        let me = me as u32;
        let jammed = case
            .iter()
            .any(|a| *a == MicroAction::JamAll || *a == MicroAction::JamOne(me));
        let p = match lookup(sending.len(), jammed) {
            Expect::Silence => Perception::Silence,
            Expect::Noise => Perception::Noise,
            Expect::DeliverTheOne => {
                let (who, what) = sending[0];
                match (who, what) {
                    (0, MicroAction::SendM) => Perception::Delivered {
                        payload: Payload::MessageM,
                        authenticated: true,
                    },
                    (_, MicroAction::SendM) => Perception::Delivered {
                        payload: Payload::Garbage,
                        authenticated: false,
                    },
                    _ => Perception::Delivered {
                        payload: Payload::Nack,
                        authenticated: false,
                    },
                }
            }
        };
        out.push((ParticipantId(me), p));
    }
    out
}

/// Translates a choice vector into resolver inputs.
pub fn to_inputs(case: &[MicroAction]) -> (Vec<Transmission>, Vec<JamAction>, Vec<ParticipantId>) {
    let mut tx = Vec::new();
    let mut jams = Vec::new();
    let mut listeners = Vec::new();
    for (i, a) in case.iter().enumerate() {
        let id = ParticipantId(i as u32);
        match a {
            MicroAction::Idle => {}
            MicroAction::Listen => listeners.push(id),
            MicroAction::SendM => tx.push(Transmission::new(id, Payload::MessageM)),
            MicroAction::SendNack => tx.push(Transmission::new(id, Payload::Nack)),
            MicroAction::JamAll => jams.push(JamAction { jammer: id, targets: Targets::All }),
            MicroAction::JamOne(x) => jams.push(JamAction {
                jammer: id,
                targets: Targets::Only(BTreeSet::from([ParticipantId(*x)])),
            }),
        }
    }
    (tx, jams, listeners)
}

/// Runs the full enumeration for `participants` (1..=3) against `resolver`.
pub fn check(resolver: Resolver, participants: u32) -> OracleReport {
    let mut report = OracleReport::default();
    for case in enumerate(participants) {
        report.cases += 1;
        let (tx, jams, listeners) = to_inputs(&case);
        let want = expected(&case);
        match resolver(0, &tx, &jams, &listeners) {
            Ok(out) => {
                let want_noisy = case.iter().any(|a| {
                    matches!(
                        a,
                        MicroAction::SendM | MicroAction::SendNack | MicroAction::JamAll | MicroAction::JamOne(_)
                    )
                });
                if out.perception != want || out.noisy() != want_noisy {
                    report.mismatches.push(format!(
                        "{case:?}: expected {want:?} (noisy {want_noisy}), got {:?} (noisy {})",
                        out.perception,
                        out.noisy()
                    ));
                }
            }
            Err(e) => report.mismatches.push(format!("{case:?}: resolver error {e}")),
        }
    }
    report
}

/// Negative control: a resolver that lets a lone transmission through a jam.
pub fn faulty_resolve_slot(
    slot: u64,
    transmissions: &[Transmission],
    jams: &[JamAction],
    listeners: &[ParticipantId],
) -> Result<SlotOutcome> {
    let mut out = super::resolve_slot(slot, transmissions, jams, listeners)?;
    if let [only] = transmissions {
        for (_, p) in out.perception.iter_mut() {
            *p = Perception::Delivered {
                payload: only.payload,
                authenticated: only.authenticated,
            };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_counts() {
        assert_eq!(enumerate(1).len(), 5);
        assert_eq!(enumerate(2).len(), 36);
        assert_eq!(enumerate(3).len(), 343);
    }

    #[test]
    fn resolver_matches_table() {
        for p in 1..=3 {
            let r = check(super::super::resolve_slot, p);
            assert!(r.mismatches.is_empty(), "{:?}", &r.mismatches[..r.mismatches.len().min(3)]);
        }
    }

    #[test]
    fn negative_control_is_caught() {
        let r = check(faulty_resolve_slot, 3);
        assert!(!r.mismatches.is_empty());
    }
}
