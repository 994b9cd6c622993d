//! Single-slot channel resolution: collisions, n-uniform jamming and the
//! per-listener view of a slot.

pub mod oracle;

use std::collections::{BTreeSet, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParticipantId(pub u32);

/// Alice is always participant 0.
pub const ALICE: ParticipantId = ParticipantId(0);

impl std::fmt::Display for ParticipantId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Payload {
    MessageM,
    Nack,
    Decoy,
    Garbage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transmission {
    pub sender: ParticipantId,
    pub payload: Payload,
    pub authenticated: bool,
}

impl Transmission {
    /// Only Alice can authenticate `m`; anyone else claiming to send it is
    /// sending garbage.
    pub fn new(sender: ParticipantId, payload: Payload) -> Self {
        let payload = if payload == Payload::MessageM && sender != ALICE {
            Payload::Garbage
        } else {
            payload
        };
        Transmission {
            sender,
            payload,
            authenticated: sender == ALICE && payload == Payload::MessageM,
        }
    }

    /// A correct node forwarding `m`. The signature is Alice's and travels
    /// with the message, so the copy still authenticates.
    pub fn relay(sender: ParticipantId) -> Self {
        Transmission {
            sender,
            payload: Payload::MessageM,
            authenticated: true,
        }
    }
}

/// Which listeners perceive a jam.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Targets {
    All,
    AllExcept(Arc<HashSet<ParticipantId>>),
    Only(BTreeSet<ParticipantId>),
}

impl Targets {
    pub fn contains(&self, id: ParticipantId) -> bool {
        match self {
            Targets::All => true,
            Targets::AllExcept(spared) => !spared.contains(&id),
            Targets::Only(set) => set.contains(&id),
        }
    }

    fn is_empty(&self) -> bool {
        matches!(self, Targets::Only(set) if set.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JamAction {
    pub jammer: ParticipantId,
    pub targets: Targets,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Perception {
    Silence,
    Delivered { payload: Payload, authenticated: bool },
    Noise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutcome {
    pub slot: u64,
    pub transmissions: Vec<Transmission>,
    pub jams: Vec<JamAction>,
    /// Sorted by listener id; transmitters never appear.
    pub perception: Vec<(ParticipantId, Perception)>,
}

impl SlotOutcome {
    pub fn perception_of(&self, id: ParticipantId) -> Option<Perception> {
        self.perception
            .binary_search_by_key(&id, |(l, _)| *l)
            .ok()
            .map(|i| self.perception[i].1)
    }

    /// Jammed or carrying at least one transmission.
    pub fn noisy(&self) -> bool {
        is_noisy(&self.transmissions, &self.jams)
    }
}

pub fn is_noisy(transmissions: &[Transmission], jams: &[JamAction]) -> bool {
    !transmissions.is_empty() || !jams.is_empty()
}

/// Carrier-sense flag visible to a reactive jammer before it commits: true
/// iff something is being transmitted. Payload identity never leaks.
pub fn busy_flag(transmissions: &[Transmission], _jams: &[JamAction]) -> bool {
    !transmissions.is_empty()
}

/// What `listener` hears, assuming it did not transmit.
pub fn perceive(transmissions: &[Transmission], jams: &[JamAction], listener: ParticipantId) -> Perception {
    let jammed = jams.iter().any(|j| j.targets.contains(listener));
    match (transmissions, jammed) {
        ([], false) => Perception::Silence,
        ([only], false) => Perception::Delivered {
            payload: only.payload,
            authenticated: only.authenticated,
        },
        _ => Perception::Noise,
    }
}

/// Resolves one slot for every listener that did not itself transmit.
pub fn resolve_slot(
    slot: u64,
    transmissions: &[Transmission],
    jams: &[JamAction],
    listeners: &[ParticipantId],
) -> Result<SlotOutcome> {
    let mut senders = BTreeSet::new();
    for t in transmissions {
        if !senders.insert(t.sender) {
            return Err(Error::DuplicateTransmitter(t.sender.0));
        }
    }
    for j in jams {
        if j.targets.is_empty() {
            return Err(Error::EmptyJamTargets(j.jammer.0));
        }
    }
    let listeners: BTreeSet<ParticipantId> = listeners.iter().copied().collect();
    let perception = listeners
        .into_iter()
        .filter(|l| !senders.contains(l))
        .map(|l| (l, perceive(transmissions, jams, l)))
        .collect();
    Ok(SlotOutcome {
        slot,
        transmissions: transmissions.to_vec(),
        jams: jams.to_vec(),
        perception,
    })
}
