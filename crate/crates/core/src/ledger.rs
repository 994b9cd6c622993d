use serde::{Deserialize, Serialize};

use crate::params::BudgetPolicy;

/// Unit-cost channel actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Send,
    Listen,
    Jam,
}

/// Returned when an enforced ledger refuses a charge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Exhausted;

impl std::fmt::Display for Exhausted {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("exhausted")
    }
}

impl std::error::Error for Exhausted {}

/// Per-participant energy account.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub sends: u64,
    pub listens: u64,
    pub jams: u64,
    pub limit: u64,
    pub policy: BudgetPolicy,
    pub violated: bool,
}

impl CostLedger {
    pub fn new(limit: u64, policy: BudgetPolicy) -> Self {
        CostLedger {
            sends: 0,
            listens: 0,
            jams: 0,
            limit,
            policy,
            violated: false,
        }
    }

    pub fn total(&self) -> u64 {
        self.sends + self.listens + self.jams
    }

    pub fn remaining(&self) -> u64 {
        self.limit.saturating_sub(self.total())
    }

    /// Charges one unit. Under [`BudgetPolicy::Enforce`] a charge that would
    /// exceed the limit is refused and the ledger is left unchanged.
    pub fn charge(&mut self, action: Action) -> Result<(), Exhausted> {
        if self.policy == BudgetPolicy::Enforce && self.total() >= self.limit {
            return Err(Exhausted);
        }
        match action {
            Action::Send => self.sends += 1,
            Action::Listen => self.listens += 1,
            Action::Jam => self.jams += 1,
        }
        if self.total() > self.limit {
            self.violated = true;
        }
        Ok(())
    }

    /// Charges up to `count` units of one action and returns how many were
    /// accepted. Record-only ledgers accept all of them.
    pub fn charge_many(&mut self, action: Action, count: u64) -> u64 {
        let accepted = match self.policy {
            BudgetPolicy::Enforce => count.min(self.remaining()),
            BudgetPolicy::RecordOnly => count,
        };
        match action {
            Action::Send => self.sends += accepted,
            Action::Listen => self.listens += accepted,
            Action::Jam => self.jams += accepted,
        }
        if self.total() > self.limit {
            self.violated = true;
        }
        accepted
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_send() {
        let mut l = CostLedger::new(2, BudgetPolicy::RecordOnly);
        l.charge(Action::Send).unwrap();
        assert_eq!((l.sends, l.total(), l.violated), (1, 1, false));
    }

    #[test]
    fn record_only_flags_overrun() {
        let mut l = CostLedger::new(160, BudgetPolicy::RecordOnly);
        l.listens = 160;
        l.charge(Action::Listen).unwrap();
        assert_eq!(l.total(), 161);
        assert!(l.violated);
    }

    #[test]
    fn enforce_refuses_overrun() {
        let mut l = CostLedger::new(160, BudgetPolicy::Enforce);
        l.jams = 160;
        let before = l.clone();
        assert_eq!(l.charge(Action::Jam), Err(Exhausted));
        assert_eq!(l, before);
    }

    #[test]
    fn bulk_charge_stops_at_limit() {
        let mut l = CostLedger::new(10, BudgetPolicy::Enforce);
        assert_eq!(l.charge_many(Action::Listen, 7), 7);
        assert_eq!(l.charge_many(Action::Send, 7), 3);
        assert_eq!(l.total(), 10);
        assert!(!l.violated);
        let mut r = CostLedger::new(10, BudgetPolicy::RecordOnly);
        assert_eq!(r.charge_many(Action::Listen, 11), 11);
        assert!(r.violated);
    }

    #[test]
    fn each_charge_adds_one() {
        let mut l = CostLedger::new(5, BudgetPolicy::RecordOnly);
        for (i, a) in [Action::Send, Action::Jam, Action::Listen, Action::Listen, Action::Send, Action::Jam]
            .into_iter()
            .enumerate()
        {
            l.charge(a).unwrap();
            assert_eq!(l.total(), i as u64 + 1);
            assert_eq!(l.violated, l.total() > 5);
        }
    }
}
