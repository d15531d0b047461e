//! Dispatch policies for a proxy cluster fronting the UAS.
//!
//! A new call is pinned to one cluster member at arrival and every later
//! message of the call follows it there. The policies differ only in the
//! load figure they minimize at dispatch time. Ties go to the lowest index,
//! which keeps every decision replayable from a logged snapshot.

use std::collections::HashMap;

use crate::ids::{CallId, Seconds, ServerId};
use crate::sip::message::MsgKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BalancerPolicy {
    /// Fewest active calls.
    Cjsq,
    /// Fewest active transactions.
    Tjsq,
    /// Least weighted work left.
    Tlwl,
}

impl BalancerPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            BalancerPolicy::Cjsq => "cjsq",
            BalancerPolicy::Tjsq => "tjsq",
            BalancerPolicy::Tlwl => "tlwl",
        }
    }
}

/// Per-transaction-type service weights used by TLWL.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransactionCosts {
    pub invite: f64,
    pub bye: f64,
}

impl Default for TransactionCosts {
    fn default() -> Self {
        TransactionCosts {
            invite: 2.0,
            bye: 1.0,
        }
    }
}

impl TransactionCosts {
    fn cost(&self, kind: MsgKind) -> f64 {
        match kind {
            MsgKind::Invite => self.invite,
            MsgKind::Bye => self.bye,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MemberLoad {
    pub active_calls: u64,
    pub active_transactions: u64,
    pub work_left: f64,
}

/// One logged dispatch decision: the load figure each member showed, who was
/// eligible, and the index that won. Enough to re-run the argmin offline.
#[derive(Debug, Clone)]
pub struct DispatchRecord {
    pub at: Seconds,
    pub call: CallId,
    pub chosen: usize,
    pub metrics: Vec<f64>,
    pub eligible: Vec<bool>,
}

pub struct Balancer {
    policy: BalancerPolicy,
    costs: TransactionCosts,
    members: Vec<ServerId>,
    load: Vec<MemberLoad>,
    affinity: HashMap<CallId, usize>,
    pub records: Vec<DispatchRecord>,
    pub record_decisions: bool,
}

impl Balancer {
    pub fn new(policy: BalancerPolicy, costs: TransactionCosts, members: Vec<ServerId>) -> Self {
        assert!(!members.is_empty(), "balancer needs at least one member");
        let n = members.len();
        Balancer {
            policy,
            costs,
            members,
            load: vec![MemberLoad::default(); n],
            affinity: HashMap::new(),
            records: Vec::new(),
            record_decisions: false,
        }
    }

    pub fn members(&self) -> &[ServerId] {
        &self.members
    }

    pub fn load(&self, idx: usize) -> MemberLoad {
        self.load[idx]
    }

    fn metric(&self, idx: usize) -> f64 {
        let l = &self.load[idx];
        match self.policy {
            BalancerPolicy::Cjsq => l.active_calls as f64,
            BalancerPolicy::Tjsq => l.active_transactions as f64,
            BalancerPolicy::Tlwl => l.work_left,
        }
    }

    /// Pick a member for a fresh call. `eligible[i] = false` excludes member
    /// i (e.g. it asked upstream to back off); if that excludes everyone the
    /// mask is ignored rather than stranding the call.
    pub fn dispatch(&mut self, at: Seconds, call: CallId, eligible: &[bool]) -> ServerId {
        debug_assert_eq!(eligible.len(), self.members.len());
        let any_eligible = eligible.iter().any(|&e| e);
        let mut best: Option<usize> = None;
        let metrics: Vec<f64> = (0..self.members.len()).map(|i| self.metric(i)).collect();
        for i in 0..self.members.len() {
            if any_eligible && !eligible[i] {
                continue;
            }
            match best {
                None => best = Some(i),
                Some(b) if metrics[i] < metrics[b] => best = Some(i),
                _ => {}
            }
        }
        let chosen = best.expect("non-empty member set");
        if self.record_decisions {
            self.records.push(DispatchRecord {
                at,
                call,
                chosen,
                metrics,
                eligible: eligible.to_vec(),
            });
        }
        self.affinity.insert(call, chosen);
        self.load[chosen].active_calls += 1;
        self.members[chosen]
    }

    /// Member a call was pinned to, if it went through this balancer.
    pub fn member_for(&self, call: CallId) -> Option<ServerId> {
        self.affinity.get(&call).map(|&i| self.members[i])
    }

    pub fn transaction_opened(&mut self, call: CallId, kind: MsgKind) {
        if let Some(&i) = self.affinity.get(&call) {
            self.load[i].active_transactions += 1;
            self.load[i].work_left += self.costs.cost(kind);
        }
    }

    pub fn transaction_closed(&mut self, call: CallId, kind: MsgKind) {
        if let Some(&i) = self.affinity.get(&call) {
            let l = &mut self.load[i];
            l.active_transactions = l.active_transactions.saturating_sub(1);
            l.work_left = (l.work_left - self.costs.cost(kind)).max(0.0);
        }
    }

    pub fn call_ended(&mut self, call: CallId) {
        if let Some(i) = self.affinity.remove(&call) {
            self.load[i].active_calls = self.load[i].active_calls.saturating_sub(1);
        }
    }
}

/// Re-run one logged decision: strict argmin over the eligible members,
/// lowest index wins ties. An all-false mask means nobody opted out of the
/// comparison, mirroring `dispatch`.
pub fn replay_dispatch(metrics: &[f64], eligible: &[bool]) -> usize {
    let any = eligible.iter().any(|&e| e);
    let mut best: Option<usize> = None;
    for (i, m) in metrics.iter().enumerate() {
        if any && !eligible[i] {
            continue;
        }
        match best {
            None => best = Some(i),
            Some(b) if *m < metrics[b] => best = Some(i),
            _ => {}
        }
    }
    best.expect("non-empty metric set")
}
