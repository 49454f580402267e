//! Partition-of-unity fusion of the local estimates and the snapshot
//! exchange between agents that meet inside a shared overlap.

use crate::agent::AgentState;
use crate::geometry::{Cover, PartitionOfUnity};
use crate::rkhs::KernelExpansion;
use crate::scalar::{Points, Real};

/// An agent's basis and coefficients as of step `taken_at`.
#[derive(Clone, Debug, PartialEq)]
pub struct PeerSnapshot<T> {
    agent_id: usize,
    estimate: KernelExpansion<T>,
    taken_at: usize,
}

impl<T: Real> PeerSnapshot<T> {
    pub fn new(agent_id: usize, estimate: KernelExpansion<T>, taken_at: usize) -> Self {
        Self { agent_id, estimate, taken_at }
    }

    pub fn of(agent: &AgentState<T>, step: usize) -> Self {
        Self::new(agent.id(), agent.estimate().clone(), step)
    }

    pub fn agent_id(&self) -> usize {
        self.agent_id
    }

    pub fn centers(&self) -> &Points<T> {
        self.estimate.centers()
    }

    pub fn coefficients(&self) -> &[T] {
        self.estimate.coefficients()
    }

    pub fn estimate(&self) -> &KernelExpansion<T> {
        &self.estimate
    }

    pub fn taken_at(&self) -> usize {
        self.taken_at
    }

    pub fn len(&self) -> usize {
        self.estimate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimate.is_empty()
    }
}

/// `sum_i psi_i(x) g_hat_i(x)` over one snapshot per agent, in agent order.
pub fn fused_evaluate<T: Real>(snapshots: &[PeerSnapshot<T>], pou: &PartitionOfUnity<T>, x: &[T]) -> T {
    let w = pou.weights(x);
    snapshots.iter().zip(&w.weights).map(|(s, wi)| *wi * s.estimate.evaluate_unchecked(x)).sum()
}

/// Same value as [`fused_evaluate`], touching only agents with nonzero
/// weight at `x`. Returns those agents' ids.
pub fn fused_evaluate_reduced<T: Real>(snapshots: &[PeerSnapshot<T>], pou: &PartitionOfUnity<T>, x: &[T]) -> (T, Vec<usize>) {
    let w = pou.weights(x);
    let mut value = T::zero();
    let mut contacted = Vec::new();
    for (s, wi) in snapshots.iter().zip(&w.weights) {
        if *wi != T::zero() {
            value += *wi * s.estimate.evaluate_unchecked(x);
            contacted.push(s.agent_id);
        }
    }
    // Zero-weight terms contribute exact zeros to the full sum, so both
    // forms agree bit for bit as long as terms are added in the same order.
    (value, contacted)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExchangeEvent {
    pub step: usize,
    pub agent_i: usize,
    pub agent_j: usize,
    /// Centers sent by each side.
    pub payload_i: usize,
    pub payload_j: usize,
}

impl ExchangeEvent {
    pub fn payload(&self) -> usize {
        self.payload_i + self.payload_j
    }
}

/// Latest snapshot of each agent known to the team, plus the exchange log.
#[derive(Clone, Debug)]
pub struct SnapshotStore<T> {
    snapshots: Vec<PeerSnapshot<T>>,
    log: Vec<ExchangeEvent>,
}

impl<T: Real> SnapshotStore<T> {
    pub fn new(agents: &[AgentState<T>], step: usize) -> Self {
        Self { snapshots: agents.iter().map(|a| PeerSnapshot::of(a, step)).collect(), log: Vec::new() }
    }

    pub fn snapshots(&self) -> &[PeerSnapshot<T>] {
        &self.snapshots
    }

    pub fn log(&self) -> &[ExchangeEvent] {
        &self.log
    }

    pub fn exchanged_centers(&self) -> usize {
        self.log.iter().map(ExchangeEvent::payload).sum()
    }

    fn refresh(&mut self, agent: &AgentState<T>, step: usize) {
        let slot = &mut self.snapshots[agent.id() - 1];
        if slot.taken_at != step || slot.len() != agent.basis_count() {
            *slot = PeerSnapshot::of(agent, step);
        }
    }

    /// Synchronization barrier: every agent reports its current estimate.
    pub fn refresh_all(&mut self, agents: &[AgentState<T>], step: usize) {
        for a in agents {
            self.snapshots[a.id() - 1] = PeerSnapshot::of(a, step);
        }
    }
}

/// Refreshes both snapshots of every pair of agents currently located in
/// the intersection of their subdomains. Returns the number of exchanges.
pub fn overlap_exchange<T: Real>(agents: &[AgentState<T>], cover: &Cover<T>, store: &mut SnapshotStore<T>, step: usize) -> usize {
    let mut count = 0;
    for i in 0..agents.len() {
        for j in (i + 1)..agents.len() {
            let (a, b) = (&agents[i], &agents[j]);
            let (Some(pa), Some(pb)) = (a.position(), b.position()) else { continue };
            let (si, sj) = (&cover.subdomains()[a.id() - 1], &cover.subdomains()[b.id() - 1]);
            if si.contains(pa) && sj.contains(pa) && si.contains(pb) && sj.contains(pb) {
                store.refresh(a, step);
                store.refresh(b, step);
                store.log.push(ExchangeEvent {
                    step,
                    agent_i: a.id(),
                    agent_j: b.id(),
                    payload_i: a.basis_count(),
                    payload_j: b.basis_count(),
                });
                count += 1;
            }
        }
    }
    count
}
