use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::cluster::{Phase, PodId, RequestId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EventKind {
    /// A virtual user (or an injected external client) issues a request.
    RequestArrival { user: Option<usize>, generation: u64 },
    ServiceComplete { pod: PodId, request: RequestId },
    PodPhaseChange { pod: PodId, phase: Phase },
    /// Monitoring scrape: samples utilization and updates the user population.
    ControlTick,
    EpisodeEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub fire_at: f64,
    pub seq: u64,
    pub kind: EventKind,
}

impl Eq for SimEvent {}

impl Ord for SimEvent {
    // Reversed so BinaryHeap pops the earliest (fire_at, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .fire_at
            .total_cmp(&self.fire_at)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Default)]
pub struct SimClock {
    now: f64,
    seq: u64,
}

impl SimClock {
    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }
}

/// Time-ordered event queue owning the simulation clock.
#[derive(Debug, Clone, Default)]
pub struct EventQueue {
    clock: SimClock,
    heap: BinaryHeap<SimEvent>,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> f64 {
        self.clock.now
    }

    pub fn clock(&self) -> &SimClock {
        &self.clock
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Enqueues `kind` at `fire_at`. Scheduling into the past is a logic bug.
    pub fn schedule(&mut self, fire_at: f64, kind: EventKind) -> Result<SimEvent> {
        if !(fire_at >= self.clock.now) {
            return Err(Error::EventInPast {
                fire_at,
                now: self.clock.now,
            });
        }
        let ev = SimEvent {
            fire_at,
            seq: self.clock.seq,
            kind,
        };
        self.clock.seq += 1;
        self.heap.push(ev);
        Ok(ev)
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.fire_at)
    }

    /// Pops the next event with `fire_at <= t_end`, advancing the clock to it.
    pub fn pop_until(&mut self, t_end: f64) -> Option<SimEvent> {
        if self.heap.peek()?.fire_at > t_end {
            return None;
        }
        let ev = self.heap.pop()?;
        self.clock.now = ev.fire_at;
        Some(ev)
    }

    pub(crate) fn advance_to(&mut self, t: f64) {
        debug_assert!(t >= self.clock.now);
        self.clock.now = t;
    }
}
