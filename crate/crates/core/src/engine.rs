//! Discrete-event core: a simulation clock and a totally ordered pending
//! event queue.
//!
//! Events are ordered by `(fire_at, sequence)` where `sequence` is the
//! insertion counter, so two events scheduled for the same instant are
//! processed in the order they were created. Replaying the same schedule
//! therefore yields the same trajectory bit for bit.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::ids::{CallId, Seconds, ServerId, TimerId};
use crate::rng::RandomStreams;
use crate::sip::message::SipMessage;

#[derive(Debug, Clone)]
pub enum EventPayload {
    /// A caller originates a new call.
    CallArrival(CallId),
    /// A message reaches the far end of a link.
    MessageArrival(SipMessage),
    /// The head-of-line item at a server finishes processing.
    ServiceCompletion(ServerId),
    /// A retransmission timer reaches its next scheduled instant.
    TimerFire(TimerId),
    /// Periodic controller update across all servers.
    ControlTick,
    /// Metrics sampling instant.
    SampleTick,
}

#[derive(Debug, Clone)]
pub struct SimEvent {
    pub fire_at: Seconds,
    pub sequence: u64,
    pub payload: EventPayload,
}

// BinaryHeap is a max-heap; reverse the comparison to pop the earliest
// (fire_at, sequence) pair first.
impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .fire_at
            .total_cmp(&self.fire_at)
            .then_with(|| other.sequence.cmp(&self.sequence))
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for SimEvent {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.sequence == other.sequence
    }
}

impl Eq for SimEvent {}

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("event time {fire_at} precedes current clock {clock}")]
    InPast { fire_at: Seconds, clock: Seconds },
    #[error("event time must be finite, got {0}")]
    NotFinite(Seconds),
}

#[derive(Debug, Error, PartialEq)]
#[error("run_until target {t_end} precedes current clock {clock}")]
pub struct RunError {
    pub t_end: Seconds,
    pub clock: Seconds,
}

pub struct Engine {
    clock: Seconds,
    queue: BinaryHeap<SimEvent>,
    next_seq: u64,
    pub rng: RandomStreams,
}

impl Engine {
    pub fn new(seed: u64) -> Self {
        Engine {
            clock: 0.0,
            queue: BinaryHeap::new(),
            next_seq: 0,
            rng: RandomStreams::new(seed),
        }
    }

    pub fn clock(&self) -> Seconds {
        self.clock
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Enqueue an event. `fire_at` may equal the current clock but never
    /// precede it.
    pub fn schedule(&mut self, fire_at: Seconds, payload: EventPayload) -> Result<(), ScheduleError> {
        if !fire_at.is_finite() {
            return Err(ScheduleError::NotFinite(fire_at));
        }
        if fire_at < self.clock {
            return Err(ScheduleError::InPast {
                fire_at,
                clock: self.clock,
            });
        }
        let sequence = self.next_seq;
        self.next_seq += 1;
        self.queue.push(SimEvent {
            fire_at,
            sequence,
            payload,
        });
        Ok(())
    }

    fn pop_due(&mut self, t_end: Seconds) -> Option<SimEvent> {
        match self.queue.peek() {
            Some(ev) if ev.fire_at <= t_end => {
                let ev = self.queue.pop().unwrap();
                self.clock = ev.fire_at;
                Some(ev)
            }
            _ => None,
        }
    }

    /// Process every event with `fire_at <= t_end` in order, handing each to
    /// `handler` together with the engine so handlers can schedule follow-ups
    /// and draw random numbers. The boundary is inclusive. Returns the number
    /// of events processed; afterwards the clock sits at `t_end`.
    pub fn run_until<F>(&mut self, t_end: Seconds, mut handler: F) -> Result<u64, RunError>
    where
        F: FnMut(&mut Engine, SimEvent),
    {
        if t_end < self.clock {
            return Err(RunError {
                t_end,
                clock: self.clock,
            });
        }
        let mut processed = 0;
        while let Some(ev) = self.pop_due(t_end) {
            handler(self, ev);
            processed += 1;
        }
        self.clock = t_end;
        Ok(processed)
    }
}
