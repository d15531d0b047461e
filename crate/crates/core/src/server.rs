//! A SIP proxy or UAS core: one service unit draining a bounded queue.
//!
//! Work arrives as jobs. A Serve job is a message to parse and act on, a
//! Retrans job is a pending retransmission copy the server must emit itself
//! (copies cost the same handling work as anything else it sends), and a
//! Reject job is the reduced-cost handling of a turned-away Invite. The
//! counters keep an exact balance: every job that asked to enter either got
//! dropped at the buffer or will eventually count as served or rejected.

use std::collections::{HashMap, VecDeque};

use crate::controllers::Controller;
use crate::ids::{Seconds, ServerId, TimerId};
use crate::rng::{RandomStreams, Substream};
use crate::sip::message::{MsgKind, SipMessage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServiceDist {
    Exponential,
    Deterministic,
}

#[derive(Debug, Clone)]
pub enum Job {
    Serve(SipMessage),
    /// Emit a 503 for this Invite once the server gets to it.
    Reject {
        msg: SipMessage,
        retry_after: Option<Seconds>,
    },
    /// A retransmission timer fired; emit the next copy for this timer.
    Retrans(TimerId),
}

#[derive(Debug, Clone)]
pub struct QueueEntry {
    pub job: Job,
    pub enqueued_at: Seconds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorityClass {
    High,
    Low,
}

/// Messages opening new work queue behind everything else when the priority
/// discipline is on.
pub fn priority_class_for(kind: MsgKind) -> PriorityClass {
    match kind {
        MsgKind::Invite => PriorityClass::Low,
        _ => PriorityClass::High,
    }
}

#[derive(Debug)]
enum Store {
    Fifo(VecDeque<QueueEntry>),
    Priority {
        high: VecDeque<QueueEntry>,
        low: VecDeque<QueueEntry>,
    },
}

impl Store {
    fn len(&self) -> usize {
        match self {
            Store::Fifo(q) => q.len(),
            Store::Priority { high, low } => high.len() + low.len(),
        }
    }

    fn low_len(&self) -> usize {
        match self {
            Store::Fifo(_) => 0,
            Store::Priority { low, .. } => low.len(),
        }
    }

    fn push(&mut self, entry: QueueEntry, class: PriorityClass) {
        match self {
            Store::Fifo(q) => q.push_back(entry),
            Store::Priority { high, low } => match class {
                PriorityClass::High => high.push_back(entry),
                PriorityClass::Low => low.push_back(entry),
            },
        }
    }

    fn pop(&mut self) -> Option<QueueEntry> {
        match self {
            Store::Fifo(q) => q.pop_front(),
            Store::Priority { high, low } => high.pop_front().or_else(|| low.pop_front()),
        }
    }
}

/// Trailing-window busy fraction.
#[derive(Debug)]
pub struct OccupancyMeter {
    window: Seconds,
    /// Closed busy intervals, oldest first.
    intervals: VecDeque<(Seconds, Seconds)>,
    busy_since: Option<Seconds>,
}

impl OccupancyMeter {
    pub fn new(window: Seconds) -> Self {
        assert!(window > 0.0);
        OccupancyMeter {
            window,
            intervals: VecDeque::new(),
            busy_since: None,
        }
    }

    pub fn service_started(&mut self, now: Seconds) {
        debug_assert!(self.busy_since.is_none());
        self.busy_since = Some(now);
    }

    pub fn service_finished(&mut self, now: Seconds) {
        if let Some(start) = self.busy_since.take() {
            self.intervals.push_back((start, now));
        }
    }

    pub fn rho(&mut self, now: Seconds) -> f64 {
        let lo = (now - self.window).max(0.0);
        while self.intervals.front().is_some_and(|&(_, e)| e <= lo) {
            self.intervals.pop_front();
        }
        let mut busy = 0.0;
        for &(s, e) in &self.intervals {
            busy += (e.min(now) - s.max(lo)).max(0.0);
        }
        if let Some(s) = self.busy_since {
            busy += (now - s.max(lo)).max(0.0);
        }
        let span = now - lo;
        if span <= 0.0 {
            // Nothing elapsed yet; call it busy only if in service right now.
            return if self.busy_since.is_some() { 1.0 } else { 0.0 };
        }
        (busy / span).min(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnqueueOutcome {
    Accepted,
    DroppedBufferFull,
}

pub struct Server {
    pub id: ServerId,
    pub mu_base: f64,
    /// Step changes to the service-rate multiplier: (from_t, factor),
    /// sorted by time. Empty means factor 1 throughout.
    pub slowdown: Vec<(Seconds, f64)>,
    pub buffer: usize,
    pub service_dist: ServiceDist,
    pub reject_cost_ratio: f64,
    store: Store,
    pub in_service: Option<QueueEntry>,
    pub occupancy: OccupancyMeter,
    pub controller: Controller,
    /// Routes this server must not send requests on, with expiry times.
    suppressed: HashMap<ServerId, Seconds>,

    // Conservation counters.
    pub arrivals: u64,
    pub served: u64,
    pub rejected: u64,
    pub dropped: u64,

    /// Armed retransmission timers owned by this server.
    pub q_r: usize,

    // Measurement feeds for the controller tick.
    pub offered_new_calls: u64,
    pub accepted_new_calls: u64,
    pub timer_arms: u64,
    delay_sum: f64,
    delay_count: u64,
    /// Run-long queueing-delay tally; never drained, unlike the controller feed.
    pub queue_delay_total: f64,
    pub queue_delay_jobs: u64,
}

impl Server {
    pub fn new(
        id: ServerId,
        mu_base: f64,
        buffer: usize,
        service_dist: ServiceDist,
        controller: Controller,
    ) -> Self {
        assert!(mu_base > 0.0, "service rate must be positive");
        assert!(buffer > 0, "zero-capacity buffer would drop everything");
        let store = if controller.uses_priority_queues() {
            Store::Priority {
                high: VecDeque::new(),
                low: VecDeque::new(),
            }
        } else {
            Store::Fifo(VecDeque::new())
        };
        Server {
            id,
            mu_base,
            slowdown: Vec::new(),
            buffer,
            service_dist,
            reject_cost_ratio: 0.5,
            store,
            in_service: None,
            occupancy: OccupancyMeter::new(1.0),
            controller,
            suppressed: HashMap::new(),
            arrivals: 0,
            served: 0,
            rejected: 0,
            dropped: 0,
            q_r: 0,
            offered_new_calls: 0,
            accepted_new_calls: 0,
            timer_arms: 0,
            delay_sum: 0.0,
            delay_count: 0,
            queue_delay_total: 0.0,
            queue_delay_jobs: 0,
        }
    }

    pub fn mu_eff(&self, now: Seconds) -> f64 {
        let mut factor = 1.0;
        for &(from, f) in &self.slowdown {
            if now >= from {
                factor = f;
            } else {
                break;
            }
        }
        self.mu_base * factor
    }

    pub fn queue_len(&self) -> usize {
        self.store.len()
    }

    pub fn low_queue_len(&self) -> usize {
        self.store.low_len()
    }

    pub fn busy(&self) -> bool {
        self.in_service.is_some()
    }

    /// Total jobs on the premises, queued plus in service.
    pub fn backlog(&self) -> usize {
        self.store.len() + usize::from(self.in_service.is_some())
    }

    /// Try to queue a job. Counts the arrival either way.
    pub fn offer(&mut self, entry: QueueEntry, class: PriorityClass) -> EnqueueOutcome {
        self.arrivals += 1;
        if self.store.len() >= self.buffer {
            self.dropped += 1;
            return EnqueueOutcome::DroppedBufferFull;
        }
        self.store.push(entry, class);
        EnqueueOutcome::Accepted
    }

    /// Pull the next job into service and return its duration draw. The
    /// caller schedules the completion event.
    pub fn start_next(&mut self, now: Seconds, rng: &mut RandomStreams) -> Option<Seconds> {
        debug_assert!(self.in_service.is_none());
        let entry = self.store.pop()?;
        let waited = now - entry.enqueued_at;
        self.delay_sum += waited;
        self.delay_count += 1;
        self.queue_delay_total += waited;
        self.queue_delay_jobs += 1;
        let mu = self.mu_eff(now);
        let base = match self.service_dist {
            ServiceDist::Exponential => rng.exponential(Substream::Service, mu),
            ServiceDist::Deterministic => 1.0 / mu,
        };
        let duration = match &entry.job {
            Job::Reject { .. } => base * self.reject_cost_ratio,
            _ => base,
        };
        self.in_service = Some(entry);
        self.occupancy.service_started(now);
        Some(duration)
    }

    /// Service completion: hand the finished job back and bump the right
    /// counter.
    pub fn finish(&mut self, now: Seconds) -> QueueEntry {
        let entry = self.in_service.take().expect("completion without a job in service");
        self.occupancy.service_finished(now);
        match &entry.job {
            Job::Reject { .. } => self.rejected += 1,
            _ => self.served += 1,
        }
        entry
    }

    /// Mean queueing delay of jobs that entered service since the last call.
    pub fn take_delay_mean(&mut self) -> Option<Seconds> {
        if self.delay_count == 0 {
            return None;
        }
        let mean = self.delay_sum / self.delay_count as f64;
        self.delay_sum = 0.0;
        self.delay_count = 0;
        Some(mean)
    }

    pub fn suppress_route(&mut self, route: ServerId, until: Seconds) {
        let slot = self.suppressed.entry(route).or_insert(until);
        if until > *slot {
            *slot = until;
        }
    }

    pub fn route_suppressed(&self, route: ServerId, now: Seconds) -> bool {
        self.suppressed.get(&route).is_some_and(|&until| now < until)
    }

    /// arrivals = served + rejected + dropped + backlog, always.
    pub fn conservation_holds(&self) -> bool {
        self.arrivals == self.served + self.rejected + self.dropped + self.backlog() as u64
    }
}
