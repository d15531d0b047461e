//! Retransmission timers and their firing schedules.
//!
//! UDP transport has no delivery guarantee, so every Invite, every final OK
//! and every Bye is guarded by a timer at its sender. Two schedules exist:
//!
//! * hop by hop (Invite awaiting Trying): intervals start at T1 and double
//!   without bound, at most 6 retransmissions;
//! * end to end (OK awaiting Ack, Bye awaiting OK): intervals start at T1
//!   and double but are capped at T2, at most 10 retransmissions.
//!
//! Both give up 64 x T1 after the original send.

use crate::ids::{CallId, NodeId, Seconds, TimerId};
use crate::sip::message::{CopyFate, Hop, MsgKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimerKind {
    HopByHop,
    EndToEnd,
}

pub const MAX_RETRANSMISSIONS_HOP: usize = 6;
pub const MAX_RETRANSMISSIONS_E2E: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    /// Offsets of each retransmission relative to the original send,
    /// strictly increasing, all strictly below `timeout_offset`.
    pub offsets: Vec<Seconds>,
    /// The transaction is abandoned this long after the original send.
    pub timeout_offset: Seconds,
}

/// Build the retransmission schedule for the given timer kind.
/// Preconditions: t1 > 0 and t2 >= t1.
pub fn retransmission_schedule(kind: TimerKind, t1: Seconds, t2: Seconds) -> Schedule {
    assert!(t1 > 0.0, "t1 must be positive");
    assert!(t2 >= t1, "t2 must be at least t1");
    let timeout_offset = 64.0 * t1;
    let max = match kind {
        TimerKind::HopByHop => MAX_RETRANSMISSIONS_HOP,
        TimerKind::EndToEnd => MAX_RETRANSMISSIONS_E2E,
    };
    let mut offsets = Vec::with_capacity(max);
    let mut interval = t1;
    let mut at = 0.0;
    for _ in 0..max {
        at += interval;
        if at >= timeout_offset {
            break;
        }
        offsets.push(at);
        interval *= 2.0;
        if kind == TimerKind::EndToEnd && interval > t2 {
            interval = t2;
        }
    }
    Schedule {
        offsets,
        timeout_offset,
    }
}

/// Which schedule guards a message kind, if any. Trying, Ring, Ack and 503
/// are never themselves guarded.
pub fn timer_kind_for(kind: MsgKind) -> Option<TimerKind> {
    match kind {
        MsgKind::Invite => Some(TimerKind::HopByHop),
        MsgKind::Ok200 | MsgKind::Bye => Some(TimerKind::EndToEnd),
        _ => None,
    }
}

/// Live state of one armed timer. The owner is the node that sent the
/// guarded message; `fates` records what happened to each copy sent so far
/// (index = copy_index), which is exactly the information needed to classify
/// later copies. A slot stays `None` while the copy is still crossing links
/// toward its final destination.
#[derive(Debug, Clone)]
pub struct RetransmissionTimer {
    pub id: TimerId,
    pub call: CallId,
    pub owner: NodeId,
    pub guarded: MsgKind,
    pub hop: Hop,
    /// Node whose receipt of a copy counts as "reached". For hop-by-hop
    /// timers this is the next hop; for end-to-end timers the far endpoint.
    pub destination: NodeId,
    pub kind: TimerKind,
    pub sent_at: Seconds,
    /// Index into the schedule of the next retransmission to consider.
    pub next_offset: usize,
    pub armed: bool,
    pub fates: Vec<Option<CopyFate>>,
    /// True once any copy of this transaction was dropped at a full buffer.
    pub saw_buffer_drop: bool,
}

impl RetransmissionTimer {
    pub fn timeout_at(&self, schedule: &Schedule) -> Seconds {
        self.sent_at + schedule.timeout_offset
    }

    /// Open a fate slot for the next copy and return its copy index.
    pub fn begin_copy(&mut self) -> u8 {
        self.fates.push(None);
        (self.fates.len() - 1) as u8
    }

    /// Record a copy's fate. First resolution wins; a copy lost on an early
    /// link cannot also arrive later.
    pub fn resolve_fate(&mut self, copy: u8, fate: CopyFate) {
        let slot = &mut self.fates[copy as usize];
        if slot.is_none() {
            *slot = Some(fate);
            if fate == CopyFate::BufferDropped {
                self.saw_buffer_drop = true;
            }
        }
    }

    /// Fates of the copies sent before `copy`, with still-in-flight ones
    /// counting as not having reached the receiver yet.
    pub fn earlier_fates(&self, copy: u8) -> Vec<CopyFate> {
        self.fates[..copy as usize]
            .iter()
            .map(|f| f.unwrap_or(CopyFate::LinkLost))
            .collect()
    }
}
