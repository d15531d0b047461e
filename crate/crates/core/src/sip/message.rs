//! Message instances on the wire and redundancy classification.

use std::fmt;

use crate::ids::{CallId, NodeId, Seconds, TimerId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MsgKind {
    Invite,
    Trying100,
    Ring180,
    Ok200,
    Ack,
    Bye,
    Reject503,
}

impl MsgKind {
    /// Requests travel toward the callee; everything else answers one.
    pub fn is_request(&self) -> bool {
        matches!(self, MsgKind::Invite | MsgKind::Ack | MsgKind::Bye)
    }
}

impl fmt::Display for MsgKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MsgKind::Invite => "invite",
            MsgKind::Trying100 => "trying100",
            MsgKind::Ring180 => "ring180",
            MsgKind::Ok200 => "ok200",
            MsgKind::Ack => "ack",
            MsgKind::Bye => "bye",
            MsgKind::Reject503 => "reject503",
        };
        f.write_str(s)
    }
}

/// One directed link traversal: `from` transmits, `to` receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Hop {
    pub from: NodeId,
    pub to: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetransmissionClass {
    /// Recovers an actual loss: no earlier copy ever reached the receiver.
    NonRedundant,
    /// An earlier copy already reached the receiver; this one is extra work.
    Redundant,
}

/// What became of one transmitted copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CopyFate {
    /// Dropped on the link, never arrived.
    LinkLost,
    /// Arrived but was discarded at a full buffer before processing.
    BufferDropped,
    /// Entered the receiver's queue.
    Reached,
}

impl CopyFate {
    pub fn reached_receiver(&self) -> bool {
        matches!(self, CopyFate::Reached)
    }
}

#[derive(Debug, Clone)]
pub struct SipMessage {
    pub call: CallId,
    pub kind: MsgKind,
    pub hop: Hop,
    /// 0 = original transmission, k = k-th retransmission on this hop.
    pub copy_index: u8,
    pub created_at: Seconds,
    /// Set on retransmitted copies and on duplicate responses they trigger.
    pub class: Option<RetransmissionClass>,
    /// Timer guarding this transmission at the sender, if any. Lets the
    /// receiver-side bookkeeping record the copy's fate with its sender.
    pub guard: Option<TimerId>,
    /// Present only on Reject503 carrying a Retry-After duration.
    pub retry_after: Option<Seconds>,
}

#[derive(Debug, PartialEq, Eq)]
pub enum ClassifyError {
    /// copy_index 0 is an original, not a retransmission.
    NotARetransmission,
    /// The fate log is shorter than copy_index; earlier copies unknown.
    IncompleteLog { have: usize, need: usize },
}

/// Classify the `copy_index`-th transmission given the fates of the earlier
/// copies of the same (call, kind, hop). A copy is non-redundant exactly when
/// every earlier copy failed to reach the receiver, whether it died on the
/// link or at a full buffer; in both cases this copy is genuine loss
/// recovery. If any earlier copy got through, the receiver already has the
/// message and this copy is redundant, even when the response it provoked was
/// itself lost.
pub fn classify_retransmission(
    copy_index: u8,
    earlier: &[CopyFate],
) -> Result<RetransmissionClass, ClassifyError> {
    if copy_index == 0 {
        return Err(ClassifyError::NotARetransmission);
    }
    let need = copy_index as usize;
    if earlier.len() < need {
        return Err(ClassifyError::IncompleteLog {
            have: earlier.len(),
            need,
        });
    }
    if earlier[..need].iter().any(|f| f.reached_receiver()) {
        Ok(RetransmissionClass::Redundant)
    } else {
        Ok(RetransmissionClass::NonRedundant)
    }
}
