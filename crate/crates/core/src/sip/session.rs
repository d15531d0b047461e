//! Per-call session state.
//!
//! One `CallSession` tracks a call end to end: the caller drives it to
//! Established, the callee tears it down with a Bye once the Ack lands (when
//! teardown is enabled). The state machine is monotone: milestone events only
//! ever move it forward, anything that arrives late or twice is reported as
//! stale and leaves the state alone. Exactly one terminal outcome is ever
//! assigned.

use crate::ids::{CallId, Seconds};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    Idle,
    InviteSent,
    Proceeding,
    Ringing,
    OkReceived,
    Established,
    ByeSent,
    Completed,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CallOutcome {
    Success,
    Rejected,
    TimedOut,
    Dropped,
}

impl CallOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            CallOutcome::Success => "success",
            CallOutcome::Rejected => "rejected",
            CallOutcome::TimedOut => "timedout",
            CallOutcome::Dropped => "dropped",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionEvent {
    /// Caller pushes the Invite onto the first hop.
    SendInvite,
    /// Caller sees a provisional Trying.
    GotTrying,
    /// Caller sees Ring.
    GotRing,
    /// Caller sees the final OK.
    GotOk,
    /// Caller decides to answer the received OK.
    Answer,
    /// Callee's stack processed the Ack.
    AckAtCallee,
    /// Caller received the callee's Bye.
    ByeAtCaller,
    /// Callee's stack processed the OK answering its Bye.
    ByeOkAtCallee,
    /// A rejection reached the call originator.
    RejectedUpstream,
    /// Some guarding timer exhausted its schedule. The flag records whether
    /// any copy of the dead transaction was lost to a full buffer.
    Timeout { buffer_drop_involved: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionAction {
    EmitAck,
    /// Re-answer a duplicate OK with a fresh Ack (recovers a lost Ack).
    ReAck,
    EmitBye,
    /// Answer a (possibly duplicate) Bye with OK.
    EmitByeOk,
}

#[derive(Debug, Default)]
pub struct Transition {
    pub actions: Vec<SessionAction>,
    /// Event did not fit the current state and was absorbed.
    pub stale: bool,
    /// This event assigned the terminal outcome.
    pub became_terminal: bool,
}

#[derive(Debug, Clone)]
pub struct CallSession {
    pub call: CallId,
    pub state: SessionState,
    pub outcome: Option<CallOutcome>,
    pub teardown: bool,
    pub start_t: Seconds,
    pub established_t: Option<Seconds>,
    pub end_t: Option<Seconds>,
}

impl CallSession {
    pub fn new(call: CallId, teardown: bool, start_t: Seconds) -> Self {
        CallSession {
            call,
            state: SessionState::Idle,
            outcome: None,
            teardown,
            start_t,
            established_t: None,
            end_t: None,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.outcome.is_some()
    }

    fn finish(&mut self, outcome: CallOutcome, now: Seconds, tr: &mut Transition) {
        debug_assert!(self.outcome.is_none(), "terminal outcome assigned twice");
        self.outcome = Some(outcome);
        self.end_t = Some(now);
        tr.became_terminal = true;
    }

    /// Apply one milestone event. Stale and duplicate deliveries are safe:
    /// they either re-emit the idempotent answer (Ack for OK, OK for Bye) or
    /// are absorbed without touching the state.
    pub fn advance(&mut self, event: SessionEvent, now: Seconds) -> Transition {
        use SessionEvent as E;
        use SessionState as S;
        let mut tr = Transition::default();

        if self.is_terminal() {
            // Late copies of a finished call still deserve the idempotent
            // answers so the peer's timers can disarm.
            match event {
                E::GotOk if self.state != S::Failed => tr.actions.push(SessionAction::ReAck),
                E::ByeAtCaller if self.state != S::Failed => {
                    tr.actions.push(SessionAction::EmitByeOk)
                }
                _ => tr.stale = true,
            }
            return tr;
        }

        match (self.state, event) {
            (S::Idle, E::SendInvite) => self.state = S::InviteSent,
            (S::InviteSent, E::GotTrying) => self.state = S::Proceeding,
            (S::InviteSent | S::Proceeding, E::GotRing) => self.state = S::Ringing,
            (S::InviteSent | S::Proceeding | S::Ringing, E::GotOk) => self.state = S::OkReceived,
            (S::OkReceived, E::Answer) => {
                self.state = S::Established;
                self.established_t = Some(now);
                tr.actions.push(SessionAction::EmitAck);
                if !self.teardown {
                    self.finish(CallOutcome::Success, now, &mut tr);
                }
            }
            (S::OkReceived | S::Established | S::ByeSent, E::GotOk) => {
                tr.actions.push(SessionAction::ReAck);
            }
            (S::Established, E::AckAtCallee) => {
                if self.teardown {
                    self.state = S::ByeSent;
                    tr.actions.push(SessionAction::EmitBye);
                }
                // Without teardown the call already completed at Answer.
            }
            (S::ByeSent, E::ByeAtCaller) => {
                tr.actions.push(SessionAction::EmitByeOk);
            }
            (S::ByeSent, E::ByeOkAtCallee) => {
                self.state = S::Completed;
                self.finish(CallOutcome::Success, now, &mut tr);
            }
            (_, E::RejectedUpstream) => {
                self.state = S::Failed;
                self.finish(CallOutcome::Rejected, now, &mut tr);
            }
            (_, E::Timeout { buffer_drop_involved }) => {
                self.state = S::Failed;
                let outcome = if buffer_drop_involved {
                    CallOutcome::Dropped
                } else {
                    CallOutcome::TimedOut
                };
                self.finish(outcome, now, &mut tr);
            }
            _ => tr.stale = true,
        }
        tr
    }
}
