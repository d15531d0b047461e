//! SIP signaling semantics: message kinds, retransmission schedules and the
//! per-call session state machine.

pub mod message;
pub mod session;
pub mod timer;
