//! Discrete-event simulator for SIP-over-UDP signaling networks.
//!
//! The simulator reproduces how finite-capacity SIP servers behave under
//! overload: queueing delay beyond the T1 timer threshold triggers
//! retransmissions, retransmissions add load, and without intervention the
//! feedback loop collapses goodput. A set of pluggable control algorithms
//! (local rejection, priority queueing, window and rate push-back, and
//! retransmission-rate throttling) can be swapped in per scenario and
//! compared seed for seed. A companion fluid model integrates the matching
//! queue ODEs for cross-validation of the event-level dynamics.

pub mod balancer;
pub mod controllers;
pub mod engine;
pub mod fluid;
pub mod ids;
pub mod metrics;
pub mod rng;
pub mod runner;
pub mod scenario;
pub mod server;
pub mod sim;
pub mod sip;
pub mod workload;
