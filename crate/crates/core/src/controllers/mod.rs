//! Pluggable overload controls.
//!
//! Every server hosts one `Controller` instance. The simulation consults it
//! at three points: when a new Invite original asks to be admitted, when one
//! of the server's own retransmission timers wants to emit a copy, and on a
//! periodic control tick that refreshes measurements and may push a rate
//! target to the upstream neighbor.

pub mod laws;

use std::collections::{HashMap, VecDeque};

use crate::ids::{Seconds, ServerId};
use crate::rng::{RandomStreams, Substream};
use crate::sip::message::RetransmissionClass;

use laws::{
    bangbang_decide, estimate_round_trip_delay, occupancy_update, pi_update,
    priority_reject_probability, rate_target_from_delay, rate_target_from_occupancy,
    retry_after_duration, rtqc_probability, rtqc_tune_thresholds, window_decide, LoadState,
    PiState, RtqcConfig,
};

/// Which count sits under the redundancy ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatioDenominator {
    Retransmissions,
    Messages,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControllerConfig {
    None,
    BangBang {
        high: usize,
        low: usize,
    },
    Occupancy {
        rho_target: f64,
        gain: f64,
    },
    Priority {
        thresholds: Option<(usize, usize)>,
    },
    Window {
        window: u64,
    },
    RetryAfter {
        q_high: usize,
        q_target: usize,
    },
    RateOccupancy {
        rho_target: f64,
        max_rate: f64,
    },
    RateDelay {
        d_target: Seconds,
        max_rate: f64,
    },
    Rtqc {
        p_min: f64,
        horizon: Seconds,
        alpha: f64,
        t1: Seconds,
    },
    Rrrc {
        setpoint: f64,
        kp: f64,
        ki: f64,
        p_min: f64,
        window: Seconds,
        denom: RatioDenominator,
    },
    Rtdc {
        d_target: Seconds,
        kp: f64,
        ki: f64,
        p_min: f64,
        alpha: f64,
    },
}

impl ControllerConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ControllerConfig::None => "none",
            ControllerConfig::BangBang { .. } => "bangbang",
            ControllerConfig::Occupancy { .. } => "occupancy",
            ControllerConfig::Priority { .. } => "priority",
            ControllerConfig::Window { .. } => "window",
            ControllerConfig::RetryAfter { .. } => "retryafter",
            ControllerConfig::RateOccupancy { .. } => "rate-occupancy",
            ControllerConfig::RateDelay { .. } => "rate-delay",
            ControllerConfig::Rtqc { .. } => "rtqc",
            ControllerConfig::Rrrc { .. } => "rrrc",
            ControllerConfig::Rtdc { .. } => "rtdc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdmissionVerdict {
    Accept,
    Reject { retry_after: Option<Seconds> },
}

/// Snapshot handed to the controller on each control tick.
#[derive(Debug, Clone, Copy)]
pub struct TickObs {
    pub now: Seconds,
    pub dt: Seconds,
    /// Busy fraction over the trailing occupancy window.
    pub rho: f64,
    pub q: usize,
    pub q_r: usize,
    pub mu_eff: f64,
    /// Cumulative new-call originals offered to this server.
    pub offered_new_calls: u64,
    /// Cumulative new-call originals admitted.
    pub accepted_new_calls: u64,
    /// Cumulative retransmission timers armed by this server.
    pub timer_arms: u64,
    /// Mean queueing delay of items that started service since last tick.
    pub queue_delay_mean: Option<Seconds>,
}

/// Everything the admission decision may look at.
#[derive(Debug, Clone, Copy)]
pub struct EnqueueCtx {
    pub q_total: usize,
    pub low_len: usize,
    pub mu_eff: f64,
    pub next_hop: Option<ServerId>,
}

#[derive(Debug, Default)]
pub struct TickOutcome {
    /// Rate target to hand to the upstream neighbor, if this algorithm
    /// pushes back.
    pub rate_directive: Option<f64>,
}

/// Simple delta-to-rate meter with exponential smoothing.
#[derive(Debug, Clone, Copy)]
struct RateMeter {
    last_count: u64,
    ewma: Option<f64>,
    alpha: f64,
}

impl RateMeter {
    fn new(alpha: f64) -> Self {
        RateMeter {
            last_count: 0,
            ewma: None,
            alpha,
        }
    }

    fn update(&mut self, cum: u64, dt: Seconds) -> f64 {
        let delta = cum.saturating_sub(self.last_count);
        self.last_count = cum;
        if dt <= 0.0 {
            return self.ewma.unwrap_or(0.0);
        }
        let inst = delta as f64 / dt;
        let next = match self.ewma {
            None => inst,
            Some(e) => self.alpha * inst + (1.0 - self.alpha) * e,
        };
        self.ewma = Some(next);
        next
    }

    fn rate(&self) -> f64 {
        self.ewma.unwrap_or(0.0)
    }
}

const MEASUREMENT_ALPHA: f64 = 0.3;

#[derive(Debug)]
enum State {
    None,
    BangBang {
        load: LoadState,
    },
    Occupancy {
        p: f64,
    },
    Priority,
    Window {
        outstanding: HashMap<ServerId, u64>,
    },
    RetryAfter,
    RatePush {
        /// Downstream-role measurement of admitted new calls.
        accepted_meter: RateMeter,
        /// Upstream-role measurement of offered new calls.
        offered_meter: RateMeter,
        /// Smoothed queueing delay (rate-delay only).
        delay_ewma: Option<f64>,
        /// Targets received from downstream neighbors, keyed by their id.
        targets: HashMap<ServerId, f64>,
    },
    Rtqc {
        arm_meter: RateMeter,
        tuned: Option<RtqcConfig>,
    },
    Rrrc {
        pi: PiState,
        /// (emission time, was redundant) for this server's retransmissions.
        retrans_log: VecDeque<(Seconds, bool)>,
        /// Emission times of every message this server put on a link.
        send_log: VecDeque<Seconds>,
    },
    Rtdc {
        pi: PiState,
        rtt: Option<Seconds>,
        discarded_samples: u64,
    },
}

pub struct Controller {
    pub cfg: ControllerConfig,
    state: State,
}

impl Controller {
    pub fn new(cfg: ControllerConfig) -> Self {
        let state = match &cfg {
            ControllerConfig::None => State::None,
            ControllerConfig::BangBang { .. } => State::BangBang {
                load: LoadState::Underload,
            },
            ControllerConfig::Occupancy { .. } => State::Occupancy { p: 0.0 },
            ControllerConfig::Priority { .. } => State::Priority,
            ControllerConfig::Window { .. } => State::Window {
                outstanding: HashMap::new(),
            },
            ControllerConfig::RetryAfter { .. } => State::RetryAfter,
            ControllerConfig::RateOccupancy { .. } | ControllerConfig::RateDelay { .. } => {
                State::RatePush {
                    accepted_meter: RateMeter::new(MEASUREMENT_ALPHA),
                    offered_meter: RateMeter::new(MEASUREMENT_ALPHA),
                    delay_ewma: None,
                    targets: HashMap::new(),
                }
            }
            ControllerConfig::Rtqc { alpha, .. } => State::Rtqc {
                arm_meter: RateMeter::new(*alpha),
                tuned: None,
            },
            ControllerConfig::Rrrc { kp, ki, p_min, .. } => State::Rrrc {
                pi: PiState::new(*kp, *ki, *p_min, 1.0),
                retrans_log: VecDeque::new(),
                send_log: VecDeque::new(),
            },
            ControllerConfig::Rtdc { kp, ki, p_min, .. } => State::Rtdc {
                pi: PiState::new(*kp, *ki, *p_min, 1.0),
                rtt: None,
                discarded_samples: 0,
            },
        };
        Controller { cfg, state }
    }

    pub fn uses_priority_queues(&self) -> bool {
        matches!(self.cfg, ControllerConfig::Priority { .. })
    }

    /// Admission decision for a new Invite original arriving at this server.
    /// Retransmitted copies and every non-Invite message bypass admission.
    pub fn admit_new_invite(
        &mut self,
        ctx: &EnqueueCtx,
        rng: &mut RandomStreams,
    ) -> AdmissionVerdict {
        match (&self.cfg, &mut self.state) {
            (ControllerConfig::BangBang { high, low }, State::BangBang { load }) => {
                let (next, reject) = bangbang_decide(*load, ctx.q_total, *high, *low);
                *load = next;
                if reject {
                    AdmissionVerdict::Reject { retry_after: None }
                } else {
                    AdmissionVerdict::Accept
                }
            }
            (ControllerConfig::Occupancy { .. }, State::Occupancy { p }) => {
                if rng.bernoulli(Substream::Control, *p) {
                    AdmissionVerdict::Reject { retry_after: None }
                } else {
                    AdmissionVerdict::Accept
                }
            }
            (ControllerConfig::Priority { thresholds }, State::Priority) => {
                let p = priority_reject_probability(ctx.low_len, *thresholds);
                if p > 0.0 && rng.bernoulli(Substream::Control, p) {
                    AdmissionVerdict::Reject { retry_after: None }
                } else {
                    AdmissionVerdict::Accept
                }
            }
            (ControllerConfig::Window { window }, State::Window { outstanding }) => {
                let Some(route) = ctx.next_hop else {
                    return AdmissionVerdict::Accept;
                };
                let slot = outstanding.entry(route).or_insert(0);
                if window_decide(*slot, *window) {
                    *slot += 1;
                    AdmissionVerdict::Accept
                } else {
                    AdmissionVerdict::Reject { retry_after: None }
                }
            }
            (ControllerConfig::RetryAfter { q_high, q_target }, State::RetryAfter) => {
                if ctx.q_total > *q_high {
                    let d = retry_after_duration(ctx.q_total, *q_target, ctx.mu_eff);
                    AdmissionVerdict::Reject {
                        retry_after: Some(d),
                    }
                } else {
                    AdmissionVerdict::Accept
                }
            }
            (
                ControllerConfig::RateOccupancy { .. } | ControllerConfig::RateDelay { .. },
                State::RatePush {
                    offered_meter,
                    targets,
                    ..
                },
            ) => {
                let Some(route) = ctx.next_hop else {
                    return AdmissionVerdict::Accept;
                };
                let Some(target) = targets.get(&route) else {
                    return AdmissionVerdict::Accept;
                };
                let offered = offered_meter.rate();
                let admit_p = if offered <= 0.0 {
                    1.0
                } else {
                    (target / offered).clamp(0.0, 1.0)
                };
                if rng.bernoulli(Substream::Control, 1.0 - admit_p) {
                    AdmissionVerdict::Reject { retry_after: None }
                } else {
                    AdmissionVerdict::Accept
                }
            }
            _ => AdmissionVerdict::Accept,
        }
    }

    /// Gate a pending retransmission copy at this server's own timer.
    pub fn admits_retransmission(&mut self, q_r: usize, rng: &mut RandomStreams) -> bool {
        let p = match (&self.cfg, &self.state) {
            (ControllerConfig::Rtqc { p_min, .. }, State::Rtqc { tuned, .. }) => match tuned {
                None => 1.0,
                Some(cfg) => rtqc_probability(q_r as f64, &RtqcConfig {
                    q_rmin: cfg.q_rmin,
                    q_rmax: cfg.q_rmax,
                    p_min: *p_min,
                }),
            },
            (ControllerConfig::Rrrc { .. }, State::Rrrc { pi, .. }) => pi.output,
            (ControllerConfig::Rtdc { .. }, State::Rtdc { pi, .. }) => pi.output,
            _ => return true,
        };
        if p >= 1.0 {
            true
        } else {
            rng.bernoulli(Substream::Control, p)
        }
    }

    /// Periodic update. Returns a rate directive for the upstream neighbor
    /// when this algorithm pushes back.
    pub fn tick(&mut self, obs: &TickObs) -> TickOutcome {
        let mut out = TickOutcome::default();
        match (&self.cfg, &mut self.state) {
            (ControllerConfig::Occupancy { rho_target, gain }, State::Occupancy { p }) => {
                *p = occupancy_update(*p, obs.rho, *rho_target, *gain);
            }
            (
                ControllerConfig::RateOccupancy {
                    rho_target,
                    max_rate,
                },
                State::RatePush {
                    accepted_meter,
                    offered_meter,
                    ..
                },
            ) => {
                let lambda = accepted_meter.update(obs.accepted_new_calls, obs.dt);
                offered_meter.update(obs.offered_new_calls, obs.dt);
                out.rate_directive = Some(rate_target_from_occupancy(
                    lambda, obs.rho, *rho_target, *max_rate,
                ));
            }
            (
                ControllerConfig::RateDelay { d_target, max_rate },
                State::RatePush {
                    accepted_meter,
                    offered_meter,
                    delay_ewma,
                    ..
                },
            ) => {
                let lambda = accepted_meter.update(obs.accepted_new_calls, obs.dt);
                offered_meter.update(obs.offered_new_calls, obs.dt);
                if let Some(d) = obs.queue_delay_mean {
                    *delay_ewma = Some(match *delay_ewma {
                        None => d,
                        Some(e) => MEASUREMENT_ALPHA * d + (1.0 - MEASUREMENT_ALPHA) * e,
                    });
                }
                let d_meas = delay_ewma.unwrap_or(0.0);
                out.rate_directive = Some(rate_target_from_delay(
                    lambda, d_meas, *d_target, *max_rate,
                ));
            }
            (
                ControllerConfig::Rtqc {
                    p_min, horizon, t1, ..
                },
                State::Rtqc { arm_meter, tuned },
            ) => {
                let rate = arm_meter.update(obs.timer_arms, obs.dt);
                let (lo, hi) = rtqc_tune_thresholds(rate, *t1, *horizon);
                *tuned = Some(RtqcConfig {
                    q_rmin: lo,
                    q_rmax: hi,
                    p_min: *p_min,
                });
            }
            (
                ControllerConfig::Rrrc {
                    setpoint,
                    window,
                    denom,
                    ..
                },
                State::Rrrc {
                    pi,
                    retrans_log,
                    send_log,
                },
            ) => {
                let cutoff = obs.now - *window;
                while retrans_log.front().is_some_and(|(t, _)| *t < cutoff) {
                    retrans_log.pop_front();
                }
                while send_log.front().is_some_and(|t| *t < cutoff) {
                    send_log.pop_front();
                }
                let redundant = retrans_log.iter().filter(|(_, r)| *r).count() as f64;
                let denom_count = match denom {
                    RatioDenominator::Retransmissions => retrans_log.len() as f64,
                    RatioDenominator::Messages => send_log.len() as f64,
                };
                let ratio = if denom_count > 0.0 {
                    redundant / denom_count
                } else {
                    0.0
                };
                pi_update(pi, *setpoint - ratio, obs.dt);
            }
            (ControllerConfig::Rtdc { d_target, .. }, State::Rtdc { pi, rtt, .. }) => {
                if let Some(est) = rtt {
                    pi_update(pi, *d_target - *est, obs.dt);
                }
            }
            _ => {}
        }
        out
    }

    /// Downstream neighbor `from` announced its admission rate target.
    pub fn set_rate_target(&mut self, from: ServerId, target: f64) {
        if let State::RatePush { targets, .. } = &mut self.state {
            targets.insert(from, target);
        }
    }

    /// Window bookkeeping: a counted call on `route` got its answer (or died).
    pub fn release_window_slot(&mut self, route: ServerId) {
        if let State::Window { outstanding } = &mut self.state {
            if let Some(slot) = outstanding.get_mut(&route) {
                *slot = slot.saturating_sub(1);
            }
        }
    }

    pub fn window_outstanding(&self, route: ServerId) -> Option<u64> {
        match &self.state {
            State::Window { outstanding } => Some(outstanding.get(&route).copied().unwrap_or(0)),
            _ => None,
        }
    }

    /// Feed one of this server's retransmission emissions (RRRC measurement).
    pub fn observe_retransmission(&mut self, now: Seconds, class: RetransmissionClass) {
        if let State::Rrrc { retrans_log, .. } = &mut self.state {
            retrans_log.push_back((now, class == RetransmissionClass::Redundant));
        }
    }

    /// Feed any link emission by this server (alternate RRRC denominator).
    pub fn observe_emission(&mut self, now: Seconds) {
        if let State::Rrrc { send_log, .. } = &mut self.state {
            send_log.push_back(now);
        }
    }

    /// Feed a (send, response) timestamp pair from a completed transaction.
    pub fn observe_rtt_sample(&mut self, send: Seconds, resp: Seconds) {
        if let (ControllerConfig::Rtdc { alpha, .. }, State::Rtdc { rtt, discarded_samples, .. }) =
            (&self.cfg, &mut self.state)
        {
            let (next, discarded) = estimate_round_trip_delay(*rtt, *alpha, &[(send, resp)]);
            *rtt = next;
            *discarded_samples += discarded as u64;
        }
    }

    /// Current delay estimate (RTDC only).
    pub fn rtt_estimate(&self) -> Option<Seconds> {
        match &self.state {
            State::Rtdc { rtt, .. } => *rtt,
            _ => None,
        }
    }

    /// Current retransmission admission probability for controllers whose
    /// probability is a plain scalar. RTQC's depends on the queue level, so
    /// it reports nothing here.
    pub fn retrans_admission_probability(&self) -> Option<f64> {
        match &self.state {
            State::Rrrc { pi, .. } | State::Rtdc { pi, .. } => Some(pi.output),
            _ => None,
        }
    }
}
