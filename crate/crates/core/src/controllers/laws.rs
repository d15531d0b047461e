//! Pure decision rules used by the overload controllers.
//!
//! Everything here is a plain function of its arguments so each rule can be
//! pinned by table tests; the stateful plumbing that feeds measurements in
//! lives in the parent module.

use crate::ids::Seconds;

// --- hysteresis rejection ---------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadState {
    Underload,
    Overload,
}

/// Two-threshold hysteresis on the message queue size. Crossing `high` flips
/// to Overload, falling below `low` flips back; in between the previous state
/// holds. New Invite originals are rejected while in Overload.
pub fn bangbang_decide(state: LoadState, q: usize, high: usize, low: usize) -> (LoadState, bool) {
    debug_assert!(low < high, "hysteresis thresholds must satisfy low < high");
    let next = if q > high {
        LoadState::Overload
    } else if q < low {
        LoadState::Underload
    } else {
        state
    };
    (next, next == LoadState::Overload)
}

// --- occupancy regulation ----------------------------------------------------

/// One step of the occupancy loop: raise the rejection probability while the
/// measured processor occupancy sits above target, lower it below. Clamped to
/// [0, 1].
pub fn occupancy_update(p: f64, rho_meas: f64, rho_target: f64, gain: f64) -> f64 {
    (p + gain * (rho_meas - rho_target)).clamp(0.0, 1.0)
}

// --- priority queueing --------------------------------------------------------

/// Rejection probability for a new Invite given the current low-priority
/// queue length, with a linear ramp between the two thresholds. Absent
/// thresholds never reject.
pub fn priority_reject_probability(
    low_len: usize,
    thresholds: Option<(usize, usize)>,
) -> f64 {
    let Some((th_low, th_high)) = thresholds else {
        return 0.0;
    };
    debug_assert!(th_low < th_high);
    if low_len < th_low {
        0.0
    } else if low_len >= th_high {
        1.0
    } else {
        (low_len - th_low) as f64 / (th_high - th_low) as f64
    }
}

// --- window push-back ----------------------------------------------------------

/// Forward a new call on a route only while the outstanding (forwarded and
/// not yet answered) call count is below the window.
pub fn window_decide(outstanding: u64, window: u64) -> bool {
    outstanding < window
}

// --- adaptive Retry-After -------------------------------------------------------

/// How long an upstream node should back off, derived from the rejecting
/// server's backlog beyond its comfortable level.
pub fn retry_after_duration(q: usize, q_target: usize, mu: f64) -> Seconds {
    debug_assert!(mu > 0.0);
    if q <= q_target {
        0.0
    } else {
        (q - q_target) as f64 / mu
    }
}

// --- rate push-back ---------------------------------------------------------------

/// Target admission rate that would bring the measured occupancy to target,
/// assuming load scales linearly with admitted rate. A zero occupancy
/// measurement carries no information, so the configured maximum is returned.
pub fn rate_target_from_occupancy(
    lambda_meas: f64,
    rho_meas: f64,
    rho_target: f64,
    max_rate: f64,
) -> f64 {
    if rho_meas <= 0.0 {
        return max_rate;
    }
    (lambda_meas * rho_target / rho_meas).clamp(0.0, max_rate)
}

/// Same idea driven by a queueing-delay measurement.
pub fn rate_target_from_delay(
    lambda_meas: f64,
    d_meas: Seconds,
    d_target: Seconds,
    max_rate: f64,
) -> f64 {
    if d_meas <= 0.0 {
        return max_rate;
    }
    (lambda_meas * d_target / d_meas).clamp(0.0, max_rate)
}

// --- retransmission-rate control (timer queue) --------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RtqcConfig {
    pub q_rmin: f64,
    pub q_rmax: f64,
    pub p_min: f64,
}

/// Piecewise-linear admission probability for a pending retransmission as a
/// function of the instantaneous timer queue size: certain below `q_rmin`,
/// floored at `p_min` above `q_rmax`, linear in between. Degenerate tuned
/// thresholds (both zero) pin everything above zero to the floor.
pub fn rtqc_probability(q_r: f64, cfg: &RtqcConfig) -> f64 {
    debug_assert!((0.0..=1.0).contains(&cfg.p_min));
    if q_r <= cfg.q_rmin {
        1.0
    } else if q_r >= cfg.q_rmax {
        cfg.p_min
    } else {
        1.0 - (1.0 - cfg.p_min) * (q_r - cfg.q_rmin) / (cfg.q_rmax - cfg.q_rmin)
    }
}

/// Retune the curve thresholds from the smoothed rate at which this server
/// arms fresh timers: a timer queue deeper than rate x T1 means transactions
/// are outliving T1 (retransmissions imminent), and rate x horizon is the
/// depth at which the queue is saturated with doomed transactions.
pub fn rtqc_tune_thresholds(departure_rate: f64, t1: Seconds, horizon: Seconds) -> (f64, f64) {
    debug_assert!(departure_rate >= 0.0);
    (departure_rate * t1, departure_rate * horizon)
}

// --- PI control ------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiState {
    pub kp: f64,
    pub ki: f64,
    /// Integral term; seeded at the wide-open output so zero error holds it.
    pub integral: f64,
    pub output: f64,
    pub min_output: f64,
    pub max_output: f64,
}

impl PiState {
    pub fn new(kp: f64, ki: f64, min_output: f64, max_output: f64) -> Self {
        PiState {
            kp,
            ki,
            integral: max_output,
            output: max_output,
            min_output,
            max_output,
        }
    }
}

/// Positional PI step with back-calculation anti-windup: whatever the clamp
/// removed from the raw output is also removed from the integral, so a
/// saturated loop holds exactly at its bound. A velocity form clamped the
/// same way ratchets along a bound under oscillating error (upward deltas
/// apply in full, downward ones truncate at the clamp); this form cannot.
pub fn pi_update(state: &mut PiState, error: f64, dt: Seconds) -> f64 {
    state.integral += state.ki * error * dt;
    let raw = state.kp * error + state.integral;
    state.output = raw.clamp(state.min_output, state.max_output);
    state.integral += state.output - raw;
    state.output
}

// --- round-trip delay estimation ----------------------------------------------------------

/// Fold (send, response) timestamp pairs into an exponentially weighted
/// moving average. Pairs with a response earlier than the send are impossible
/// and are discarded; the count of discards is returned for accounting.
pub fn estimate_round_trip_delay(
    current: Option<f64>,
    alpha: f64,
    samples: &[(Seconds, Seconds)],
) -> (Option<f64>, usize) {
    debug_assert!((0.0..=1.0).contains(&alpha));
    let mut est = current;
    let mut discarded = 0;
    for &(send, resp) in samples {
        if resp < send {
            discarded += 1;
            continue;
        }
        let d = resp - send;
        est = Some(match est {
            None => d,
            Some(e) => alpha * d + (1.0 - alpha) * e,
        });
    }
    (est, discarded)
}
