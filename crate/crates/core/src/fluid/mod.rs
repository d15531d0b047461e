//! Continuous-flow approximation of the two-server tandem.
//!
//! Queues are real-valued message quantities driven by rate functions
//! instead of individual events. The integrator is a fixed-step classical
//! Runge-Kutta scheme; inputs are held constant across each step (the model
//! callback is consulted once per step), and queue levels reflect at zero.
//!
//! The retransmission feed is the part with memory: copies of traffic sent
//! `offset_k` ago re-enter the system for every cohort still unanswered.
//! `retransmission_rate` evaluates that sum given a send-rate history and an
//! answered-fraction lookup; `tandem` builds both for the proxy pair.

pub mod tandem;

use thiserror::Error;

use crate::ids::Seconds;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluidState {
    pub q1: f64,
    pub q2: f64,
}

/// Instantaneous message rates feeding the pair of queue equations. Server 1
/// is the upstream proxy, server 2 the downstream one it retransmits toward.
#[derive(Debug, Clone, Copy, Default)]
pub struct Rates {
    /// Fresh requests entering each server.
    pub lambda1: f64,
    pub lambda2: f64,
    /// Retransmitted copies arriving from further upstream.
    pub r1: f64,
    /// Retransmitted copies arriving at server 2 (sent by server 1).
    pub r2: f64,
    /// Retransmission emissions queued as work at server 1.
    pub r2_prime: f64,
    /// Responses flowing back through each server.
    pub nu1: f64,
    pub nu2: f64,
    /// Service capacities.
    pub mu1: f64,
    pub mu2: f64,
}

impl Rates {
    fn check(&self, t: Seconds) -> Result<(), FluidError> {
        let named = [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("r1", self.r1),
            ("r2", self.r2),
            ("r2_prime", self.r2_prime),
            ("nu1", self.nu1),
            ("nu2", self.nu2),
            ("mu1", self.mu1),
            ("mu2", self.mu2),
        ];
        for (name, v) in named {
            if !v.is_finite() || v < 0.0 {
                return Err(FluidError::BadRate {
                    name,
                    value: v,
                    t,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FluidError {
    #[error("rate {name} = {value} at t = {t} (rates must be finite and non-negative)")]
    BadRate {
        name: &'static str,
        value: f64,
        t: Seconds,
    },
    #[error("step {dt} invalid: need 0 < dt <= {max} to resolve the retransmission delays")]
    BadStep { dt: Seconds, max: Seconds },
    #[error("horizon {t_end} is not ahead of 0")]
    BadHorizon { t_end: Seconds },
}

/// Net queue growth. Each queue drains at its service rate while nonempty;
/// at zero, a would-be negative balance is pinned to zero instead.
pub fn derivatives(state: &FluidState, rates: &Rates) -> (f64, f64) {
    let dq1 = rates.lambda1 + rates.r1 + rates.r2_prime + rates.nu1 - rates.mu1;
    let dq2 = rates.lambda2 + rates.r2 + rates.nu2 - rates.mu2;
    let dq1 = if state.q1 <= 0.0 { dq1.max(0.0) } else { dq1 };
    let dq2 = if state.q2 <= 0.0 { dq2.max(0.0) } else { dq2 };
    (dq1, dq2)
}

/// Summed rate of copies due now: for every schedule offset, the cohort sent
/// that long ago contributes its still-unanswered fraction.
///
/// `sent` gives the guarded send rate at a past time; `answered_fraction`
/// gives the fraction of the cohort sent at `s` that has been answered by
/// `t`. Cohorts from before the start of history count as zero.
pub fn retransmission_rate(
    sent: &dyn Fn(Seconds) -> f64,
    answered_fraction: &dyn Fn(Seconds, Seconds) -> f64,
    offsets: &[Seconds],
    t: Seconds,
) -> f64 {
    let mut rate = 0.0;
    for &off in offsets {
        let s = t - off;
        if s < 0.0 {
            continue;
        }
        let unanswered = 1.0 - answered_fraction(s, t).clamp(0.0, 1.0);
        rate += sent(s) * unanswered;
    }
    rate
}

/// One model step: rates are re-evaluated at each step boundary with the
/// current queue state, then held constant while the step integrates.
pub trait InputModel {
    fn rates_at(&mut self, t: Seconds, state: &FluidState) -> Rates;
}

/// Adapter for models that only depend on time.
pub struct RatesFn<F: Fn(Seconds) -> Rates>(pub F);

impl<F: Fn(Seconds) -> Rates> InputModel for RatesFn<F> {
    fn rates_at(&mut self, t: Seconds, _state: &FluidState) -> Rates {
        self.0(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub t: Seconds,
    pub q1: f64,
    pub q2: f64,
    pub r2_prime: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: Seconds,
    pub rows: Vec<TrajectoryRow>,
}

impl Trajectory {
    pub fn last(&self) -> &TrajectoryRow {
        self.rows.last().expect("trajectory has at least the start row")
    }

    /// Row nearest to `t` on the sample grid.
    pub fn at(&self, t: Seconds) -> &TrajectoryRow {
        let idx = ((t / self.dt).round() as usize).min(self.rows.len() - 1);
        &self.rows[idx]
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("t,q1,q2,r2_prime\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:.4},{:.6},{:.6},{:.6}\n",
                r.t, r.q1, r.q2, r.r2_prime
            ));
        }
        out
    }

    /// Thin to every n-th row (plus the first), for matching a coarser
    /// sampling cadence.
    pub fn downsample(&self, every: usize) -> Trajectory {
        let every = every.max(1);
        Trajectory {
            dt: self.dt * every as f64,
            rows: self
                .rows
                .iter()
                .step_by(every)
                .copied()
                .collect(),
        }
    }
}

/// Fixed-step RK4 over `[0, t_end]` with reflection at zero. `t1` bounds the
/// step: the retransmission delay structure needs at least ten steps per
/// initial timer interval to stay resolved.
pub fn integrate(
    state0: FluidState,
    model: &mut dyn InputModel,
    dt: Seconds,
    t_end: Seconds,
    t1: Seconds,
) -> Result<Trajectory, FluidError> {
    let max_dt = t1 / 10.0;
    if !(dt > 0.0) || !dt.is_finite() || dt > max_dt {
        return Err(FluidError::BadStep { dt, max: max_dt });
    }
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(FluidError::BadHorizon { t_end });
    }
    let steps = (t_end / dt).round() as usize;
    let mut state = FluidState {
        q1: state0.q1.max(0.0),
        q2: state0.q2.max(0.0),
    };
    let mut rows = Vec::with_capacity(steps + 1);
    let first_rates = model.rates_at(0.0, &state);
    first_rates.check(0.0)?;
    rows.push(TrajectoryRow {
        t: 0.0,
        q1: state.q1,
        q2: state.q2,
        r2_prime: first_rates.r2_prime,
    });
    let mut rates = first_rates;
    for j in 0..steps {
        let t = j as f64 * dt;
        if j > 0 {
            rates = model.rates_at(t, &state);
            rates.check(t)?;
        }
        let k1 = derivatives(&state, &rates);
        let mid1 = offset(&state, k1, dt / 2.0);
        let k2 = derivatives(&mid1, &rates);
        let mid2 = offset(&state, k2, dt / 2.0);
        let k3 = derivatives(&mid2, &rates);
        let end = offset(&state, k3, dt);
        let k4 = derivatives(&end, &rates);
        state.q1 = (state.q1 + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0)).max(0.0);
        state.q2 = (state.q2 + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1)).max(0.0);
        rows.push(TrajectoryRow {
            t: (j + 1) as f64 * dt,
            q1: state.q1,
            q2: state.q2,
            r2_prime: rates.r2_prime,
        });
    }
    Ok(Trajectory { dt, rows })
}

fn offset(s: &FluidState, k: (f64, f64), h: Seconds) -> FluidState {
    FluidState {
        q1: (s.q1 + h * k.0).max(0.0),
        q2: (s.q2 + h * k.1).max(0.0),
    }
}
