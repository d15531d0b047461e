//! Self-exciting rate model for a two-proxy chain with a fast answering
//! server behind it, teardown disabled. This is the continuous counterpart
//! of the event simulation on the same topology: the rates it feeds the
//! integrator are derived from the same message flows.
//!
//! Mechanics, per unit of call traffic:
//!
//! * A new call is one Invite into the upstream proxy. Serving it forwards
//!   the Invite downstream. Serving it downstream reaches the answering
//!   server, which instantly answers with Trying, Ring and OK back into the
//!   downstream queue (it is modeled as infinitely fast relative to the
//!   proxies). Those responses are served downstream, then upstream; the OK
//!   reaching the caller spawns an Ack that retraces the request path. Five
//!   served messages per proxy per clean call.
//! * The upstream proxy guards each forwarded Invite. While the Trying has
//!   not made it back through both queues, the guard schedule emits copies:
//!   each is a job for the upstream queue, and its output lands downstream
//!   as a duplicate Invite, answered there with a duplicate Trying.
//! * The answering server guards each OK until the Ack returns (four queue
//!   traversals away). Overdue OKs are re-emitted into the downstream queue
//!   and ride upstream like the original, each spawning another Ack.
//!
//! Everything is FIFO fluid: a cohort arriving at time s leaves a queue
//! when the cumulative served mass reaches the cumulative admitted mass at
//! s. Arrivals beyond a full buffer are shed proportionally across stages;
//! shed cohorts are never answered, so their guards keep firing to the end
//! of the schedule, exactly like the event model's dropped copies.

use thiserror::Error;

use crate::fluid::{integrate, retransmission_rate, FluidError, FluidState, InputModel, Rates, Trajectory};
use crate::ids::Seconds;
use crate::scenario::Scenario;
use crate::sip::timer::{retransmission_schedule, TimerKind};

const EPS: f64 = 1e-9;
const FIXED_POINT_ROUNDS: usize = 24;

// Upstream stage layout.
const U_INV: usize = 0; // fresh Invites from callers
const U_TRY: usize = 1; // Trying/Ring coming back up (absorbed or relayed for free)
const U_OK: usize = 2; // OKs coming back up (relaying one spawns an Ack)
const U_RET: usize = 3; // guard-copy emission jobs
const U_ACK: usize = 4; // Acks from callers

// Downstream stage layout.
const D_INV: usize = 0; // forwarded original Invites
const D_DUP: usize = 1; // duplicate Invite copies
const D_TRY: usize = 2; // Trying/Ring from the answering server
const D_OK: usize = 3; // OKs (original and re-emitted) from the answering server
const D_ACK: usize = 4; // forwarded Acks

#[derive(Debug, Error)]
pub enum TandemError {
    #[error("fluid tandem needs {0}")]
    Unsupported(&'static str),
    #[error(transparent)]
    Fluid(#[from] FluidError),
}

/// Per-server flow history on the step grid. Cumulative curves are stored at
/// step boundaries; rates and admission factors per step.
struct FlowHist {
    cap: f64,
    dt: Seconds,
    /// Admitted cumulative arrivals at boundaries 0..=n.
    acum: Vec<f64>,
    /// Served cumulative at boundaries 0..=n (reconciled from queue state).
    scum: Vec<f64>,
    /// Admitted fraction of offered arrivals, per step.
    adm: Vec<f64>,
    /// Admitted per-stage arrival rates, per step.
    stage: Vec<[f64; 5]>,
    /// Admitted total arrival rate, per step.
    total: Vec<f64>,
}

impl FlowHist {
    fn new(cap: f64, dt: Seconds) -> Self {
        FlowHist {
            cap,
            dt,
            acum: vec![0.0],
            scum: Vec::new(),
            adm: Vec::new(),
            stage: Vec::new(),
            total: Vec::new(),
        }
    }

    fn step_index(&self, s: Seconds) -> usize {
        ((s / self.dt).floor() as usize).min(self.total.len().saturating_sub(1))
    }

    /// Admitted mass that arrived before time `s`.
    fn arrival_pos(&self, s: Seconds) -> f64 {
        if self.total.is_empty() || s <= 0.0 {
            return 0.0;
        }
        let j = self.step_index(s);
        self.acum[j] + (s - j as f64 * self.dt).max(0.0) * self.total[j]
    }

    fn adm_at(&self, s: Seconds) -> f64 {
        if self.adm.is_empty() {
            return 1.0;
        }
        self.adm[self.step_index(s)]
    }

    fn scum_now(&self) -> f64 {
        *self.scum.last().expect("reconciled at least once")
    }

    /// When the cohort at FIFO position `pos` was (or None: will be) served.
    fn service_time(&self, pos: f64) -> Option<Seconds> {
        let last = self.scum_now();
        if pos > last {
            return None;
        }
        // First boundary where the served curve reaches pos.
        let mut lo = 0usize;
        let mut hi = self.scum.len() - 1;
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.scum[mid] >= pos {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        if lo == 0 {
            return Some(0.0);
        }
        let rate = (self.scum[lo] - self.scum[lo - 1]) / self.dt;
        let within = if rate > 0.0 {
            (pos - self.scum[lo - 1]) / rate
        } else {
            0.0
        };
        Some((lo - 1) as f64 * self.dt + within)
    }

    /// Arrival time of the cohort at FIFO position `pos`.
    fn cohort_time(&self, pos: f64) -> Seconds {
        let mut lo = 0usize;
        let mut hi = self.acum.len() - 1;
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.acum[mid] >= pos {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        if lo == 0 {
            return 0.0;
        }
        let rate = (self.acum[lo] - self.acum[lo - 1]) / self.dt;
        let within = if rate > 0.0 {
            (pos - self.acum[lo - 1]) / rate
        } else {
            0.0
        };
        (lo - 1) as f64 * self.dt + within
    }

    /// Output mix while busy comes from the cohort currently in service.
    fn service_shares(&self) -> Option<[f64; 5]> {
        let tau = self.cohort_time(self.scum_now());
        let j = self.step_index(tau);
        if j >= self.total.len() || self.total[j] <= 0.0 {
            return None;
        }
        let mut shares = [0.0; 5];
        for (i, s) in shares.iter_mut().enumerate() {
            *s = self.stage[j][i] / self.total[j];
        }
        Some(shares)
    }

    fn record_step(&mut self, adm: f64, stage: [f64; 5], total: f64) {
        self.adm.push(adm);
        self.stage.push(stage);
        self.total.push(total);
        let last = *self.acum.last().unwrap();
        self.acum.push(last + total * self.dt);
    }

    fn reconcile(&mut self, q: f64) {
        let boundary = self.acum[self.scum.len()] - q;
        let floor = self.scum.last().copied().unwrap_or(0.0);
        self.scum.push(boundary.max(floor));
    }
}

/// Serve rate and per-stage output rates for one server given its inputs.
fn flow_through(
    hist: &FlowHist,
    ins: &[f64; 5],
    q: f64,
    mu: f64,
) -> (f64, [f64; 5]) {
    let tot: f64 = ins.iter().sum();
    if q > EPS {
        let shares = hist
            .service_shares()
            .unwrap_or_else(|| normalized(ins, tot));
        let mut outs = [0.0; 5];
        for i in 0..5 {
            outs[i] = mu * shares[i];
        }
        (mu, outs)
    } else {
        let sigma = tot.min(mu);
        let scale = if tot > 0.0 { sigma / tot } else { 0.0 };
        let mut outs = [0.0; 5];
        for i in 0..5 {
            outs[i] = ins[i] * scale;
        }
        (sigma, outs)
    }
}

fn normalized(ins: &[f64; 5], tot: f64) -> [f64; 5] {
    let mut shares = [0.0; 5];
    if tot > 0.0 {
        for i in 0..5 {
            shares[i] = ins[i] / tot;
        }
    }
    shares
}

pub struct Tandem {
    dt: Seconds,
    duration: Seconds,
    lam: Box<dyn Fn(Seconds) -> f64>,
    mu_up: Box<dyn Fn(Seconds) -> f64>,
    mu_down: Box<dyn Fn(Seconds) -> f64>,
    hop_offsets: Vec<Seconds>,
    e2e_offsets: Vec<Seconds>,
    up: FlowHist,
    down: FlowHist,
    /// Upstream Invite-forward rate per step (guard arming rate).
    fwd_rate: Vec<f64>,
    /// Downstream original-Invite service rate per step (OK arming rate).
    ok_arm_rate: Vec<f64>,
    /// Last step's solution, the next step's starting guess.
    guess: ([f64; 5], [f64; 5]),
    steps_done: usize,
}

impl Tandem {
    pub fn from_scenario(sc: &Scenario) -> Result<Tandem, TandemError> {
        if sc.proxies != 2 || sc.cluster != 0 {
            return Err(TandemError::Unsupported("a plain two-proxy chain"));
        }
        if sc.teardown {
            return Err(TandemError::Unsupported(
                "teardown disabled (setup-only message flows)",
            ));
        }
        if sc.link_loss != 0.0 {
            return Err(TandemError::Unsupported("loss-free links"));
        }
        let hop = retransmission_schedule(TimerKind::HopByHop, sc.t1, sc.t2);
        let e2e = retransmission_schedule(TimerKind::EndToEnd, sc.t1, sc.t2);
        let dt = sc.fluid_dt;
        let mk_mu = |idx: usize, sc: &Scenario| -> Box<dyn Fn(Seconds) -> f64> {
            let base = sc.mu_for(idx);
            let mut steps: Vec<(Seconds, f64)> = Vec::new();
            if let Some(spans) = sc.slowdowns.get(&idx) {
                for sp in spans {
                    steps.push((sp.from, sp.factor));
                    steps.push((sp.to, 1.0));
                }
                steps.sort_by(|a, b| a.0.total_cmp(&b.0));
            }
            Box::new(move |t| {
                let mut factor = 1.0;
                for &(from, f) in &steps {
                    if t >= from {
                        factor = f;
                    } else {
                        break;
                    }
                }
                base * factor
            })
        };
        let workload = sc.workload.clone();
        Ok(Tandem {
            dt,
            duration: sc.duration,
            lam: Box::new(move |t| workload.rate_at(t)),
            mu_up: mk_mu(0, sc),
            mu_down: mk_mu(1, sc),
            hop_offsets: hop.offsets,
            e2e_offsets: e2e.offsets,
            up: FlowHist::new(sc.buffer_for(0) as f64, dt),
            down: FlowHist::new(sc.buffer_for(1) as f64, dt),
            fwd_rate: Vec::new(),
            ok_arm_rate: Vec::new(),
            guess: ([0.0; 5], [0.0; 5]),
            steps_done: 0,
        })
    }

    /// Integrate the whole scenario horizon.
    pub fn run(sc: &Scenario) -> Result<Trajectory, TandemError> {
        let mut model = Tandem::from_scenario(sc)?;
        let t_end = model.duration;
        let dt = model.dt;
        let t1 = sc.t1;
        Ok(integrate(
            FluidState { q1: 0.0, q2: 0.0 },
            &mut model,
            dt,
            t_end,
            t1,
        )?)
    }

    /// Fraction of the Invite cohort forwarded at `s` whose Trying answer
    /// has been served upstream by `t`. The unanswered remainder is what
    /// keeps the guard schedule firing.
    fn invite_answered(&self, s: Seconds, t: Seconds) -> f64 {
        let f_down = self.down.adm_at(s);
        if f_down <= 0.0 {
            return 0.0;
        }
        let served_down = match self.down.service_time(self.down.arrival_pos(s)) {
            Some(u) => u,
            None => return 0.0,
        };
        let f_up = self.up.adm_at(served_down);
        if f_up <= 0.0 {
            return 0.0;
        }
        let pos_up = self.up.arrival_pos(served_down);
        if self.up.scum_now() >= pos_up && served_down <= t {
            f_down * f_up
        } else {
            0.0
        }
    }

    /// Fraction of the OK cohort emitted at `u` whose Ack has come all the
    /// way back (down, up, up again as Ack, down again) by `t`.
    fn ok_answered(&self, u: Seconds, t: Seconds) -> f64 {
        let f1 = self.down.adm_at(u);
        if f1 <= 0.0 {
            return 0.0;
        }
        let e1 = match self.down.service_time(self.down.arrival_pos(u)) {
            Some(v) => v,
            None => return 0.0,
        };
        let f2 = self.up.adm_at(e1);
        if f2 <= 0.0 {
            return 0.0;
        }
        let e2 = match self.up.service_time(self.up.arrival_pos(e1)) {
            Some(v) => v,
            None => return 0.0,
        };
        // The OK reached the caller at e2; the Ack re-enters upstream there.
        let f3 = self.up.adm_at(e2);
        if f3 <= 0.0 {
            return 0.0;
        }
        let e3 = match self.up.service_time(self.up.arrival_pos(e2)) {
            Some(v) => v,
            None => return 0.0,
        };
        let f4 = self.down.adm_at(e3);
        if f4 <= 0.0 {
            return 0.0;
        }
        let pos = self.down.arrival_pos(e3);
        if self.down.scum_now() >= pos && e3 <= t {
            f1 * f2 * f3 * f4
        } else {
            0.0
        }
    }
}

impl InputModel for Tandem {
    fn rates_at(&mut self, t: Seconds, state: &FluidState) -> Rates {
        debug_assert!((t - self.steps_done as f64 * self.dt).abs() < 1e-9);
        self.up.reconcile(state.q1);
        self.down.reconcile(state.q2);

        let mu_up = (self.mu_up)(t);
        let mu_down = (self.mu_down)(t);
        let lam = (self.lam)(t);

        // Guard-copy rates depend only on history, so they sit outside the
        // echo fixed point.
        let fwd = &self.fwd_rate;
        let dt = self.dt;
        let sent_inv = |s: Seconds| {
            let j = ((s / dt).floor() as usize).min(fwd.len().saturating_sub(1));
            if fwd.is_empty() {
                0.0
            } else {
                fwd[j]
            }
        };
        let ans_inv = |s: Seconds, tt: Seconds| self.invite_answered(s, tt);
        let r_prime = retransmission_rate(&sent_inv, &ans_inv, &self.hop_offsets, t);

        let arm = &self.ok_arm_rate;
        let sent_ok = |s: Seconds| {
            let j = ((s / dt).floor() as usize).min(arm.len().saturating_sub(1));
            if arm.is_empty() {
                0.0
            } else {
                arm[j]
            }
        };
        let ans_ok = |s: Seconds, tt: Seconds| self.ok_answered(s, tt);
        let ok_dup = retransmission_rate(&sent_ok, &ans_ok, &self.e2e_offsets, t);

        // Echo fixed point: instant couplings (answering-server bounce,
        // caller Ack bounce) make inputs depend on the same step's outputs.
        let (mut ins_up, mut ins_down) = self.guess;
        let mut out_up = [0.0; 5];
        let mut out_down = [0.0; 5];
        let mut sig_up = 0.0;
        let mut sig_down = 0.0;
        for _ in 0..FIXED_POINT_ROUNDS {
            let (su, ou) = flow_through(&self.up, &ins_up, state.q1, mu_up);
            let (sd, od) = flow_through(&self.down, &ins_down, state.q2, mu_down);
            let next_up = [
                lam,
                od[D_TRY] + od[D_DUP],
                od[D_OK],
                r_prime,
                ou[U_OK],
            ];
            let next_down = [
                ou[U_INV],
                ou[U_RET],
                2.0 * od[D_INV],
                od[D_INV] + ok_dup,
                ou[U_ACK],
            ];
            let delta: f64 = next_up
                .iter()
                .zip(ins_up.iter())
                .chain(next_down.iter().zip(ins_down.iter()))
                .map(|(a, b)| (a - b).abs())
                .sum();
            ins_up = next_up;
            ins_down = next_down;
            out_up = ou;
            out_down = od;
            sig_up = su;
            sig_down = sd;
            if delta < 1e-10 {
                break;
            }
        }
        self.guess = (ins_up, ins_down);

        // Shed what the buffers cannot take, evenly across stages.
        let thin = |ins: &[f64; 5], q: f64, sigma: f64, cap: f64, dt: Seconds| -> f64 {
            let tot: f64 = ins.iter().sum();
            if tot <= 0.0 {
                return 1.0;
            }
            ((sigma + (cap - q) / dt) / tot).clamp(0.0, 1.0)
        };
        let f_up = thin(&ins_up, state.q1, sig_up, self.up.cap, self.dt);
        let f_down = thin(&ins_down, state.q2, sig_down, self.down.cap, self.dt);

        let mut adm_up = [0.0; 5];
        let mut adm_down = [0.0; 5];
        for i in 0..5 {
            adm_up[i] = ins_up[i] * f_up;
            adm_down[i] = ins_down[i] * f_down;
        }
        self.up
            .record_step(f_up, adm_up, adm_up.iter().sum());
        self.down
            .record_step(f_down, adm_down, adm_down.iter().sum());
        self.fwd_rate.push(out_up[U_INV]);
        self.ok_arm_rate.push(out_down[D_INV]);
        self.steps_done += 1;

        Rates {
            lambda1: adm_up[U_INV] + adm_up[U_ACK],
            lambda2: adm_down[D_INV] + adm_down[D_ACK],
            r1: 0.0,
            r2: adm_down[D_DUP],
            r2_prime: adm_up[U_RET],
            nu1: adm_up[U_TRY] + adm_up[U_OK],
            nu2: adm_down[D_TRY] + adm_down[D_OK],
            mu1: mu_up,
            mu2: mu_down,
        }
    }
}
