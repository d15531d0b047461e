//! Run accounting and the CSV artifacts.
//!
//! Floats are printed with a fixed width so identical runs produce
//! byte-identical files.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::ids::{CallId, Seconds};
use crate::sip::message::RetransmissionClass;
use crate::sip::session::CallOutcome;

#[derive(Debug, Clone)]
pub struct CallRecord {
    pub id: CallId,
    pub start_t: Seconds,
    pub established_t: Option<Seconds>,
    pub end_t: Option<Seconds>,
    pub outcome: Option<CallOutcome>,
}

/// One sampled row per server per tick.
#[derive(Debug, Clone, Copy)]
pub struct SeriesRow {
    pub t: Seconds,
    pub server: usize,
    pub q: usize,
    pub q_r: usize,
    pub rho: f64,
    pub served: u64,
    pub rejected: u64,
    pub dropped: u64,
}

/// Cumulative queueing-delay tally per server per tick. Kept in memory for
/// closed-loop measurements; not part of the CSV artifacts.
#[derive(Debug, Clone, Copy)]
pub struct DelayRow {
    pub t: Seconds,
    pub server: usize,
    pub delay_total: Seconds,
    pub jobs: u64,
}

#[derive(Debug, Default)]
pub struct Metrics {
    pub calls: Vec<CallRecord>,
    index: HashMap<CallId, usize>,
    pub series: Vec<SeriesRow>,
    pub retrans_redundant: u64,
    pub retrans_nonredundant: u64,
    /// Per-tick snapshots of the retransmission tallies, (t, redundant,
    /// non-redundant). In-memory only.
    pub retrans_rows: Vec<(Seconds, u64, u64)>,
    pub delay_rows: Vec<DelayRow>,
}

impl Metrics {
    pub fn new() -> Self {
        Metrics::default()
    }

    pub fn call_started(&mut self, id: CallId, t: Seconds) {
        let idx = self.calls.len();
        self.calls.push(CallRecord {
            id,
            start_t: t,
            established_t: None,
            end_t: None,
            outcome: None,
        });
        self.index.insert(id, idx);
    }

    pub fn call_established(&mut self, id: CallId, t: Seconds) {
        if let Some(&i) = self.index.get(&id) {
            let rec = &mut self.calls[i];
            if rec.established_t.is_none() {
                rec.established_t = Some(t);
            }
        }
    }

    /// First terminal event wins; later ones are ignored.
    pub fn call_ended(&mut self, id: CallId, t: Seconds, outcome: CallOutcome) {
        if let Some(&i) = self.index.get(&id) {
            let rec = &mut self.calls[i];
            if rec.outcome.is_none() {
                rec.end_t = Some(t);
                rec.outcome = Some(outcome);
            }
        }
    }

    pub fn call_is_open(&self, id: CallId) -> bool {
        self.index
            .get(&id)
            .map(|&i| self.calls[i].outcome.is_none())
            .unwrap_or(false)
    }

    pub fn note_retransmission(&mut self, class: RetransmissionClass) {
        match class {
            RetransmissionClass::Redundant => self.retrans_redundant += 1,
            RetransmissionClass::NonRedundant => self.retrans_nonredundant += 1,
        }
    }

    pub fn outcome_count(&self, outcome: CallOutcome) -> usize {
        self.calls
            .iter()
            .filter(|c| c.outcome == Some(outcome))
            .count()
    }

    /// Successful calls per second over the run.
    pub fn goodput(&self, duration: Seconds) -> f64 {
        if duration <= 0.0 {
            return 0.0;
        }
        self.outcome_count(CallOutcome::Success) as f64 / duration
    }

    /// Successful calls whose setup finished inside [from, to).
    pub fn goodput_in_window(&self, from: Seconds, to: Seconds) -> f64 {
        if to <= from {
            return 0.0;
        }
        let n = self
            .calls
            .iter()
            .filter(|c| {
                c.outcome == Some(CallOutcome::Success)
                    && c.established_t.is_some_and(|e| e >= from && e < to)
            })
            .count();
        n as f64 / (to - from)
    }

    pub fn redundant_ratio(&self) -> Option<f64> {
        let total = self.retrans_redundant + self.retrans_nonredundant;
        if total == 0 {
            None
        } else {
            Some(self.retrans_redundant as f64 / total as f64)
        }
    }

    pub fn mean_setup_delay(&self) -> Option<Seconds> {
        let delays: Vec<f64> = self
            .calls
            .iter()
            .filter(|c| c.outcome == Some(CallOutcome::Success))
            .filter_map(|c| c.established_t.map(|e| e - c.start_t))
            .collect();
        if delays.is_empty() {
            None
        } else {
            Some(delays.iter().sum::<f64>() / delays.len() as f64)
        }
    }

    pub fn series_csv(&self) -> String {
        let mut out = String::from("t,server,q,q_r,rho,served_cum,rejected_cum,dropped_cum\n");
        for r in &self.series {
            let _ = writeln!(
                out,
                "{:.4},s{},{},{},{:.6},{},{},{}",
                r.t, r.server, r.q, r.q_r, r.rho, r.served, r.rejected, r.dropped
            );
        }
        out
    }

    pub fn calls_csv(&self) -> String {
        let mut out = String::from("call_id,start_t,end_t,outcome,setup_delay\n");
        for c in &self.calls {
            let end = c.end_t.map(|t| format!("{t:.6}")).unwrap_or_default();
            let outcome = c.outcome.map(|o| o.label()).unwrap_or("open");
            let setup = c
                .established_t
                .map(|e| format!("{:.6}", e - c.start_t))
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{:.6},{},{},{}",
                c.id.0, c.start_t, end, outcome, setup
            );
        }
        out
    }
}

/// Ordered key/value block for summary.csv.
#[derive(Debug, Default)]
pub struct Summary {
    rows: Vec<(String, String)>,
}

impl Summary {
    pub fn new() -> Self {
        Summary::default()
    }

    pub fn push_int(&mut self, key: &str, v: u64) {
        self.rows.push((key.to_string(), v.to_string()));
    }

    pub fn push_f64(&mut self, key: &str, v: f64) {
        self.rows.push((key.to_string(), format!("{v:.6}")));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.rows
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(|v| v.parse().ok())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (k, v) in &self.rows {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outcomes_are_first_write_wins() {
        let mut m = Metrics::new();
        m.call_started(CallId(0), 1.0);
        m.call_ended(CallId(0), 2.0, CallOutcome::Success);
        m.call_ended(CallId(0), 3.0, CallOutcome::TimedOut);
        assert_eq!(m.calls[0].outcome, Some(CallOutcome::Success));
        assert_eq!(m.calls[0].end_t, Some(2.0));
        assert!(!m.call_is_open(CallId(0)));
    }

    #[test]
    fn goodput_counts_successes_only() {
        let mut m = Metrics::new();
        for i in 0..10 {
            m.call_started(CallId(i), 0.0);
        }
        for i in 0..4 {
            m.call_established(CallId(i), 0.5);
            m.call_ended(CallId(i), 1.0, CallOutcome::Success);
        }
        for i in 4..10 {
            m.call_ended(CallId(i), 32.0, CallOutcome::TimedOut);
        }
        assert!((m.goodput(2.0) - 2.0).abs() < 1e-12);
        assert_eq!(m.outcome_count(CallOutcome::TimedOut), 6);
        assert!((m.goodput_in_window(0.0, 1.0) - 4.0).abs() < 1e-12);
        assert_eq!(m.goodput_in_window(1.0, 2.0), 0.0);
    }

    #[test]
    fn redundant_ratio_absent_without_retransmissions() {
        let mut m = Metrics::new();
        assert_eq!(m.redundant_ratio(), None);
        m.note_retransmission(RetransmissionClass::Redundant);
        m.note_retransmission(RetransmissionClass::NonRedundant);
        m.note_retransmission(RetransmissionClass::NonRedundant);
        m.note_retransmission(RetransmissionClass::NonRedundant);
        assert!((m.redundant_ratio().unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn csv_shapes_are_stable() {
        let mut m = Metrics::new();
        m.call_started(CallId(3), 0.25);
        m.call_established(CallId(3), 0.75);
        m.call_ended(CallId(3), 1.5, CallOutcome::Success);
        m.series.push(SeriesRow {
            t: 0.1,
            server: 0,
            q: 5,
            q_r: 2,
            rho: 0.75,
            served: 10,
            rejected: 1,
            dropped: 0,
        });
        assert_eq!(
            m.calls_csv(),
            "call_id,start_t,end_t,outcome,setup_delay\n3,0.250000,1.500000,success,0.500000\n"
        );
        assert_eq!(
            m.series_csv(),
            "t,server,q,q_r,rho,served_cum,rejected_cum,dropped_cum\n0.1000,s0,5,2,0.750000,10,1,0\n"
        );
        let mut s = Summary::new();
        s.push_int("calls_offered", 1);
        s.push_f64("goodput_cps", 0.6666666);
        assert_eq!(
            s.to_csv(),
            "metric,value\ncalls_offered,1\ngoodput_cps,0.666667\n"
        );
        assert_eq!(s.get_f64("goodput_cps").unwrap(), 0.666667);
    }

    #[test]
    fn mean_setup_delay_over_successes() {
        let mut m = Metrics::new();
        m.call_started(CallId(0), 0.0);
        m.call_established(CallId(0), 0.2);
        m.call_ended(CallId(0), 1.0, CallOutcome::Success);
        m.call_started(CallId(1), 0.0);
        m.call_established(CallId(1), 0.6);
        m.call_ended(CallId(1), 1.0, CallOutcome::Success);
        // Established but failed calls don't count.
        m.call_started(CallId(2), 0.0);
        m.call_established(CallId(2), 5.0);
        m.call_ended(CallId(2), 32.0, CallOutcome::TimedOut);
        assert!((m.mean_setup_delay().unwrap() - 0.4).abs() < 1e-12);
    }
}
