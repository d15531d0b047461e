//! Scenario files: a flat `key = value` format, one setting per line.
//!
//! Blank lines and lines starting with `#` are skipped. Keys are dotted
//! paths. Unknown keys, duplicate keys, and malformed values are hard errors
//! carrying the offending line number; a scenario that parses is a scenario
//! that runs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use crate::balancer::{BalancerPolicy, TransactionCosts};
use crate::controllers::{ControllerConfig, RatioDenominator};
use crate::ids::Seconds;
use crate::server::ServiceDist;
use crate::workload::{ArrivalProcess, Segment, WorkloadProfile};

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {reason}")]
    BadValue {
        line: usize,
        key: String,
        reason: String,
    },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ControllerScope {
    All,
    Servers(BTreeSet<usize>),
}

impl ControllerScope {
    pub fn applies_to(&self, server_idx: usize) -> bool {
        match self {
            ControllerScope::All => true,
            ControllerScope::Servers(set) => set.contains(&server_idx),
        }
    }
}

/// A slowdown episode: the service-rate multiplier takes `factor` on
/// [from, to).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlowdownSpan {
    pub from: Seconds,
    pub to: Seconds,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub uacs: usize,
    pub proxies: usize,
    pub cluster: usize,
    pub mu_default: f64,
    pub buffer_default: usize,
    pub reject_cost: f64,
    pub mu_overrides: BTreeMap<usize, f64>,
    pub buffer_overrides: BTreeMap<usize, usize>,
    pub t1: Seconds,
    pub t2: Seconds,
    pub link_loss: f64,
    pub link_delay: Seconds,
    pub workload: WorkloadProfile,
    pub slowdowns: BTreeMap<usize, Vec<SlowdownSpan>>,
    pub controller: ControllerConfig,
    pub controller_tick: Seconds,
    pub controller_scope: ControllerScope,
    pub balancer: BalancerPolicy,
    pub costs: TransactionCosts,
    pub duration: Seconds,
    pub seed: u64,
    pub teardown: bool,
    pub sample_tick: Seconds,
    pub trace: bool,
    pub service_dist: ServiceDist,
    pub fluid_enabled: bool,
    pub fluid_dt: Seconds,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            uacs: 1,
            proxies: 1,
            cluster: 0,
            mu_default: 1000.0,
            buffer_default: 500,
            reject_cost: 0.5,
            mu_overrides: BTreeMap::new(),
            buffer_overrides: BTreeMap::new(),
            t1: 0.5,
            t2: 4.0,
            link_loss: 0.0,
            link_delay: 0.0,
            workload: WorkloadProfile {
                segments: vec![Segment {
                    start: 0.0,
                    end: 60.0,
                    rate: 100.0,
                }],
                process: ArrivalProcess::Poisson,
            },
            slowdowns: BTreeMap::new(),
            controller: ControllerConfig::None,
            controller_tick: 0.5,
            controller_scope: ControllerScope::All,
            balancer: BalancerPolicy::Cjsq,
            costs: TransactionCosts::default(),
            duration: 60.0,
            seed: 42,
            teardown: true,
            sample_tick: 0.1,
            trace: false,
            service_dist: ServiceDist::Exponential,
            fluid_enabled: false,
            fluid_dt: 0.01,
        }
    }
}

impl Scenario {
    /// Proxies (or cluster members) plus the UAS at the end.
    pub fn server_count(&self) -> usize {
        if self.cluster >= 2 {
            self.cluster + 1
        } else {
            self.proxies + 1
        }
    }

    pub fn uas_index(&self) -> usize {
        self.server_count() - 1
    }

    pub fn mu_for(&self, idx: usize) -> f64 {
        self.mu_overrides.get(&idx).copied().unwrap_or(self.mu_default)
    }

    pub fn buffer_for(&self, idx: usize) -> usize {
        self.buffer_overrides
            .get(&idx)
            .copied()
            .unwrap_or(self.buffer_default)
    }

    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let mut seen: HashMap<String, usize> = HashMap::new();
        let mut sc = Scenario::default();
        // Controller params are collected and resolved against the chosen
        // algorithm at the end, so key order in the file never matters.
        let mut ctrl_name: Option<String> = None;
        let mut ctrl_params: Vec<(String, String, usize)> = Vec::new();
        let mut saw_workload_segments = false;

        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let Some((k, v)) = t.split_once('=') else {
                return Err(ScenarioError::Malformed {
                    line,
                    text: t.to_string(),
                });
            };
            let key = k.trim().to_string();
            let val = v.trim().to_string();
            if let Some(prev) = seen.insert(key.clone(), line) {
                let _ = prev;
                return Err(ScenarioError::DuplicateKey { line, key });
            }

            let bad = |reason: String| ScenarioError::BadValue {
                line,
                key: key.clone(),
                reason,
            };

            match key.as_str() {
                "topology.uacs" => sc.uacs = parse_num(&val).map_err(bad)?,
                "topology.proxies" => sc.proxies = parse_num(&val).map_err(bad)?,
                "topology.cluster" => sc.cluster = parse_num(&val).map_err(bad)?,
                "server.mu" => sc.mu_default = parse_num(&val).map_err(bad)?,
                "server.buffer" => sc.buffer_default = parse_num(&val).map_err(bad)?,
                "server.reject_cost" => sc.reject_cost = parse_num(&val).map_err(bad)?,
                "timers.t1" => sc.t1 = parse_num(&val).map_err(bad)?,
                "timers.t2" => sc.t2 = parse_num(&val).map_err(bad)?,
                "link.loss" => sc.link_loss = parse_num(&val).map_err(bad)?,
                "link.delay" => sc.link_delay = parse_num(&val).map_err(bad)?,
                "workload.segments" => {
                    sc.workload.segments = parse_segments(&val).map_err(bad)?;
                    saw_workload_segments = true;
                }
                "workload.process" => {
                    sc.workload.process = match val.as_str() {
                        "poisson" => ArrivalProcess::Poisson,
                        "deterministic" => ArrivalProcess::Deterministic,
                        other => return Err(bad(format!("unknown process `{other}`"))),
                    }
                }
                "controller.name" => ctrl_name = Some(val),
                "controller.tick" => sc.controller_tick = parse_num(&val).map_err(bad)?,
                "controller.scope" => {
                    sc.controller_scope = parse_scope(&val).map_err(bad)?;
                }
                "balancer.name" => {
                    sc.balancer = match val.as_str() {
                        "cjsq" => BalancerPolicy::Cjsq,
                        "tjsq" => BalancerPolicy::Tjsq,
                        "tlwl" => BalancerPolicy::Tlwl,
                        other => return Err(bad(format!("unknown balancer `{other}`"))),
                    }
                }
                "balancer.cost.invite" => sc.costs.invite = parse_num(&val).map_err(bad)?,
                "balancer.cost.bye" => sc.costs.bye = parse_num(&val).map_err(bad)?,
                "run.duration" => sc.duration = parse_num(&val).map_err(bad)?,
                "run.seed" => sc.seed = parse_num(&val).map_err(bad)?,
                "run.teardown" => sc.teardown = parse_bool(&val).map_err(bad)?,
                "run.sample_tick" => sc.sample_tick = parse_num(&val).map_err(bad)?,
                "run.trace" => sc.trace = parse_bool(&val).map_err(bad)?,
                "service.dist" => {
                    sc.service_dist = match val.as_str() {
                        "exponential" => ServiceDist::Exponential,
                        "deterministic" => ServiceDist::Deterministic,
                        other => return Err(bad(format!("unknown distribution `{other}`"))),
                    }
                }
                "fluid.enabled" => sc.fluid_enabled = parse_bool(&val).map_err(bad)?,
                "fluid.dt" => sc.fluid_dt = parse_num(&val).map_err(bad)?,
                _ => {
                    if let Some(rest) = key.strip_prefix("server.mu.s") {
                        let idx: usize = rest
                            .parse()
                            .map_err(|_| bad(format!("bad server index `{rest}`")))?;
                        sc.mu_overrides.insert(idx, parse_num(&val).map_err(bad)?);
                    } else if let Some(rest) = key.strip_prefix("server.buffer.s") {
                        let idx: usize = rest
                            .parse()
                            .map_err(|_| bad(format!("bad server index `{rest}`")))?;
                        sc.buffer_overrides
                            .insert(idx, parse_num(&val).map_err(bad)?);
                    } else if let Some(rest) = key.strip_prefix("slowdown.s") {
                        let idx: usize = rest
                            .parse()
                            .map_err(|_| bad(format!("bad server index `{rest}`")))?;
                        sc.slowdowns.insert(idx, parse_slowdowns(&val).map_err(bad)?);
                    } else if let Some(param) = key.strip_prefix("controller.") {
                        ctrl_params.push((param.to_string(), val, line));
                    } else {
                        return Err(ScenarioError::UnknownKey { line, key });
                    }
                }
            }
        }

        if !saw_workload_segments {
            // Keep the default profile but stretch it to the run length.
            if let Some(seg) = sc.workload.segments.first_mut() {
                seg.end = sc.duration;
            }
        }

        sc.controller = build_controller(
            ctrl_name.as_deref().unwrap_or("none"),
            &ctrl_params,
            sc.t1,
        )?;

        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let inv = |m: String| Err(ScenarioError::Invalid(m));
        if self.uacs == 0 {
            return inv("topology.uacs must be at least 1".into());
        }
        if self.proxies == 0 {
            return inv("topology.proxies must be at least 1".into());
        }
        if self.cluster == 1 {
            return inv("topology.cluster must be 0 or at least 2".into());
        }
        if self.cluster >= 2 && self.proxies != 1 {
            return inv("a cluster replaces the proxy tier; set topology.proxies = 1".into());
        }
        if self.mu_default <= 0.0 || self.mu_overrides.values().any(|&m| m <= 0.0) {
            return inv("service rates must be positive".into());
        }
        if self.buffer_default == 0 || self.buffer_overrides.values().any(|&b| b == 0) {
            return inv("buffers must hold at least one message".into());
        }
        if !(0.0..1.0).contains(&self.link_loss) {
            return inv(format!("link.loss {} outside [0,1)", self.link_loss));
        }
        if self.link_delay < 0.0 {
            return inv("link.delay must be nonnegative".into());
        }
        if self.t1 <= 0.0 || self.t2 < self.t1 {
            return inv("timers need t1 > 0 and t2 >= t1".into());
        }
        if self.duration <= 0.0 {
            return inv("run.duration must be positive".into());
        }
        if self.sample_tick <= 0.0 || self.controller_tick <= 0.0 {
            return inv("tick intervals must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.reject_cost) {
            return inv("server.reject_cost must sit in [0,1]".into());
        }
        if self.fluid_dt <= 0.0 {
            return inv("fluid.dt must be positive".into());
        }
        self.workload
            .validate()
            .map_err(|e| ScenarioError::Invalid(format!("workload: {e}")))?;
        let n = self.server_count();
        for idx in self
            .mu_overrides
            .keys()
            .chain(self.buffer_overrides.keys())
            .chain(self.slowdowns.keys())
        {
            if *idx >= n {
                return inv(format!("server index s{idx} out of range (have {n})"));
            }
        }
        if let ControllerScope::Servers(set) = &self.controller_scope {
            if let Some(&idx) = set.iter().find(|&&i| i >= n) {
                return inv(format!("controller scope s{idx} out of range (have {n})"));
            }
        }
        for spans in self.slowdowns.values() {
            for s in spans {
                if s.factor <= 0.0 {
                    return inv("slowdown factors must be positive".into());
                }
                if s.to <= s.from {
                    return inv("slowdown spans need to > from".into());
                }
            }
        }
        Ok(())
    }

    /// Canonical text form; `parse` of the result reproduces `self`.
    pub fn emit(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("topology.uacs", self.uacs.to_string());
        kv("topology.proxies", self.proxies.to_string());
        kv("topology.cluster", self.cluster.to_string());
        kv("server.mu", fmt_f64(self.mu_default));
        kv("server.buffer", self.buffer_default.to_string());
        kv("server.reject_cost", fmt_f64(self.reject_cost));
        for (idx, mu) in &self.mu_overrides {
            kv(&format!("server.mu.s{idx}"), fmt_f64(*mu));
        }
        for (idx, b) in &self.buffer_overrides {
            kv(&format!("server.buffer.s{idx}"), b.to_string());
        }
        kv("timers.t1", fmt_f64(self.t1));
        kv("timers.t2", fmt_f64(self.t2));
        kv("link.loss", fmt_f64(self.link_loss));
        kv("link.delay", fmt_f64(self.link_delay));
        kv(
            "workload.segments",
            self.workload
                .segments
                .iter()
                .map(|seg| format!("{}-{}:{}", fmt_f64(seg.start), fmt_f64(seg.end), fmt_f64(seg.rate)))
                .collect::<Vec<_>>()
                .join(","),
        );
        kv(
            "workload.process",
            match self.workload.process {
                ArrivalProcess::Poisson => "poisson".into(),
                ArrivalProcess::Deterministic => "deterministic".into(),
            },
        );
        for (idx, spans) in &self.slowdowns {
            kv(
                &format!("slowdown.s{idx}"),
                spans
                    .iter()
                    .map(|sp| format!("{}-{}:{}", fmt_f64(sp.from), fmt_f64(sp.to), fmt_f64(sp.factor)))
                    .collect::<Vec<_>>()
                    .join(","),
            );
        }
        kv("controller.name", self.controller.name().to_string());
        for (k, v) in controller_params(&self.controller) {
            kv(&format!("controller.{k}"), v);
        }
        kv("controller.tick", fmt_f64(self.controller_tick));
        kv(
            "controller.scope",
            match &self.controller_scope {
                ControllerScope::All => "all".into(),
                ControllerScope::Servers(set) => set
                    .iter()
                    .map(|i| format!("s{i}"))
                    .collect::<Vec<_>>()
                    .join(","),
            },
        );
        kv("balancer.name", self.balancer.name().to_string());
        kv("balancer.cost.invite", fmt_f64(self.costs.invite));
        kv("balancer.cost.bye", fmt_f64(self.costs.bye));
        kv("run.duration", fmt_f64(self.duration));
        kv("run.seed", self.seed.to_string());
        kv("run.teardown", self.teardown.to_string());
        kv("run.sample_tick", fmt_f64(self.sample_tick));
        kv("run.trace", self.trace.to_string());
        kv(
            "service.dist",
            match self.service_dist {
                ServiceDist::Exponential => "exponential".into(),
                ServiceDist::Deterministic => "deterministic".into(),
            },
        );
        kv("fluid.enabled", self.fluid_enabled.to_string());
        kv("fluid.dt", fmt_f64(self.fluid_dt));
        s
    }
}

fn fmt_f64(x: f64) -> String {
    // Shortest round-trip form; `{}` on f64 is already lossless in Rust.
    format!("{x}")
}

trait FromStrNum: Sized {
    fn from_str_num(s: &str) -> Option<Self>;
}

impl FromStrNum for f64 {
    fn from_str_num(s: &str) -> Option<Self> {
        s.parse().ok().filter(|x: &f64| x.is_finite())
    }
}
impl FromStrNum for usize {
    fn from_str_num(s: &str) -> Option<Self> {
        s.parse().ok()
    }
}
impl FromStrNum for u64 {
    fn from_str_num(s: &str) -> Option<Self> {
        s.parse().ok()
    }
}

fn parse_num<T: FromStrNum>(s: &str) -> Result<T, String> {
    T::from_str_num(s).ok_or_else(|| format!("`{s}` is not a valid number"))
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s {
        "true" | "on" | "yes" => Ok(true),
        "false" | "off" | "no" => Ok(false),
        other => Err(format!("`{other}` is not a boolean")),
    }
}

fn parse_segments(s: &str) -> Result<Vec<Segment>, String> {
    s.split(',')
        .map(|part| {
            let part = part.trim();
            let (range, rate) = part
                .split_once(':')
                .ok_or_else(|| format!("segment `{part}` missing `:rate`"))?;
            let (a, b) = range
                .split_once('-')
                .ok_or_else(|| format!("segment `{part}` missing `start-end`"))?;
            Ok(Segment {
                start: parse_num(a.trim())?,
                end: parse_num(b.trim())?,
                rate: parse_num(rate.trim())?,
            })
        })
        .collect()
}

fn parse_slowdowns(s: &str) -> Result<Vec<SlowdownSpan>, String> {
    s.split(',')
        .map(|part| {
            let part = part.trim();
            let (range, factor) = part
                .split_once(':')
                .ok_or_else(|| format!("span `{part}` missing `:factor`"))?;
            let (a, b) = range
                .split_once('-')
                .ok_or_else(|| format!("span `{part}` missing `from-to`"))?;
            Ok(SlowdownSpan {
                from: parse_num(a.trim())?,
                to: parse_num(b.trim())?,
                factor: parse_num(factor.trim())?,
            })
        })
        .collect()
}

fn parse_scope(s: &str) -> Result<ControllerScope, String> {
    if s == "all" {
        return Ok(ControllerScope::All);
    }
    let mut set = BTreeSet::new();
    for part in s.split(',') {
        let part = part.trim();
        let idx = part
            .strip_prefix('s')
            .and_then(|r| r.parse::<usize>().ok())
            .ok_or_else(|| format!("`{part}` is not a server id like `s0`"))?;
        set.insert(idx);
    }
    if set.is_empty() {
        return Err("scope lists no servers".into());
    }
    Ok(ControllerScope::Servers(set))
}

type ParamMap<'a> = BTreeMap<&'a str, (&'a str, usize)>;

fn take_f64(map: &mut ParamMap, key: &str, default: f64) -> Result<f64, ScenarioError> {
    match map.remove(key) {
        None => Ok(default),
        Some((v, line)) => parse_num(v).map_err(|reason| ScenarioError::BadValue {
            line,
            key: format!("controller.{key}"),
            reason,
        }),
    }
}

fn build_controller(
    name: &str,
    params: &[(String, String, usize)],
    t1: Seconds,
) -> Result<ControllerConfig, ScenarioError> {
    let mut map: ParamMap = BTreeMap::new();
    for (k, v, line) in params {
        map.insert(k.as_str(), (v.as_str(), *line));
    }
    let m = &mut map;

    let cfg = match name {
        "none" => ControllerConfig::None,
        "bangbang" => ControllerConfig::BangBang {
            high: take_f64(m, "high", 200.0)? as usize,
            low: take_f64(m, "low", 100.0)? as usize,
        },
        "occupancy" => ControllerConfig::Occupancy {
            rho_target: take_f64(m, "rho_target", 0.8)?,
            gain: take_f64(m, "gain", 1.0)?,
        },
        "priority" => {
            let lo = take_f64(m, "th_low", -1.0)?;
            let hi = take_f64(m, "th_high", -1.0)?;
            let thresholds = if lo >= 0.0 && hi >= 0.0 {
                Some((lo as usize, hi as usize))
            } else {
                None
            };
            ControllerConfig::Priority { thresholds }
        }
        "window" => ControllerConfig::Window {
            window: take_f64(m, "window", 20.0)? as u64,
        },
        "retryafter" => ControllerConfig::RetryAfter {
            q_high: take_f64(m, "q_high", 200.0)? as usize,
            q_target: take_f64(m, "q_target", 50.0)? as usize,
        },
        "rate-occupancy" => ControllerConfig::RateOccupancy {
            rho_target: take_f64(m, "rho_target", 0.8)?,
            max_rate: take_f64(m, "max_rate", 1e9)?,
        },
        "rate-delay" => ControllerConfig::RateDelay {
            d_target: take_f64(m, "d_target", 0.2)?,
            max_rate: take_f64(m, "max_rate", 1e9)?,
        },
        "rtqc" => ControllerConfig::Rtqc {
            p_min: take_f64(m, "p_min", 0.2)?,
            horizon: take_f64(m, "horizon", 64.0 * t1)?,
            alpha: take_f64(m, "alpha", 0.3)?,
            t1,
        },
        "rrrc" => {
            let denom = match m.remove("denom") {
                None => RatioDenominator::Retransmissions,
                Some(("retrans", _)) => RatioDenominator::Retransmissions,
                Some(("messages", _)) => RatioDenominator::Messages,
                Some((other, line)) => {
                    return Err(ScenarioError::BadValue {
                        line,
                        key: "controller.denom".into(),
                        reason: format!("unknown denominator `{other}`"),
                    })
                }
            };
            ControllerConfig::Rrrc {
                setpoint: take_f64(m, "setpoint", 0.1)?,
                kp: take_f64(m, "kp", 0.1)?,
                ki: take_f64(m, "ki", 0.05)?,
                p_min: take_f64(m, "p_min", 0.05)?,
                window: take_f64(m, "meas_window", 2.0)?,
                denom,
            }
        }
        // Delay error is measured in seconds while the output is a
        // probability, so the proportional gain stays small; estimator noise
        // of a second would otherwise swing the output by half its range.
        "rtdc" => ControllerConfig::Rtdc {
            d_target: take_f64(m, "d_target", 0.2)?,
            kp: take_f64(m, "kp", 0.1)?,
            ki: take_f64(m, "ki", 0.2)?,
            p_min: take_f64(m, "p_min", 0.05)?,
            alpha: take_f64(m, "alpha", 0.1)?,
        },
        other => {
            return Err(ScenarioError::Invalid(format!(
                "unknown controller `{other}`"
            )))
        }
    };

    if let Some((key, (_, line))) = map.into_iter().next() {
        return Err(ScenarioError::UnknownKey {
            line,
            key: format!("controller.{key} (not a `{name}` parameter)"),
        });
    }
    Ok(cfg)
}

fn controller_params(cfg: &ControllerConfig) -> Vec<(&'static str, String)> {
    let mut pairs = Vec::new();
    let mut kv = |k: &'static str, v: String| pairs.push((k, v));
    match cfg {
        ControllerConfig::None => {}
        ControllerConfig::BangBang { high, low } => {
            kv("high", high.to_string());
            kv("low", low.to_string());
        }
        ControllerConfig::Occupancy { rho_target, gain } => {
            kv("rho_target", fmt_f64(*rho_target));
            kv("gain", fmt_f64(*gain));
        }
        ControllerConfig::Priority { thresholds } => {
            if let Some((lo, hi)) = thresholds {
                kv("th_low", lo.to_string());
                kv("th_high", hi.to_string());
            }
        }
        ControllerConfig::Window { window } => kv("window", window.to_string()),
        ControllerConfig::RetryAfter { q_high, q_target } => {
            kv("q_high", q_high.to_string());
            kv("q_target", q_target.to_string());
        }
        ControllerConfig::RateOccupancy {
            rho_target,
            max_rate,
        } => {
            kv("rho_target", fmt_f64(*rho_target));
            kv("max_rate", fmt_f64(*max_rate));
        }
        ControllerConfig::RateDelay { d_target, max_rate } => {
            kv("d_target", fmt_f64(*d_target));
            kv("max_rate", fmt_f64(*max_rate));
        }
        ControllerConfig::Rtqc {
            p_min,
            horizon,
            alpha,
            ..
        } => {
            kv("p_min", fmt_f64(*p_min));
            kv("horizon", fmt_f64(*horizon));
            kv("alpha", fmt_f64(*alpha));
        }
        ControllerConfig::Rrrc {
            setpoint,
            kp,
            ki,
            p_min,
            window,
            denom,
        } => {
            kv("setpoint", fmt_f64(*setpoint));
            kv("kp", fmt_f64(*kp));
            kv("ki", fmt_f64(*ki));
            kv("p_min", fmt_f64(*p_min));
            kv("meas_window", fmt_f64(*window));
            kv(
                "denom",
                match denom {
                    RatioDenominator::Retransmissions => "retrans".into(),
                    RatioDenominator::Messages => "messages".into(),
                },
            );
        }
        ControllerConfig::Rtdc {
            d_target,
            kp,
            ki,
            p_min,
            alpha,
        } => {
            kv("d_target", fmt_f64(*d_target));
            kv("kp", fmt_f64(*kp));
            kv("ki", fmt_f64(*ki));
            kv("p_min", fmt_f64(*p_min));
            kv("alpha", fmt_f64(*alpha));
        }
    }
    pairs
}
