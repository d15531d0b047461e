//! Run a scenario end to end and assemble the artifacts callers care
//! about: the summary block plus the CSV files.

use std::fmt::Write as _;

use crate::fluid::tandem::{Tandem, TandemError};
use crate::metrics::Summary;
use crate::scenario::Scenario;
use crate::sim::{run_world, World};
use crate::sip::session::CallOutcome;

pub struct RunArtifacts {
    pub scenario: Scenario,
    pub summary: Summary,
    pub series_csv: String,
    pub calls_csv: String,
    pub summary_csv: String,
    /// Present when the scenario asked for the fluid companion run.
    pub fluid_csv: Option<String>,
    pub world: World,
}

/// Simulate one scenario. The fluid companion only runs when the scenario
/// enables it, and fails loudly when the topology has no fluid counterpart.
pub fn run_scenario(sc: &Scenario) -> Result<RunArtifacts, TandemError> {
    let world = run_world(sc);
    let summary = summarize(&world);
    let fluid_csv = if sc.fluid_enabled {
        Some(fluid_csv(sc)?)
    } else {
        None
    };
    Ok(RunArtifacts {
        scenario: sc.clone(),
        summary_csv: summary.to_csv(),
        series_csv: world.metrics.series_csv(),
        calls_csv: world.metrics.calls_csv(),
        fluid_csv,
        summary,
        world,
    })
}

/// Integrate the fluid model and render the trajectory on the same
/// cadence as the simulation's sampled series.
pub fn fluid_csv(sc: &Scenario) -> Result<String, TandemError> {
    let tr = Tandem::run(sc)?;
    let every = ((sc.sample_tick / sc.fluid_dt).round() as usize).max(1);
    Ok(tr.downsample(every).csv())
}

fn summarize(world: &World) -> Summary {
    let m = &world.metrics;
    let sc = &world.scenario;
    let mut s = Summary::new();
    s.push_int("calls_offered", m.calls.len() as u64);
    s.push_int(
        "calls_success",
        m.outcome_count(CallOutcome::Success) as u64,
    );
    s.push_int(
        "calls_rejected",
        m.outcome_count(CallOutcome::Rejected) as u64,
    );
    s.push_int(
        "calls_timedout",
        m.outcome_count(CallOutcome::TimedOut) as u64,
    );
    s.push_int(
        "calls_dropped",
        m.outcome_count(CallOutcome::Dropped) as u64,
    );
    s.push_f64("goodput_cps", m.goodput(sc.duration));
    let blocking = if m.calls.is_empty() {
        0.0
    } else {
        m.outcome_count(CallOutcome::Rejected) as f64 / m.calls.len() as f64
    };
    s.push_f64("blocking_ratio", blocking);
    s.push_int("retrans_redundant", m.retrans_redundant);
    s.push_int("retrans_nonredundant", m.retrans_nonredundant);
    if let Some(r) = m.redundant_ratio() {
        s.push_f64("redundant_ratio", r);
    }
    if let Some(d) = m.mean_setup_delay() {
        s.push_f64("mean_setup_delay", d);
    }
    for (i, srv) in world.servers.iter().enumerate() {
        s.push_int(&format!("s{i}_arrivals"), srv.arrivals);
        s.push_int(&format!("s{i}_served"), srv.served);
        s.push_int(&format!("s{i}_rejected"), srv.rejected);
        s.push_int(&format!("s{i}_dropped"), srv.dropped);
        s.push_int(&format!("s{i}_timer_arms"), srv.timer_arms);
    }
    s
}

/// Run each named variant over the same seed range; one row per run.
pub fn compare(
    variants: &[(String, Scenario)],
    seeds: u64,
) -> Result<String, TandemError> {
    let mut out = String::from(
        "variant,seed,goodput_cps,success,rejected,timedout,dropped,redundant_ratio\n",
    );
    for (name, base) in variants {
        for k in 0..seeds {
            let mut sc = base.clone();
            sc.seed = base.seed + k;
            sc.fluid_enabled = false;
            let art = run_scenario(&sc)?;
            let m = &art.world.metrics;
            let ratio = m
                .redundant_ratio()
                .map(|r| format!("{r:.6}"))
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{:.6},{},{},{},{},{}",
                name,
                sc.seed,
                m.goodput(sc.duration),
                m.outcome_count(CallOutcome::Success),
                m.outcome_count(CallOutcome::Rejected),
                m.outcome_count(CallOutcome::TimedOut),
                m.outcome_count(CallOutcome::Dropped),
                ratio,
            );
        }
    }
    Ok(out)
}
