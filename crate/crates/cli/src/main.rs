use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sipsim::runner;
use sipsim::scenario::Scenario;

#[derive(Parser)]
#[command(
    name = "sipsim",
    version,
    about = "Event-driven simulation of signaling overload in SIP server chains"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one scenario and write series/calls/summary CSVs.
    Run {
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for the artifacts.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run several scenarios over a shared seed range and tabulate results.
    Compare {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
        /// Seeds per scenario, counting up from the first scenario's seed.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Integrate the fluid companion model of a two-proxy chain.
    Fluid {
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

/// 0 on success, 1 for configuration problems, 2 for runtime failures.
fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sipsim: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}

struct Failure {
    code: u8,
    msg: String,
}

fn config_err(msg: impl ToString) -> Failure {
    Failure {
        code: 1,
        msg: msg.to_string(),
    }
}

fn runtime_err(msg: impl ToString) -> Failure {
    Failure {
        code: 2,
        msg: msg.to_string(),
    }
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    Scenario::parse(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn write_artifact(dir: &Path, name: &str, body: &str) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| runtime_err(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| runtime_err(format!("{}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Cmd::Run { scenario, seed, out } => {
            let mut sc = load(&scenario)?;
            if let Some(s) = seed {
                sc.seed = s;
            }
            let art = runner::run_scenario(&sc).map_err(config_err)?;
            write_artifact(&out, "series.csv", &art.series_csv)?;
            write_artifact(&out, "calls.csv", &art.calls_csv)?;
            write_artifact(&out, "summary.csv", &art.summary_csv)?;
            if let Some(fluid) = &art.fluid_csv {
                write_artifact(&out, "fluid.csv", fluid)?;
            }
            print!("{}", art.summary_csv);
            Ok(())
        }
        Cmd::Compare {
            scenarios,
            seeds,
            out,
        } => {
            if seeds == 0 {
                return Err(config_err("--seeds must be at least 1"));
            }
            let mut variants = Vec::new();
            let mut base_seed = None;
            for path in &scenarios {
                let mut sc = load(path)?;
                // One seed range for everyone keeps the comparison paired.
                let base = *base_seed.get_or_insert(sc.seed);
                sc.seed = base;
                let name = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| path.display().to_string());
                variants.push((name, sc));
            }
            let table = runner::compare(&variants, seeds).map_err(config_err)?;
            write_artifact(&out, "compare.csv", &table)?;
            print!("{table}");
            Ok(())
        }
        Cmd::Fluid { scenario, out } => {
            let sc = load(&scenario)?;
            let csv = runner::fluid_csv(&sc).map_err(config_err)?;
            write_artifact(&out, "fluid.csv", &csv)?;
            Ok(())
        }
    }
}
