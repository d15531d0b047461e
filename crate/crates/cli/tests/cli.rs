//! End-to-end checks of the installed binary: artifacts land where asked,
//! exit codes distinguish config problems from success.

use std::fs;
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sipsim"))
}

fn write_scenario(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn run_writes_all_artifacts() {
    let tmp = tempdir();
    let cfg = write_scenario(
        &tmp,
        "short.cfg",
        "workload.segments = 0-3:50\nrun.duration = 4\nfluid.enabled = false\n",
    );
    let out = tmp.join("res");
    let st = bin()
        .args(["run"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .arg("--seed")
        .arg("7")
        .output()
        .unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    for f in ["series.csv", "calls.csv", "summary.csv"] {
        let body = fs::read_to_string(out.join(f)).unwrap();
        assert!(body.lines().count() > 1, "{f} is empty");
    }
    assert!(!out.join("fluid.csv").exists());
}

#[test]
fn seed_override_changes_the_run() {
    let tmp = tempdir();
    let cfg = write_scenario(
        &tmp,
        "s.cfg",
        "workload.segments = 0-3:50\nrun.duration = 4\n",
    );
    let read = |seed: &str, dir: &str| {
        let out = tmp.join(dir);
        let st = bin()
            .args(["run"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .args(["--seed", seed])
            .status()
            .unwrap();
        assert!(st.success());
        fs::read_to_string(out.join("series.csv")).unwrap()
    };
    let a = read("1", "a");
    let b = read("1", "b");
    let c = read("2", "c");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn compare_tabulates_each_variant() {
    let tmp = tempdir();
    let base = write_scenario(
        &tmp,
        "base.cfg",
        "workload.segments = 0-3:50\nrun.duration = 4\n",
    );
    let other = write_scenario(
        &tmp,
        "ctrl.cfg",
        "workload.segments = 0-3:50\nrun.duration = 4\ncontroller.name = bangbang\ncontroller.high = 50\ncontroller.low = 20\n",
    );
    let out = tmp.join("cmp");
    let st = bin()
        .args(["compare"])
        .arg(&base)
        .arg(&other)
        .args(["--seeds", "2"])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(st.success());
    let body = fs::read_to_string(out.join("compare.csv")).unwrap();
    assert!(body.contains("base,"));
    assert!(body.contains("ctrl,"));
    // header + 2 variants x 2 seeds
    assert_eq!(body.lines().count(), 5, "{body}");
}

#[test]
fn bad_config_exits_one_without_artifacts() {
    let tmp = tempdir();
    let cfg = write_scenario(&tmp, "bad.cfg", "workload.segments = nonsense\n");
    let out = tmp.join("res");
    let st = bin()
        .args(["run"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(1));
    assert!(!out.exists());
    assert!(!st.stderr.is_empty());
}

#[test]
fn fluid_refuses_unsupported_shapes() {
    let tmp = tempdir();
    // One proxy: the companion model only handles the two-proxy chain.
    let cfg = write_scenario(
        &tmp,
        "one.cfg",
        "topology.proxies = 1\nworkload.segments = 0-3:50\nrun.duration = 4\nrun.teardown = false\n",
    );
    let st = bin()
        .args(["fluid"])
        .arg(&cfg)
        .arg("--out")
        .arg(&tmp.join("fl"))
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(1));
}

fn tempdir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "sipsim-cli-test-{}-{}",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap()
            .as_nanos()
    ));
    fs::create_dir_all(&dir).unwrap();
    dir
}
