use std::path::Path;
use std::process::{Command, Output};

fn rsmimo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rsmimo"))
        .args(args)
        .env_remove("RSMIMO_WORKERS")
        .output()
        .expect("binary runs")
}

fn write_scenario(dir: &Path) -> String {
    let path = dir.join("small.conf");
    std::fs::write(
        &path,
        "# small smoke run\nn_tx = 6\nusers = 2,2,2\ncsit = fixed:0.1\nprecoder = rbd\n\
         combiner = mmsec\nrate_splitting = true\nsweep = snr:10,20\nchannels = 4\nerrors = 3\ngrid = 5\n",
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn list_shows_catalog() {
    let out = rsmimo(&["list"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 42);
    assert!(text.contains("fig4-rbd-rs-mmsec.paper"));
}

#[test]
fn run_file_scenario_to_csv() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path());
    let csv = dir.path().join("out.csv");
    let out = rsmimo(&["run", "--scenario", &scenario, "--out", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "sweep_value,esr,common,private,stderr,seconds");
    assert_eq!(lines.len(), 3);
}

#[test]
fn workers_do_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path());
    let one = rsmimo(&["run", "--scenario", &scenario, "--workers", "1", "--no-timing"]);
    let four = Command::new(env!("CARGO_BIN_EXE_rsmimo"))
        .args(["run", "--scenario", &scenario, "--no-timing"])
        .env("RSMIMO_WORKERS", "4")
        .output()
        .unwrap();
    assert!(one.status.success() && four.status.success());
    assert_eq!(one.stdout, four.stdout);
}

#[test]
fn overrides_apply() {
    let a = rsmimo(&["run", "--scenario", "fig3-rbd", "--channels", "2", "--errors", "2", "--no-timing"]);
    let b = rsmimo(&["run", "--scenario", "fig3-rbd", "--channels", "2", "--errors", "2", "--seed", "9", "--no-timing"]);
    assert!(a.status.success() && b.status.success());
    assert_eq!(String::from_utf8(a.stdout.clone()).unwrap().lines().count(), 8);
    assert_ne!(a.stdout, b.stdout);
}

#[test]
fn verify_writes_deviations() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dev.tsv");
    let out = rsmimo(&["verify", "--instances", "20", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("anchor\tstatus\t"));
    assert!(String::from_utf8(out.stdout).unwrap().lines().all(|l| !l.starts_with("FAIL")));
}

#[test]
fn show_round_trips_through_run() {
    let dir = tempfile::tempdir().unwrap();
    let shown = rsmimo(&["show", "fig5-rbd-rs-mrc"]);
    assert!(shown.status.success());
    let path = dir.path().join("fig5.conf");
    std::fs::write(&path, &shown.stdout).unwrap();
    let from_file = rsmimo(&["run", "--scenario", path.to_str().unwrap(), "--channels", "2", "--errors", "2", "--no-timing"]);
    let from_name = rsmimo(&["run", "--scenario", "fig5-rbd-rs-mrc", "--channels", "2", "--errors", "2", "--no-timing"]);
    assert_eq!(from_file.stdout, from_name.stdout);
}

#[test]
fn errors_exit_nonzero_with_diagnostic() {
    let out = rsmimo(&["run", "--scenario", "no-such-scenario"]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("no-such-scenario"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.conf");
    std::fs::write(&bad, "n_tx = 6\nusers = 2,2\ncsit = sometimes\n").unwrap();
    let out = rsmimo(&["run", "--scenario", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains(":3:"));
}
