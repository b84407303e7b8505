use std::path::Path;
use std::process::{Command, Output};

fn volstream(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_volstream"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

const SMALL: [&str; 8] = [
    "--set",
    "duration_s=0.2",
    "--set",
    "capture.color_bytes=50000",
    "--set",
    "capture.depth_bytes=30000",
    "--set",
    "capture.audio_bytes=1000",
];

#[test]
fn scenarios_are_listed() {
    let out = volstream(&["scenarios"], &[]);
    assert!(out.status.success());
    let names = text(&out.stdout);
    for s in ["paper-default", "paper-protocol", "paper-probe", "bandwidth-sweep"] {
        assert!(names.contains(s));
    }
}

#[test]
fn zero_duration_exits_with_config_error() {
    let out = volstream(&["run", "--scenario", "paper-default", "--set", "duration_s=0"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("duration_s"));
}

#[test]
fn validate_reports_each_problem() {
    let out = volstream(&["validate", "--set", "hop1.loss_rate=1.5", "--set", "hop2.pacing_bps=0"], &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = text(&out.stderr);
    assert!(err.contains("loss_rate must be in [0,1]"), "{err}");
    assert!(err.contains("hop2"), "{err}");
    assert!(volstream(&["validate"], &[]).status.success());
}

#[test]
fn unknown_keys_and_scenarios_are_config_errors() {
    assert_eq!(volstream(&["validate", "--set", "hop3.x=1"], &[]).status.code(), Some(2));
    assert_eq!(volstream(&["run", "--scenario", "nope"], &[]).status.code(), Some(2));
    assert_eq!(volstream(&["validate"], &[("VLAB_NOT_A_KEY", "1")]).status.code(), Some(2));
}

#[test]
fn env_overrides_apply() {
    let out = volstream(&["validate", "--print"], &[("VLAB_SEED", "77")]);
    assert!(out.status.success());
    assert!(text(&out.stdout).contains("seed = 77"));
}

#[test]
fn config_file_is_read() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, "# test\nseed = 5\nreceivers = 2\n").unwrap();
    let out = volstream(&["validate", "--print", "--config", path.to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let printed = text(&out.stdout);
    assert!(printed.contains("seed = 5") && printed.contains("receivers = 2"));
    let missing = volstream(&["validate", "--config", dir.path().join("none").to_str().unwrap()], &[]);
    assert_eq!(missing.status.code(), Some(2));
}

fn run_into(dir: &Path, seed: &str) -> Output {
    let mut args = vec!["run", "--scenario", "paper-default", "--seed", seed, "--out", dir.to_str().unwrap()];
    args.extend(SMALL);
    volstream(&args, &[])
}

#[test]
fn sim_run_writes_reports_and_replays() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out = run_into(a.path(), "3");
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("service_l"));
    run_into(b.path(), "3");
    for f in ["frames.csv", "summary.csv", "hops.csv"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let frames = std::fs::read_to_string(a.path().join("frames.csv")).unwrap();
    assert_eq!(frames.lines().count(), 7);
}

#[test]
fn probe_scenario_writes_probe_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = volstream(&["run", "--scenario", "paper-probe", "--out", dir.path().to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(dir.path().join("probe.csv").exists());
}

#[test]
fn socket_loopback_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["run", "--mode", "socket", "--out", dir.path().to_str().unwrap()];
    args.extend(SMALL);
    args.extend([
        "--set",
        "socket.sender_addr=127.0.0.1:0",
        "--set",
        "socket.relay_addr=127.0.0.1:0",
        "--set",
        "socket.receiver_addrs=127.0.0.1:0",
        "--set",
        "socket.idle_timeout=300ms",
        "--set",
        "transport.deadline=none",
    ]);
    let out = volstream(&args, &[]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stderr).contains("ignores link model"));
    assert!(dir.path().join("frames.csv").exists());
    assert!(dir.path().join("sender_send.csv").exists());
}

#[test]
fn bad_role_is_config_error() {
    let out = volstream(&["run", "--mode", "socket", "--role", "bystander"], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unwritable_output_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("not-a-dir");
    std::fs::write(&blocker, b"x").unwrap();
    let mut args = vec!["run", "--out", blocker.to_str().unwrap()];
    args.extend(SMALL);
    let out = volstream(&args, &[]);
    assert_eq!(out.status.code(), Some(1), "{}", text(&out.stderr));
    assert!(text(&out.stderr).starts_with("error:"));
}

#[test]
fn assemble_without_logs_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = volstream(&["assemble", "--set", "mode=socket", "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(1), "{}", text(&out.stderr));
}
