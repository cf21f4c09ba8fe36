use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_drivebench");
const ECHO: &str = env!("CARGO_BIN_EXE_dpb-echo");

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("drivebench-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn drivebench(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

fn straight_suite() -> String {
    fixtures().join("suites/straight.json").display().to_string()
}

#[test]
fn run_writes_one_log_and_a_five_field_report() {
    let out = tmp("run");
    let o = drivebench(&["run", "--suite", &straight_suite(), "--policy", "waypoint_follower", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let logs: Vec<_> = std::fs::read_dir(out.join("logs")).unwrap().collect();
    assert_eq!(logs.len(), 1);
    let report: serde_json::Value = serde_json::from_slice(&read(out.join("report.json"))).unwrap();
    for key in ["pr", "rc", "humanness", "mte", "s_bench"] {
        assert!(report[key].is_f64(), "missing {key}");
    }
    assert!(report.get("sfd").is_none());
    let csv = String::from_utf8(read(out.join("report.csv"))).unwrap();
    assert!(csv.starts_with("Method,PR,RC,Humanness,MTE,S_bench\nwaypoint_follower,"));
}

#[test]
fn same_seed_gives_identical_logs() {
    let (a, b) = (tmp("det-a"), tmp("det-b"));
    for out in [&a, &b] {
        let o = drivebench(&["run", "--suite", "turn", "--seed", "3", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let names: Vec<_> = std::fs::read_dir(a.join("logs")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 4);
    for n in names {
        assert_eq!(read(a.join("logs").join(&n)), read(b.join("logs").join(&n)));
    }
    assert_eq!(read(a.join("report.json")), read(b.join("report.json")));
}

#[test]
fn malformed_manifest_names_the_field() {
    let bad = fixtures().join("suites/no_task.json");
    let o = drivebench(&["run", "--suite", bad.to_str().unwrap(), "--out", tmp("bad").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`task`"), "{}", stderr(&o));
}

#[test]
fn invalid_map_is_a_validation_error() {
    let dir = tmp("badmap");
    let scenario = std::fs::read_to_string(fixtures().join("scenarios/straight.json"))
        .unwrap()
        .replace(
            "../maps/two_lane_straight.json",
            fixtures().join("maps/missing_successor.json").to_str().unwrap(),
        );
    std::fs::write(dir.join("s.json"), scenario).unwrap();
    std::fs::write(
        dir.join("suite.json"),
        r#"{"name": "x", "task": "collaborative", "scenarios": ["s.json"]}"#,
    )
    .unwrap();
    let o = drivebench(&["run", "--suite", dir.join("suite.json").to_str().unwrap(), "--out", dir.join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("l9"), "{}", stderr(&o));
}

#[test]
fn evaluate_matches_inline_report() {
    let out = tmp("eval");
    let o = drivebench(&["run", "--suite", "turn", "--seed", "5", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut logs: Vec<String> = std::fs::read_dir(out.join("logs"))
        .unwrap()
        .map(|e| e.unwrap().path().display().to_string())
        .collect();
    // The run reports scenarios in suite order, which is also name order here.
    logs.sort();
    let mut args = vec!["evaluate".to_string(), "--out".into(), out.join("eval").display().to_string()];
    args.extend(logs);
    let o = Command::new(BIN).args(&args).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read(out.join("report.json")), read(out.join("eval/report.json")));
}

#[test]
fn evaluate_without_logs_is_a_usage_error() {
    let o = drivebench(&["evaluate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn evaluate_rejects_malformed_log() {
    let dir = tmp("badlog");
    let p = dir.join("x.jsonl");
    std::fs::write(&p, "{not json\n").unwrap();
    let o = drivebench(&["evaluate", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn echo_bridge_matches_builtin_zero_policy() {
    let (a, b) = (tmp("bridge-a"), tmp("bridge-b"));
    let o = drivebench(&["run", "--suite", "follow-simplest", "--bridge-cmd", ECHO, "--out", a.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = drivebench(&["run", "--suite", "follow-simplest", "--policy", "zero", "--out", b.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let name = "follow-cruise-none-s0.jsonl";
    assert_eq!(read(a.join("logs").join(name)), read(b.join("logs").join(name)));
}

#[test]
fn bridge_version_mismatch_exits_3() {
    let cmd = format!("{ECHO} --protocol dpb/0");
    let o = drivebench(&["run", "--suite", "follow-simplest", "--bridge-cmd", &cmd, "--out", tmp("ver").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("dpb/0"));
}

#[test]
fn silent_bridge_times_out_with_exit_3() {
    let o = drivebench(&[
        "run", "--suite", "follow-simplest", "--bridge-cmd", "sleep 30", "--bridge-timeout", "0.3",
        "--out", tmp("timeout").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn config_file_overrides_flags() {
    let dir = tmp("config");
    let cfg = dir.join("cfg.json");
    std::fs::write(
        &cfg,
        format!(r#"{{"suite": "{}", "policy": "constant_brake"}}"#, straight_suite()),
    )
    .unwrap();
    let out = dir.join("out");
    let o = drivebench(&[
        "run", "--suite", "turn", "--policy", "waypoint_follower", "--config", cfg.to_str().unwrap(),
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = String::from_utf8(read(out.join("report.csv"))).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("constant_brake,"), "{csv}");
    assert!(out.join("logs/straight-drive.jsonl").exists());
}

#[test]
fn generated_suite_runs_like_the_named_one() {
    let dir = tmp("gen");
    let o = drivebench(&["generate", "--suite", "turn", "--seed", "2", "--out", dir.join("g").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = dir.join("g/suite.json");
    for (suite, out) in [(manifest.to_str().unwrap(), "a"), ("turn", "b")] {
        let o = drivebench(&["run", "--suite", suite, "--seed", "2", "--out", dir.join(out).to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(read(dir.join("a/report.json")), read(dir.join("b/report.json")));
}

#[test]
fn diagnose_table_and_short_runs() {
    let o = drivebench(&["diagnose", "--variable", "agents", "--counts", "1,2", "--steps", "100"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 3);
    let o = drivebench(&["diagnose", "--variable", "agents", "--steps", "99"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn render_writes_svg() {
    let dir = tmp("render");
    let o = drivebench(&["run", "--suite", &straight_suite(), "--out", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let svg = dir.join("x.svg");
    let o = drivebench(&["render", dir.join("logs/straight-drive.jsonl").to_str().unwrap(), "--out", svg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(read(&svg)).unwrap();
    assert!(text.starts_with("<svg"));
    assert_eq!(text.matches("<polyline").count(), 1);
}
