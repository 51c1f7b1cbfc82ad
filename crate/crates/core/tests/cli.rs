use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_synergrip"))
}

fn script(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

#[test]
fn run_writes_outputs_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "run",
            script("hold_empty.json").to_str().unwrap(),
            "--seed",
            "9",
            "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("PASS hold_empty"));
    for f in ["telemetry.csv", "sensors.csv", "sim.csv", "summary.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
    assert!(summary.contains("\"seed\": 9"));
}

#[test]
fn failing_episode_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["sweep", "--param", "G", "--values", "0.5", "--out"])
        .arg(dir.path())
        .arg(script("exp1_lift_transport_place.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("G=0.5: FAIL"), "{stdout}");
    assert!(stdout.contains("failed: never_dropped"), "{stdout}");
}

#[test]
fn grasp_type_override() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "run",
            script("hold_empty.json").to_str().unwrap(),
            "--grasp-type",
            "pinch",
            "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let summary = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
    assert!(summary.contains("\"grasp_type\": \"pinch\""));

    let out = bin()
        .args([
            "run",
            script("hold_empty.json").to_str().unwrap(),
            "--grasp-type",
            "power",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn validate_reports_each_problem() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{"name":"bad","duration_s":2.0,"tick_hz":0,"grasp_type":"tripod",
            "object":{"mass_kg":0.1,"width_m":0.05,"mu":0.8},
            "events":[{"t_s":1.0,"kind":"lift"},{"t_s":3.0,"kind":"reset"}]}"#,
    )
    .unwrap();
    let out = bin().arg("validate").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("tick_hz"), "{err}");
    assert!(err.contains("events[1]"), "{err}");

    let ok = bin()
        .arg("validate")
        .arg(script("exp1_lift_transport_place.json"))
        .output()
        .unwrap();
    assert!(ok.status.success());
}

#[test]
fn unreadable_script_exits_two() {
    let out = bin()
        .args(["run", "/nonexistent/script.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/script.json"));
}

#[test]
fn serve_and_replay_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let run = bin()
        .args([
            "run",
            script("exp3_handover_tripod.json").to_str().unwrap(),
            "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(run.status.success());

    let mut server = bin()
        .args(["serve", "--listen", "127.0.0.1:0", "--script"])
        .arg(script("exp3_handover_tripod.json"))
        .env("SYNERGRIP_LOG", "info")
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(server.stderr.take().unwrap());
    let mut line = String::new();
    let addr = loop {
        line.clear();
        assert!(
            stderr.read_line(&mut line).unwrap() > 0,
            "server exited early"
        );
        if let Some(a) = line.trim().strip_prefix("listening on ") {
            break a.to_string();
        }
    };
    let replay = bin()
        .args(["replay"])
        .arg(dir.path().join("sensors.csv"))
        .args(["--connect", &addr])
        .output()
        .unwrap();
    server.kill().ok();
    server.wait().ok();
    assert!(
        replay.status.success(),
        "{}",
        String::from_utf8_lossy(&replay.stderr)
    );

    let local = synergrip::telemetry::read_column(
        std::fs::File::open(dir.path().join("telemetry.csv")).unwrap(),
        "g_size",
    )
    .unwrap();
    let stdout = String::from_utf8(replay.stdout).unwrap();
    let remote: Vec<f64> = stdout
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(remote, local);
}
