//! The `nlcf` binary: exit codes, outputs and determinism.

use std::fs;
use std::path::Path;
use std::process::Command;

fn nlcf() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nlcf"))
}

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn small_ball(out: &Path) -> String {
    format!(r#"{{"scenario": "ball", "grid": {{"half_width": 1.6, "n": 96, "frames": 4}}, "output": {:?}}}"#, out.to_str().unwrap())
}

#[test]
fn malformed_config_exits_2_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    for (name, body) in [
        ("syntax.json", "{\"scenario\": \"ball\",".to_string()),
        ("unknown.json", format!(r#"{{"scenario": "ball", "colour": 3, "output": {:?}}}"#, out.to_str().unwrap())),
        ("range.json", format!(r#"{{"scenario": "ball", "radius": -1.0, "output": {:?}}}"#, out.to_str().unwrap())),
        ("kernel.json", format!(r#"{{"scenario": "ball", "kernel": {{"type": "fractional", "s": 1.5}}, "output": {:?}}}"#, out.to_str().unwrap())),
    ] {
        let cfg = write_config(tmp.path(), name, &body);
        let st = nlcf().arg("run").arg(&cfg).output().unwrap();
        assert_eq!(st.status.code(), Some(2), "{name}: {}", String::from_utf8_lossy(&st.stderr));
        assert!(!out.exists(), "{name} wrote outputs");
    }
}

#[test]
fn missing_config_and_bad_override_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let st = nlcf().args(["run", tmp.path().join("absent.json").to_str().unwrap()]).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
    let cfg = write_config(tmp.path(), "m.json", r#"{"scenario": "minimality"}"#);
    let st = nlcf().arg("run").arg(&cfg).args(["--h", "0.01"]).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
}

#[test]
fn kernel_info_reports_regime() {
    let tmp = tempfile::tempdir().unwrap();
    let k = write_config(tmp.path(), "k.json", r#"{"type": "piecewise_power", "alpha": 1.0, "tail_exponent": 3.0}"#);
    let st = nlcf().arg("kernel-info").arg(&k).output().unwrap();
    assert_eq!(st.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&st.stdout).unwrap();
    assert_eq!(v["regime"]["regime"], "Weak");
    let bad = write_config(tmp.path(), "b.json", r#"{"type": "fractional"}"#);
    assert_eq!(nlcf().arg("kernel-info").arg(&bad).output().unwrap().status.code(), Some(2));
}

#[test]
fn ball_run_passes_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let cfg = write_config(tmp.path(), "ball.json", &small_ball(out));
        let st = nlcf().arg("run").arg(&cfg).output().unwrap();
        assert_eq!(st.status.code(), Some(0), "{}", String::from_utf8_lossy(&st.stderr));
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["pass"], true);
    for name in ["summary.json", "diagnostics.csv", "schema.json", "frames/frame_0.csv", "frames/frame_4.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name} differs");
    }
    let meta = |d: &Path| {
        let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("meta.json")).unwrap()).unwrap();
        v["config"]["output"] = serde_json::Value::Null;
        v
    };
    assert_eq!(meta(&a), meta(&b));
    assert_eq!(meta(&a)["config"]["h"], 1.6 * 2.0 / 96.0);

    let st = nlcf().arg("render").arg(&a).output().unwrap();
    assert_eq!(st.status.code(), Some(0));
    let svg = fs::read_to_string(a.join("frames/frame_0.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<path"));
}

#[test]
fn failed_acceptance_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    // stops before the ball vanishes, so no extinction time is measured
    let body = format!(r#"{{"scenario": "ball", "T": 0.01, "grid": {{"half_width": 1.6, "n": 96, "frames": 2}}, "output": {:?}}}"#, out.to_str().unwrap());
    let cfg = write_config(tmp.path(), "early.json", &body);
    let st = nlcf().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(st.status.code(), Some(1), "{}", String::from_utf8_lossy(&st.stderr));
    assert!(out.join("summary.json").exists());
}
