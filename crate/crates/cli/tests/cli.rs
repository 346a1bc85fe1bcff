use std::path::Path;
use std::process::{Command, Output};

fn kmslab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kmslab"))
        .current_dir(dir)
        .env_remove("THREADS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    std::fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

const SMALL: &str = r#"{"model": "tfi", "J": 1, "g": 1, "beta": [0, 1, "inf"], "sizes": [3, 4, 5],
  "observables": {"a": "sz", "b": "sx"}, "seed": 5}"#;

#[test]
fn sweep_is_bit_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL);
    for out in ["a", "b"] {
        let o = kmslab(dir.path(), &["sweep", "--config", &cfg, "--out", out]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = std::fs::read(dir.path().join("a/sweep.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/sweep.csv")).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("model,beta,size,t,re_f,im_f,f0,abs_dev,state,kms_residual"));
    assert_eq!(text.lines().count(), 1 + 3 * 3 * 41);
    // 0 -> tracial, inf -> ground with no residual
    assert!(text.lines().any(|l| l.contains(",tracial,")));
    assert!(text.lines().filter(|l| l.starts_with("tfi,inf,")).all(|l| l.contains(",ground,nan,")));
}

#[test]
fn manifest_records_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"model": "xxz", "beta": [1], "sizes": [3]}"#);
    let o = kmslab(dir.path(), &["wok", "--config", &cfg, "--out", "o", "--seed", "9", "--threads", "1"]);
    assert!(o.status.success());
    let m = std::fs::read_to_string(dir.path().join("o/wok.manifest.json")).unwrap();
    for key in ["\"config_hash\"", "\"timestamp\"", "\"platform\"", "\"tool_version\"", "\"delta\": 1.0", "\"seed\": 9"] {
        assert!(m.contains(key), "{key} in {m}");
    }
    assert!(dir.path().join("o/wok.json").exists());
}

#[test]
fn validation_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (r#"{"model": "tfi", "beta": [-1], "sizes": [4]}"#, "beta[0]"),
        (r#"{"model": "tfi", "beta": [1], "sizes": [16]}"#, "size-cap"),
        (r#"{"model": "tfi", "beta": [1], "sizes": [4], "typo": 1}"#, "typo"),
        (r#"{"model": "tfi", "beta": [1], "sizes": [4], "grid": {"start": 0, "stop": 1, "pts": 3}}"#, "grid"),
    ];
    for (i, (text, needle)) in cases.iter().enumerate() {
        let cfg = write(dir.path(), &format!("c{i}.json"), text);
        let o = kmslab(dir.path(), &["sweep", "--config", &cfg]);
        assert_eq!(o.status.code(), Some(2), "{text}");
        assert!(String::from_utf8_lossy(&o.stderr).contains(needle), "{needle}");
    }
    assert_eq!(kmslab(dir.path(), &["sweep", "--size-cap", "15"]).status.code(), Some(2));
    assert_eq!(kmslab(dir.path(), &["sweep", "--config", "absent.json"]).status.code(), Some(2));
    assert_eq!(kmslab(dir.path(), &["nonsense"]).status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_kmslab"))
        .current_dir(dir.path())
        .env("THREADS", "zero")
        .arg("sweep")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failed_calibration_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"model": "tfi", "beta": [1], "sizes": [4], "bound": {"lambda": 4, "m": 1, "points": 5, "eps": 1e-9}}"#,
    );
    let o = kmslab(dir.path(), &["bound", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn report_collects_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = kmslab(dir.path(), &["report", "--out", "empty"]);
    assert!(o.status.success());
    let r = std::fs::read_to_string(dir.path().join("empty/report.md")).unwrap();
    assert!(r.contains("no runs"));

    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"model": "tfi", "beta": [0.5, "inf"], "sizes": [3, 4, 5], "bound": {"lambda": 4, "m": 1, "points": 5}}"#,
    );
    for cmd in ["kms-check", "sweep", "bound"] {
        let o = kmslab(dir.path(), &[cmd, "--config", &cfg, "--out", "o"]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(kmslab(dir.path(), &["report", "--out", "o"]).status.success());
    let r = std::fs::read_to_string(dir.path().join("o/report.md")).unwrap();
    for h in ["## kms", "## wok", "## bound"] {
        assert!(r.contains(h), "{h}");
    }
    let o = kmslab(dir.path(), &["report", "--out", "o", "o/kms.json", "o/missing.json"]);
    assert!(o.status.success());
    let r = std::fs::read_to_string(dir.path().join("o/report.md")).unwrap();
    assert!(r.contains("## missing artifacts") && r.contains("missing.json"));
}
