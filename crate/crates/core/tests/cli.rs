use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"))
}

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_authentree"));
    cmd.env_remove("AUTHENTREE_SEED");
    cmd
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = bin().args(args).output().expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn validate_shipped_scenarios() {
    for name in [
        "cva6",
        "nvdla",
        "riscv",
        "ariane",
        "or1200",
        "all_honest",
        "counterfeit",
        "link_fault",
        "transient",
    ] {
        let (code, out, err) = run(&["validate", p(&scenario(name))]);
        assert_eq!(code, 0, "{name}: {err}");
        assert!(out.starts_with("ok: "), "{out}");
    }
}

#[test]
fn config_errors_exit_two_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenario("all_honest"))
        .unwrap()
        .replace(r#""id": 101"#, r#""id": 100"#);
    let path = dir.path().join("dup.json");
    fs::write(&path, text).unwrap();
    let (code, _, err) = run(&["validate", p(&path)]);
    assert_eq!(code, 2);
    assert!(err.contains("duplicate chiplet id 100"), "{err}");
    assert!(err.contains("line 12"), "{err}");
}

#[test]
fn missing_file_is_io_error() {
    let (code, _, err) = run(&["validate", "/nonexistent/scenario.json"]);
    assert_eq!(code, 4, "{err}");
}

#[test]
fn protocol_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"{
  "schema": 1,
  "topology": {
    "nodes": [
      {"id": 1, "role": "integrator"},
      {"id": 2, "role": "integrator", "behavior": "counterfeit"},
      {"id": 3, "role": "integrator", "behavior": "counterfeit"},
      {"id": 100, "role": "third_party"}
    ],
    "layout": "star"
  }
}"#;
    let path = dir.path().join("bad.json");
    fs::write(&path, text).unwrap();
    let (code, _, err) = run(&["authenticate", p(&path)]);
    assert_eq!(code, 3);
    assert!(err.contains("insufficient trusted integrators"), "{err}");
}

#[test]
fn authenticate_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, err) = run(&[
        "authenticate",
        p(&scenario("counterfeit")),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("chiplet 101: fail (chiplet fault)"), "{out}");
    assert!(out.contains("result: not authenticated: 101"));
    for f in ["report.json", "transcript.jsonl", "manifest.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema"], 1);

    let (_, honest, _) = run(&["authenticate", p(&scenario("all_honest"))]);
    assert!(honest.contains("result: all authenticated"));
    assert!(honest.contains("critical path: "));
    assert!(honest.contains(" ns at "));
}

#[test]
fn seed_from_environment() {
    let path = scenario("all_honest");
    let (_, a, _) = run(&["authenticate", p(&path)]);
    let out = bin()
        .args(["authenticate", p(&path)])
        .env("AUTHENTREE_SEED", "99")
        .output()
        .unwrap();
    let b = String::from_utf8(out.stdout).unwrap();
    let (_, c, _) = run(&["authenticate", p(&path), "--seed", "99"]);
    assert_ne!(a, b);
    assert_eq!(b, c);
}

#[test]
fn attack_sweep_csv() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.jsonl");
    let (code, out, err) = run(&[
        "attack",
        p(&scenario("all_honest")),
        "--sweep",
        "--trials",
        "4",
        "--raw",
        p(&raw),
        "--jobs",
        "2",
    ]);
    assert_eq!(code, 0, "{err}");
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(
        lines[0],
        "attack,length_bits,mean_hd,std_hd,min,max,fail_rate"
    );
    assert_eq!(lines.len(), 13);
    assert!(!out.contains('\r'));
    assert_eq!(fs::read_to_string(&raw).unwrap().lines().count(), 12 * 4);

    let (_, single, _) = run(&[
        "attack",
        p(&scenario("all_honest")),
        "--sweep",
        "--trials",
        "4",
        "--jobs",
        "1",
    ]);
    assert_eq!(out, single);
    let (_, one_length, _) = run(&["attack", p(&scenario("all_honest")), "--trials", "4"]);
    assert_eq!(one_length.lines().count(), 4);
}

#[test]
fn replay_round_trip_and_attack() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = run(&[
        "authenticate",
        p(&scenario("link_fault")),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(code, 0, "{err}");
    let transcript = dir.path().join("transcript.jsonl");

    let (code, out, err) = run(&["replay", p(&transcript)]);
    assert_eq!(code, 0, "{err}");
    assert!(out.starts_with("replay matches: "), "{out}");

    let (code, out, err) = run(&["replay", p(&transcript), "--as-attack"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("into session 2: 0 accepted"), "{out}");

    let text = fs::read_to_string(&transcript).unwrap();
    let cut: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
    let truncated = dir.path().join("cut.jsonl");
    fs::write(&truncated, cut).unwrap();
    let (code, _, err) = run(&["replay", p(&truncated)]);
    assert_eq!(code, 2);
    assert!(err.contains("transcript ends mid-session"), "{err}");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let (code, _, err) = run(&[
            "authenticate",
            p(&scenario("nvdla")),
            "--out",
            p(dir.path()),
        ]);
        assert_eq!(code, 0, "{err}");
    }
    for f in ["report.json", "transcript.jsonl", "manifest.json"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn usage_errors_exit_two() {
    let (code, _, _) = run(&["authenticate"]);
    assert_eq!(code, 2);
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("authenticate"));
}
