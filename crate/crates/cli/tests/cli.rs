use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn charad(args: &[&str]) -> Output {
    charad_with_stdin(args, None)
}

fn charad_with_stdin(args: &[&str], stdin: Option<&[u8]>) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_charad"))
        .env("CHARAD_LOG", "warn")
        .env_remove("CHARAD_THREADS")
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    if let Some(bytes) = stdin {
        child.stdin.take().unwrap().write_all(bytes).unwrap();
    }
    drop(child.stdin.take());
    child.wait_with_output().unwrap()
}

fn fx(rel: &str) -> String {
    fixtures().join(rel).to_string_lossy().into_owned()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn jsonl(bytes: &[u8]) -> Vec<Value> {
    String::from_utf8_lossy(bytes).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn build_bank_selection_modes_agree() {
    let portraits = fx("planted/portraits.jsonl");
    let auto = stdout_json(&charad(&["build-bank", "--portraits", &portraits, "--movie-id", "m"]));
    let full = stdout_json(&charad(&["build-bank", "--portraits", &portraits, "--movie-id", "m", "--selection", "exhaustive"]));
    assert_eq!(auto, full);
    assert_eq!(auto["entries"].as_array().unwrap().len(), 3);
    assert!(auto["objective_value"].as_f64().unwrap() > 0.0);
}

#[test]
fn sweep_extremes() {
    let out = charad(&[
        "sweep", "--bank", &fx("planted/bank.json"), "--detections", &fx("planted/detections.jsonl"),
        "--thresholds", "0,1e9", "--format", "jsonl",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = jsonl(&out.stdout);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["unknown_rate"].as_f64(), Some(1.0));
    assert_eq!(rows[1]["unknown_rate"].as_f64(), Some(0.0));
}

#[test]
fn sweep_csv_has_header() {
    let out = charad(&["sweep", "--bank", &fx("planted/bank.json"), "--detections", &fx("planted/detections.jsonl")]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(out.status.success());
    assert_eq!(text.lines().count(), 8);
    assert!(text.lines().next().unwrap().contains("accuracy"));
}

#[test]
fn recognize_reads_stdin() {
    let detections = std::fs::read(fixtures().join("planted/detections.jsonl")).unwrap();
    let out = charad_with_stdin(&["recognize", "--bank", &fx("planted/bank.json"), "--detections", "-"], Some(&detections));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(jsonl(&out.stdout).len(), String::from_utf8_lossy(&detections).lines().count());
}

#[test]
fn malformed_input_exits_1_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("det.jsonl");
    let good = std::fs::read_to_string(fixtures().join("planted/detections.jsonl")).unwrap();
    let first = good.lines().next().unwrap();
    std::fs::write(&bad, format!("{first}\n{{\"frame\": \"zero\"}}\n")).unwrap();
    let out = charad(&["recognize", "--bank", &fx("planted/bank.json"), "--detections", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("det.jsonl:2"), "{err}");
}

#[test]
fn missing_file_and_bad_flag_exit_1() {
    assert_eq!(charad(&["recognize", "--bank", "/nonexistent/bank.json", "--detections", "-"]).status.code(), Some(1));
    assert_eq!(charad(&["recognize"]).status.code(), Some(1));
    let out = charad(&["--u", "-3", "recognize", "--bank", &fx("planted/bank.json"), "--detections", &fx("planted/detections.jsonl")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains('u'));
}

#[test]
fn help_exits_0() {
    assert_eq!(charad(&["--help"]).status.code(), Some(0));
}

#[test]
fn domain_violation_exits_2() {
    // subtitle ends after the stated duration
    let dir = tempfile::tempdir().unwrap();
    let srt = dir.path().join("s.srt");
    std::fs::write(&srt, "1\n00:00:01,000 --> 00:00:20,000\nhello\n").unwrap();
    let out = charad(&["segment", "--subtitles", srt.to_str().unwrap(), "--duration", "10"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn propagate_fixture_reports_conflict() {
    let dir = tempfile::tempdir().unwrap();
    let conflicts = dir.path().join("conflicts.jsonl");
    let frames = std::fs::read_to_string(fixtures().join("propagation/frames.txt")).unwrap();
    let out = charad(&[
        "propagate", "--detections", &fx("propagation/detections.jsonl"), "--anchors", &fx("propagation/anchors.jsonl"),
        "--frames", frames.trim(), "--conflicts", conflicts.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let characters: std::collections::BTreeSet<String> =
        jsonl(&out.stdout).iter().map(|r| r["character"].as_str().unwrap().to_string()).collect();
    assert_eq!(characters.len(), 3);
    let c = jsonl(&std::fs::read(&conflicts).unwrap());
    assert_eq!(c.len(), 1);
    assert_eq!(c[0]["winner"], "Ryan");
    assert_eq!(c[0]["frame"], 90);
}

#[test]
fn tag_type_outputs() {
    let bank = fx("planted/bank.json");
    let bank_json: Value = serde_json::from_str(&std::fs::read_to_string(&bank).unwrap()).unwrap();
    let name = bank_json["entries"][0]["name"].as_str().unwrap().to_string();
    let text = format!("{name} opens the door.");
    let run = |recognized: &str| {
        let out = charad(&["tag-type", "--bank", &bank, "--text", &text, "--recognized", recognized]);
        assert!(out.status.success());
        String::from_utf8(out.stdout).unwrap().trim().to_string()
    };
    assert_eq!(run(&name), "1");
    assert_eq!(run("nobody"), "2");
    let unnamed = |recognized: &str| {
        let out = charad(&["tag-type", "--bank", &bank, "--text", "The door opens.", "--recognized", recognized]);
        String::from_utf8(out.stdout).unwrap().trim().to_string()
    };
    assert_eq!(unnamed(&name), "3");
    assert_eq!(unnamed(""), "none");
}

#[test]
fn prompt_composes_names() {
    let v = stdout_json(&charad(&["prompt", "--templates", &fx("movie/templates.json"), "--names", "Ryan,Mara"]));
    let prompt = v["prompt"].as_str().unwrap();
    assert!(prompt.starts_with("Several characters"));
    assert!(prompt.find("Ryan").unwrap() < prompt.find("Mara").unwrap());
}

#[test]
fn merge_tokens_respects_mu() {
    let out = charad(&["--mu", "2", "merge-tokens", "--tokens", &fx("tokens/tokens.jsonl")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(jsonl(&out.stdout).len(), 2);
}

#[test]
fn score_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dir.path().join("pairs.jsonl");
    std::fs::write(
        &pairs,
        "{\"id\":\"a\",\"generated\":\"Ryan boards the plane\",\"ground_truth\":\"Ryan boards the plane\"}\n",
    )
    .unwrap();
    let out = charad(&[
        "score", "--vectors", &fx("movie/word_vectors.jsonl"), "--stopwords", &fx("movie/stopwords.txt"),
        "--pairs", pairs.to_str().unwrap(),
    ]);
    let rows = jsonl(&out.stdout);
    assert!(out.status.success());
    assert_eq!(rows[0]["id"], "a");
    assert_eq!(rows[0]["score"].as_f64(), Some(0.0));
}

#[test]
fn echoed_config_reproduces_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let echo = dir.path().join("echo.toml");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let manifest = fx("movie/movie.json");
    let first = charad(&[
        "--u", "1.1", "--n-ads", "2", "--echo-config", echo.to_str().unwrap(),
        "pipeline", "--manifest", &manifest, "--out-dir", a.to_str().unwrap(),
    ]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let second = charad(&["--config", echo.to_str().unwrap(), "pipeline", "--manifest", &manifest, "--out-dir", b.to_str().unwrap()]);
    assert!(second.status.success(), "{}", String::from_utf8_lossy(&second.stderr));
    for f in ["bank.json", "clips.jsonl", "results.jsonl", "config.toml"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert!(std::fs::read_to_string(&echo).unwrap().contains("u = 1.1"));
}

#[test]
fn env_overrides_config_file_and_flag_overrides_env() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    let echo = dir.path().join("echo.toml");
    std::fs::write(&cfg, "u = 0.7\nmu = 3\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_charad"))
        .env("CHARAD_LOG", "warn")
        .env("CHARAD_U", "0.8")
        .env("CHARAD_MU", "5")
        .args(["--config", cfg.to_str().unwrap(), "--mu", "6", "--echo-config", echo.to_str().unwrap()])
        .args(["merge-tokens", "--tokens", &fx("tokens/tokens.jsonl")])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&echo).unwrap();
    assert!(text.contains("u = 0.8"), "{text}");
    assert!(text.contains("mu = 6"), "{text}");
}
