use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use redefix_core::harness::LocalBrowser;
use serde_json::Value;

const BAD: &str = ".card { color: red; }";
const GOOD: &str = ".card { width: 90%; }";

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn redefix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_redefix"))
        .args(args)
        .env_remove("REDEFIX_SO_API_KEY")
        .output()
        .unwrap()
}

fn browser() -> bool {
    let ok = LocalBrowser::from_env().is_installed();
    if !ok {
        eprintln!("skipping: no local browser");
    }
    ok
}

fn mock(dir: &Path, responses: &[&str]) -> PathBuf {
    let texts: Vec<String> = responses.iter().map(|c| format!("```css\n{c}\n```")).collect();
    let path = dir.join("mock.json");
    std::fs::write(&path, serde_json::to_string(&texts).unwrap()).unwrap();
    path
}

fn repair(dir: &Path, mock: &Path, out: &str) -> Output {
    let page = fixtures().join("protrude-element.html");
    redefix(&[
        "repair",
        page.to_str().unwrap(),
        "--zero-shot",
        "--mock-llm",
        mock.to_str().unwrap(),
        "--out",
        dir.join(out).to_str().unwrap(),
    ])
}

#[test]
fn kb_build_quota_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let api = tmp.path().join("api");
    std::fs::create_dir(&api).unwrap();
    for f in ["questions.json", "answers.json", "comments.json"] {
        std::fs::copy(fixtures().join("canned-api").join(f), api.join(f)).unwrap();
    }
    std::fs::write(api.join("quota.json"), r#"{"requests": 1}"#).unwrap();
    let kb = tmp.path().join("kb");
    let out = redefix(&["--kb", kb.to_str().unwrap(), "kb", "build", "--fixture", api.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn kb_build_without_key_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let out = redefix(&["--kb", tmp.path().join("kb").to_str().unwrap(), "kb", "build"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn report_on_empty_dir_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let out = redefix(&["report", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unreachable_webdriver_exits_1() {
    let page = fixtures().join("clean.html");
    let out = redefix(&["--webdriver", "http://127.0.0.1:9", "detect", page.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unrepaired_failure_exits_4() {
    if !browser() {
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let script = mock(tmp.path(), &[BAD; 25]);
    let out = repair(tmp.path(), &script, "out");
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&std::fs::read(tmp.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["outcomes"][0]["outcome"]["status"], "FailedMaxIterations");
    assert_eq!(report["llm_calls"], 25);
}

#[test]
fn repeated_runs_give_identical_reports() {
    if !browser() {
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let script = mock(tmp.path(), &[BAD, BAD, BAD, BAD, BAD, GOOD, GOOD, GOOD, GOOD, GOOD]);
    let mut reports = Vec::new();
    for out in ["a", "b"] {
        let o = repair(tmp.path(), &script, out);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let mut r: Value = serde_json::from_slice(&std::fs::read(tmp.path().join(out).join("report.json")).unwrap()).unwrap();
        r.as_object_mut().unwrap().remove("metadata");
        reports.push(serde_json::to_string_pretty(&r).unwrap());
        let html = redefix(&["report", tmp.path().join(out).to_str().unwrap()]);
        assert_eq!(html.status.code(), Some(0));
        assert!(tmp.path().join(out).join("index.html").is_file());
    }
    assert_eq!(reports[0], reports[1]);
}
