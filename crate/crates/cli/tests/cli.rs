use std::path::{Path, PathBuf};
use std::process::Command as Process;

use clap::Parser;
use redline_cli::{run, Cli, EXIT_CORRUPT, EXIT_INVALID, EXIT_OK};
use redline_core::{Command, Component, ExecutableEdit, ScriptedProvider, Session, Settings, TemplateSet, Timestamp};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn cli(args: &[&str]) -> (i32, String, String) {
    let cli = Cli::try_parse_from(std::iter::once("redline").chain(args.iter().copied())).unwrap();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(cli, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_reference_example() {
    let (code, out, _) = cli(&["validate", path(&fixtures().join("payloads/example_edit.json"))]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(out, "edit 0: OK\n");
}

#[test]
fn validate_empty_list() {
    let (code, out, err) = cli(&["validate", path(&fixtures().join("payloads/empty.json"))]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(out, "");
    assert!(err.contains("0 edits"));
}

#[test]
fn validate_missing_component() {
    let (code, out, _) = cli(&["validate", path(&fixtures().join("payloads/missing_component.json"))]);
    assert_eq!(code, EXIT_INVALID);
    assert_eq!(out, "edit 0: OK\nedit 1: SchemaViolation: missing key component\n");
}

#[test]
fn validate_malformed_and_missing_files() {
    assert_eq!(cli(&["validate", path(&fixtures().join("payloads/truncated.json"))]).0, EXIT_CORRUPT);
    assert_eq!(cli(&["validate", "/nonexistent/payload.json"]).0, EXIT_CORRUPT);
}

fn write_log(dir: &Path, session: &mut Session) -> PathBuf {
    let log = dir.join("events.jsonl");
    let lines: String = session
        .take_events()
        .iter()
        .map(|e| serde_json::to_string(e).unwrap() + "\n")
        .collect();
    std::fs::write(&log, lines).unwrap();
    log
}

/// Five inaccurate suggestions; three dismissed, two accepted.
fn sixty_percent_session() -> Session {
    let p = ScriptedProvider::new();
    let t = TemplateSet::default();
    let mut s = Session::create("one two three four five", Settings::default(), Timestamp(0));
    let words = ["one", "two", "three", "four", "five"];
    let edits = words
        .iter()
        .map(|w| ExecutableEdit::new(*w, format!("{w}!"), Component::Chat).new_info(true))
        .collect();
    s.execute(Command::Submit { edits, inaccurate: vec![0, 1, 2, 3, 4] }, &p, &t, Timestamp(1))
        .unwrap();
    for (i, n) in [1u64, 2, 3, 4, 5].into_iter().enumerate() {
        let suggestion = redline_core::SuggestionId(n);
        let cmd = if i < 3 {
            Command::Dismiss { suggestion }
        } else {
            Command::Accept { suggestion }
        };
        s.execute(cmd, &p, &t, Timestamp(2 + i as u64)).unwrap();
    }
    s
}

#[test]
fn replay_sixty_percent_log() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = sixty_percent_session();
    let log = write_log(dir.path(), &mut s);
    let (code, out, _) = cli(&["replay", path(&log)]);
    assert_eq!(code, EXIT_OK);
    assert!(out.starts_with("one two three four! five!\n---\n"), "{out}");
    assert!(out.contains("prevented: 60.0%"), "{out}");
    let (_, json, _) = cli(&["replay", path(&log), "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["metrics"]["prevented"], 60.0);
    assert_eq!(v["spans"].as_array().unwrap().len(), 2);
}

#[test]
fn replay_empty_log_over_template() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("empty.jsonl");
    std::fs::write(&log, "").unwrap();
    let template = dir.path().join("template.txt");
    std::fs::write(&template, "Dear team,").unwrap();
    let (code, out, _) = cli(&["replay", path(&log), "--template", path(&template)]);
    assert_eq!(code, EXIT_OK);
    assert!(out.starts_with("Dear team,\n---\n"));
    assert!(out.contains("no system-generated spans"));
    assert_eq!(cli(&["replay", path(&log)]).0, EXIT_CORRUPT);
}

#[test]
fn replay_corrupt_log_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = sixty_percent_session();
    let log = write_log(dir.path(), &mut s);
    let text = std::fs::read_to_string(&log).unwrap();
    // drop an event from the middle
    let mut lines: Vec<&str> = text.lines().collect();
    lines.remove(2);
    std::fs::write(&log, lines.join("\n")).unwrap();
    let (code, _, err) = cli(&["replay", path(&log)]);
    assert_eq!(code, EXIT_CORRUPT);
    assert!(err.contains("seq"), "{err}");
    std::fs::write(&log, "{not json\n").unwrap();
    assert_eq!(cli(&["replay", path(&log)]).0, EXIT_CORRUPT);
}

#[test]
fn apply_script_then_audit() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let (code, out, err) = cli(&[
        "apply",
        path(&fixtures().join("session_script.json")),
        "--store",
        path(&store),
        "--provider",
        "scripted",
        "--fixtures",
        path(&fixtures().join("scripted")),
        "--perturbed-template",
        path(&fixtures().join("perturbed_chat.json")),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.ends_with("document d1\n"));

    let doc = store.join("d1");
    let (code, json, _) = cli(&["audit", path(&doc)]);
    assert_eq!(code, EXIT_OK);
    let stored = redline_core::FileStore::open(&store).unwrap().load("d1").unwrap();
    assert_eq!(json, stored.audit_report().to_json());

    let (_, text, _) = cli(&["audit", path(&doc), "--format", "text"]);
    assert!(text.contains("incorrect"));
    assert!(text.contains("detected: 100.0%"));

    let (code, m, _) = cli(&["metrics", path(&doc)]);
    assert_eq!(code, EXIT_OK);
    let v: serde_json::Value = serde_json::from_str(&m).unwrap();
    assert_eq!(v["metrics"]["perturbed_turns"], 1);

    // the stored log replays to the same report
    let (_, replayed, _) = cli(&["replay", path(&doc.join("events.jsonl")), "--format", "json"]);
    assert_eq!(replayed, json);
}

#[test]
fn scripted_provider_needs_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = cli(&[
        "apply",
        path(&fixtures().join("session_script.json")),
        "--store",
        path(dir.path()),
        "--provider",
        "scripted",
    ]);
    assert_eq!(code, EXIT_INVALID);
    assert!(err.contains("--fixtures"), "{err}");
}

#[test]
fn audit_of_user_only_and_corrupt_documents() {
    let dir = tempfile::tempdir().unwrap();
    let store = redline_core::FileStore::open(dir.path()).unwrap();
    let mut s = Session::create("all mine", Settings::default(), Timestamp(0));
    store.save("d1", &mut s).unwrap();
    let (code, out, _) = cli(&["audit", path(&dir.path().join("d1"))]);
    assert_eq!(code, EXIT_OK);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["spans"], serde_json::json!([]));

    std::fs::write(dir.path().join("d1/checkpoint.json"), "{\"seq\":1,\"sha256\":\"00\"}\n{}").unwrap();
    assert_eq!(cli(&["audit", path(&dir.path().join("d1"))]).0, EXIT_CORRUPT);
    assert_eq!(cli(&["audit", path(&dir.path().join("missing"))]).0, EXIT_CORRUPT);
}

#[test]
fn one_accepted_new_info_edit_is_one_unlabeled_span() {
    let dir = tempfile::tempdir().unwrap();
    let store = redline_core::FileStore::open(dir.path()).unwrap();
    let p = ScriptedProvider::new();
    let t = TemplateSet::default();
    let mut s = Session::create("Visit Rome.", Settings::default(), Timestamp(0));
    let edit = ExecutableEdit::new("Rome.", "Rome, home to 3 million people.", Component::Chat).new_info(true);
    s.execute(Command::Submit { edits: vec![edit], inaccurate: vec![] }, &p, &t, Timestamp(1))
        .unwrap();
    s.execute(Command::Accept { suggestion: redline_core::SuggestionId(1) }, &p, &t, Timestamp(2))
        .unwrap();
    store.save("d1", &mut s).unwrap();
    let (_, out, _) = cli(&["audit", path(&dir.path().join("d1")), "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["spans"].as_array().unwrap().len(), 1);
    assert_eq!(v["spans"][0]["highlight_class"], "new_info_unlabeled");
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_redline");
    let ok = Process::new(bin)
        .args(["validate", path(&fixtures().join("payloads/example_edit.json"))])
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let bad = Process::new(bin)
        .args(["validate", path(&fixtures().join("payloads/missing_component.json"))])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
    let corrupt = Process::new(bin)
        .args(["validate", path(&fixtures().join("payloads/truncated.json"))])
        .output()
        .unwrap();
    assert_eq!(corrupt.status.code(), Some(2));
}
