//! The `colma` binary end to end.

use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn colma(config: Option<&Path>, args: &[&str], stdin: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_colma"));
    cmd.args(args).env_remove("COLMA_CONFIG").env("RUST_LOG", "warn");
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::piped());
    let mut child = cmd.spawn().unwrap();
    let mut pipe = child.stdin.take().unwrap();
    if let Some(s) = stdin {
        // A command that fails early exits without reading its input.
        if let Err(e) = pipe.write_all(s.as_bytes()) {
            assert_eq!(e.kind(), std::io::ErrorKind::BrokenPipe, "{e}");
        }
    }
    drop(pipe);
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn config(dir: &Path, name: &str) -> std::path::PathBuf {
    let p = dir.join(format!("{name}.toml"));
    std::fs::write(
        &p,
        format!("auth_file = \"auth.json\"\ndefault_dim = 4\n[store]\ndir = \"{name}-data\"\nsync_writes = false\n"),
    )
    .unwrap();
    std::fs::write(
        dir.join("auth.json"),
        r#"[{"token":"reader","role":"reader","namespaces":["notes"]},{"token":"writer","role":"writer","namespaces":["notes"]}]"#,
    )
    .unwrap();
    p
}

const STIMULI: &str = r#"{"modality":"text","content":"fed the cat","embedding":[1,0,0,0],"entities":["cat"],"salience":0.9}
{"modality":"structured","content":"{\"meal\":\"fish\"}","entities":["cat"]}

{"modality":"text","content":"watered plants","provenance":["diary"]}
"#;

#[test]
fn ingest_export_import_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let a = config(dir.path(), "a");
    let b = config(dir.path(), "b");
    let o = colma(Some(&a), &["--namespace", "notes", "ingest"], Some(STIMULI));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 3);
    let o = colma(Some(&a), &["--namespace", "notes", "query", "assert_triple", r#"{"subject":"cat","predicate":"eats","object":"lit:fish"}"#], None);
    assert!(o.status.success());

    let first = colma(Some(&a), &["--namespace", "notes", "export"], None);
    assert!(first.status.success());
    let export_a = stdout(&first);
    assert!(export_a.lines().count() >= 6);
    let file = dir.path().join("notes.jsonl");
    std::fs::write(&file, &export_a).unwrap();
    let o = colma(Some(&b), &["--namespace", "notes", "import", file.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let export_b = stdout(&colma(Some(&b), &["--namespace", "notes", "export"], None));
    assert_eq!(export_a, export_b);
    // Importing into a namespace that already holds data is an engine error.
    let o = colma(Some(&b), &["--namespace", "notes", "import", file.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));

    let stats = stdout(&colma(Some(&b), &["--namespace", "notes", "stats"], None));
    let v: serde_json::Value = serde_json::from_str(&stats).unwrap();
    assert_eq!(v["records"], 3);
    assert_eq!(v["triples_live"], 3);
}

#[test]
fn tokens_are_checked_when_given() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path(), "c");
    let o = colma(Some(&c), &["--namespace", "notes", "--token", "reader", "ingest"], Some(STIMULI));
    assert_eq!(o.status.code(), Some(2));
    let o = colma(Some(&c), &["--namespace", "notes", "--token", "writer", "ingest"], Some(STIMULI));
    assert!(o.status.success());
    let o = colma(Some(&c), &["--namespace", "other", "--token", "writer", "stats"], None);
    assert_eq!(o.status.code(), Some(2));
    let o = colma(Some(&c), &["--namespace", "notes", "--token", "reader", "query", "knn", r#"{"vector":[1,0,0,0],"k":1}"#], None);
    assert!(o.status.success());
    assert!(stdout(&o).contains("\"score\""));
    let o = colma(Some(&c), &["--namespace", "notes", "--token", "reader", "query", "put_record", r#"{"modality":"text","content":"x"}"#], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("forbidden"));
}

#[test]
fn scenario_output_is_deterministic() {
    let a = colma(None, &["scenario", "S4", "--seed", "7"], None);
    let b = colma(None, &["scenario", "S4", "--seed", "7"], None);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    assert!(text.lines().next().unwrap().contains("\"kind\":\"scenario\""));
    assert!(text.contains("replaced"));
}

#[test]
fn eval_reports_twelve_supported() {
    let o = colma(None, &["eval"], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let dims = v["dimensions"].as_array().unwrap();
    assert_eq!(dims.len(), 12);
    assert!(dims.iter().all(|d| d["status"] == "supported"));

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("nograph.toml");
    std::fs::write(&p, "graph_enabled = false\n").unwrap();
    let o = colma(Some(&p), &["eval", "--format", "text"], None);
    let text = stdout(&o);
    for dim in ["Reasoning", "Linking"] {
        let line = text.lines().find(|l| l.starts_with(dim)).unwrap();
        assert!(line.contains("unsupported"), "{line}");
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(colma(None, &["--bogus", "stats"], None).status.code(), Some(1));
    assert_eq!(colma(None, &["frobnicate"], None).status.code(), Some(1));
    assert_eq!(colma(None, &["scenario", "S9"], None).status.code(), Some(1));
    assert_eq!(colma(None, &["ingest"], Some("")).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path(), "u");
    assert_eq!(colma(Some(&c), &["--namespace", "notes", "query", "nope"], None).status.code(), Some(1));
    assert_eq!(colma(Some(&c), &["--namespace", "notes", "query", "knn", "{bad"], None).status.code(), Some(1));
    assert_eq!(colma(None, &["--help"], None).status.code(), Some(0));
}

#[test]
fn config_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path(), "env");
    let o = Command::new(env!("CARGO_BIN_EXE_colma"))
        .args(["--namespace", "notes", "ingest"])
        .env("COLMA_CONFIG", &c)
        .stdin(Stdio::null())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("env-data").exists());
}

#[test]
fn killed_ingest_keeps_every_acknowledged_record() {
    use std::io::{BufRead, BufReader};
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("crash.toml");
    // sync_writes stays on: an acknowledgement means the WAL record is durable.
    std::fs::write(&p, "default_dim = 4\n[store]\ndir = \"crash-data\"\n").unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_colma"))
        .args(["--namespace", "notes", "ingest"])
        .arg("--config")
        .arg(&p)
        .env_remove("COLMA_CONFIG")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut input = child.stdin.take().unwrap();
    let mut acks = BufReader::new(child.stdout.take().unwrap());
    let mut acked = Vec::new();
    for i in 0..40 {
        writeln!(input, r#"{{"modality":"text","content":"entry {i}"}}"#).unwrap();
        input.flush().unwrap();
        let mut line = String::new();
        acks.read_line(&mut line).unwrap();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        acked.push(v["id"].as_str().unwrap().to_owned());
    }
    // One more record in flight, never acknowledged.
    writeln!(input, r#"{{"modality":"text","content":"in flight"}}"#).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();

    let o = colma(Some(&p), &["--namespace", "notes", "export"], None);
    assert!(o.status.success());
    let text = stdout(&o);
    for id in &acked {
        assert!(text.contains(id.as_str()), "acknowledged record {id} lost");
    }
}
