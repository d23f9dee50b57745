//! The protocol over a real socket, compared against in-process calls.

use std::sync::Arc;

use serde_json::{json, Value};

use colma_core::cognition::{Cue, Pattern};
use colma_core::{json as cjson, Engine, EngineConfig, KnnMode, TriplePattern};
use colma_service::{AuthTable, Client, ErrorCode, Op, Principal, Request, Role, Server, ServerHandle, Service};

struct Fixture {
    _dir: tempfile::TempDir,
    engine: Arc<Engine>,
    server: ServerHandle,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = EngineConfig::with_dir(dir.path());
    cfg.store.sync_writes = false;
    cfg.default_dim = 4;
    let engine = Arc::new(Engine::open(cfg).unwrap());
    let auth = AuthTable::new(vec![
        Principal::new("w-token", Role::Writer, ["notes", "team.*"]),
        Principal::new("r-token", Role::Reader, ["notes"]),
        Principal::new("a-token", Role::Admin, ["notes", "ops"]),
    ])
    .unwrap();
    let service = Arc::new(Service::new(engine.clone(), auth));
    let server = Server::bind("127.0.0.1:0", service).unwrap().spawn().unwrap();
    Fixture { _dir: dir, engine, server }
}

fn call(c: &mut Client, op: Op, ns: &str, token: &str, payload: Value) -> Result<Value, ErrorCode> {
    c.call(&Request::new(op, ns, payload).with_token(token))
        .unwrap()
        .into_result()
        .map_err(|e| e.code)
}

fn canon<T: serde::Serialize>(v: &T) -> String {
    cjson::canonical(v).unwrap()
}

#[test]
fn fresh_store_stats_are_zero() {
    let f = fixture();
    let mut c = Client::connect(f.server.addr()).unwrap();
    let s = call(&mut c, Op::Stats, "notes", "r-token", Value::Null).unwrap();
    let counts = s.as_object().unwrap();
    assert!(!counts.is_empty());
    assert!(counts.values().all(|v| v == 0), "{s}");
}

#[test]
fn protocol_errors() {
    let f = fixture();
    let mut c = Client::connect(f.server.addr()).unwrap();
    // No token.
    let r = c.call(&Request::new(Op::Stats, "notes", Value::Null).with_id("q1")).unwrap();
    assert_eq!(r.code(), Some(ErrorCode::Unauthorized));
    assert_eq!(r.request_id, json!("q1"));
    assert_eq!(call(&mut c, Op::Stats, "notes", "nope", Value::Null), Err(ErrorCode::Unauthorized));
    // Malformed JSON keeps the connection usable.
    let raw = c.call_raw("{not json").unwrap();
    assert!(raw.contains("\"bad_request\""), "{raw}");
    let raw = c.call_raw(r#"{"v":1,"op":"stats","namespace":"notes","token":"r-token","request_id":42,"payload":{}}"#).unwrap();
    assert!(raw.contains("\"status\":\"ok\"") && raw.contains("\"request_id\":42"), "{raw}");
    let raw = c.call_raw(r#"{"v":2,"op":"stats","namespace":"notes","token":"r-token","request_id":"x"}"#).unwrap();
    assert!(raw.contains("\"bad_version\""), "{raw}");
    let raw = c.call_raw(r#"{"v":1,"op":"drop_all","namespace":"notes","token":"r-token","request_id":"x"}"#).unwrap();
    assert!(raw.contains("\"unknown_op\""), "{raw}");
    // Role and namespace checks.
    let put = json!({"modality": "text", "content": "hello"});
    assert_eq!(call(&mut c, Op::PutRecord, "notes", "r-token", put.clone()), Err(ErrorCode::Forbidden));
    assert!(call(&mut c, Op::Recall, "notes", "r-token", json!({"cue": {"text_tokens": ["hello"]}})).is_ok());
    assert_eq!(call(&mut c, Op::PutRecord, "teamB.x", "w-token", put.clone()), Err(ErrorCode::Forbidden));
    assert!(call(&mut c, Op::PutRecord, "team.x", "w-token", put.clone()).is_ok());
    // Payload and engine errors.
    assert_eq!(call(&mut c, Op::Knn, "notes", "w-token", json!({"vector": [1, 0]})), Err(ErrorCode::InvalidArgument));
    assert_eq!(
        call(&mut c, Op::Knn, "notes", "w-token", json!({"vector": [1, 0], "k": 3})),
        Err(ErrorCode::InvalidArgument)
    );
    assert_eq!(call(&mut c, Op::Stats, "bad name!", "w-token", Value::Null), Err(ErrorCode::Forbidden));
}

#[test]
fn wire_results_equal_in_process_results() {
    let f = fixture();
    let mut c = Client::connect(f.server.addr()).unwrap();
    let w = "w-token";
    let vecs = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.7, 0.7, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]];
    let mut ids = Vec::new();
    for (i, v) in vecs.iter().enumerate() {
        let r = call(&mut c, Op::PutRecord, "notes", w, json!({"modality": "text", "content": format!("note {i} about cats"), "embedding": v})).unwrap();
        ids.push(r["id"].as_str().unwrap().to_owned());
        assert_eq!(r["version"], 1);
    }
    call(&mut c, Op::AssertTriple, "notes", w, json!({"subject": "cat", "predicate": "isA", "object": "animal"})).unwrap();
    call(&mut c, Op::AssertTriple, "notes", w, json!({"subject": "animal", "predicate": "needs", "object": "lit:food"})).unwrap();
    let kb = f.engine.namespace("notes").unwrap();

    let q = [0.9f32, 0.1, 0.0, 0.0];
    for mode in [KnnMode::Exact, KnnMode::Approx] {
        let wire = call(&mut c, Op::Knn, "notes", w, json!({"vector": q, "k": 3, "mode": mode})).unwrap();
        assert_eq!(canon(&wire), canon(&kb.knn(&q, 3, mode).unwrap()));
    }
    let wire = call(&mut c, Op::QueryTriples, "notes", w, json!({"subject": "cat"})).unwrap();
    assert_eq!(canon(&wire), canon(&kb.query_triples(&TriplePattern::new(Some("cat"), None, None), None).unwrap()));
    let wire = call(&mut c, Op::Associate, "notes", w, json!({"cue": {"entities": ["cat"]}, "k": 5})).unwrap();
    assert_eq!(canon(&wire), canon(&kb.associate(&Cue::entities(["cat"]), 5).unwrap()));
    let wire = call(&mut c, Op::GetRecord, "notes", w, json!({"id": ids[2], "version": 1})).unwrap();
    assert_eq!(canon(&wire), canon(&kb.record_version(&ids[2].parse().unwrap(), 1).unwrap()));
    let wire = call(&mut c, Op::Stats, "notes", w, Value::Null).unwrap();
    assert_eq!(canon(&wire), canon(&kb.stats().unwrap()));
    let wire = call(&mut c, Op::SyncDelta, "notes", w, json!({"since": 0})).unwrap();
    assert_eq!(canon(&wire), canon(&f.engine.sync_delta("notes", 0).unwrap()));

    // Reason writes derived triples, so compare through the stored state.
    let goal = json!(["?x", "needs", "?y"]);
    let rule = json!({"id": "inherit", "premises": [["?x", "isA", "?c"], ["?c", "needs", "?y"]], "conclusion": ["?x", "needs", "?y"]});
    let wire = call(&mut c, Op::Reason, "notes", w, json!({"goal": goal, "rules": [rule]})).unwrap();
    let again = kb.reason(&Pattern::new("?x", "needs", "?y"), &[serde_json::from_value(rule).unwrap()], None).unwrap();
    // The re-run finds the asserted fact stored, so only the traces differ.
    let strip = |v: Value| -> Vec<(Value, Value)> {
        v.as_array().unwrap().iter().map(|a| (a["bindings"].clone(), a["confidence"].clone())).collect()
    };
    assert_eq!(strip(wire["answers"].clone()), strip(serde_json::to_value(&again.answers).unwrap()));
    assert_eq!(wire["derived_asserted"], 1);
    assert_eq!(again.derived_asserted, 0);
}

#[test]
fn replication_ops_need_admin_and_stay_in_namespace() {
    let f = fixture();
    let mut c = Client::connect(f.server.addr()).unwrap();
    call(&mut c, Op::PutRecord, "notes", "w-token", json!({"modality": "text", "content": "x"})).unwrap();
    let batch = call(&mut c, Op::SyncDelta, "notes", "w-token", json!({"since": 0})).unwrap();
    assert_eq!(call(&mut c, Op::ApplyDelta, "notes", "w-token", json!({"batch": batch})), Err(ErrorCode::Forbidden));
    assert!(call(&mut c, Op::ApplyDelta, "notes", "a-token", json!({"batch": batch})).is_ok());
    // The same batch offered under another namespace is refused.
    assert_eq!(call(&mut c, Op::ApplyDelta, "ops", "a-token", json!({"batch": batch})), Err(ErrorCode::Forbidden));
    let moved: Value = serde_json::from_str(&batch.to_string().replace("\"notes\"", "\"ops\"")).unwrap();
    assert!(call(&mut c, Op::ApplyDelta, "ops", "a-token", json!({"batch": moved})).is_ok());
    let s = call(&mut c, Op::Stats, "ops", "a-token", Value::Null).unwrap();
    assert_eq!(s["records"], 1);
}

#[test]
fn concurrent_clients() {
    let f = fixture();
    let addr = f.server.addr();
    let handles: Vec<_> = (0..8)
        .map(|t| {
            std::thread::spawn(move || {
                let mut c = Client::connect(addr).unwrap();
                for i in 0..25 {
                    call(&mut c, Op::PutRecord, "notes", "w-token", json!({"modality": "text", "content": format!("t{t} n{i}")})).unwrap();
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    let mut c = Client::connect(addr).unwrap();
    assert_eq!(call(&mut c, Op::Stats, "notes", "r-token", Value::Null).unwrap()["records"], 200);
}
