//! Namespace isolation between two teams over the wire.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};

use colma_core::{json as cjson, Engine, EngineConfig};
use colma_service::{AuthTable, Client, ErrorCode, Op, OpClass, Principal, Request, Role, Server};

use crate::{ensure, ok, Outcome};

const TRIALS: usize = 10_000;
const TEAMS: [&str; 2] = ["A", "B"];
const ROLES: [Role; 3] = [Role::Reader, Role::Writer, Role::Admin];

fn namespaces(team: usize) -> [String; 2] {
    [format!("team{}.notes", TEAMS[team]), format!("team{}.logs", TEAMS[team])]
}

fn token(team: usize, role: Role) -> String {
    format!("{}-{role:?}", TEAMS[team]).to_lowercase()
}

/// Lowercase alphanumeric runs; secrets, entity names and ids all survive it.
fn tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_ascii_lowercase)
        .collect()
}

/// What each team has written so far, and so what the other must never see.
#[derive(Default)]
struct Secrets {
    ids: BTreeSet<String>,
    /// Every `secret<team>...` marker and entity the team has used.
    words: BTreeSet<String>,
}

impl Secrets {
    fn leaked_in(&self, response: &BTreeSet<String>, request: &BTreeSet<String>) -> Option<String> {
        response
            .iter()
            .find(|t| !request.contains(*t) && (self.ids.contains(*t) || self.words.contains(*t)))
            .cloned()
    }
}

struct Gen<'a> {
    rng: &'a mut StdRng,
    secrets: &'a [Secrets; 2],
    /// Last delta each team pulled from one of its namespaces.
    batches: &'a [Option<(String, Value)>; 2],
    n: &'a mut u64,
}

impl Gen<'_> {
    fn secret(&mut self, team: usize, kind: &str) -> String {
        *self.n += 1;
        format!("secret{}{kind}{}", TEAMS[team], self.n)
    }

    /// A marker, entity or id from either team, or a fresh one.
    fn probe(&mut self) -> String {
        let team = self.rng.random_range(0..2);
        let pool: Vec<&String> = if self.rng.random_bool(0.5) {
            self.secrets[team].ids.iter().collect()
        } else {
            self.secrets[team].words.iter().collect()
        };
        if pool.is_empty() || self.rng.random_bool(0.1) {
            return self.secret(team, "x");
        }
        pool[self.rng.random_range(0..pool.len())].clone()
    }

    fn probe_id(&mut self) -> String {
        let team = self.rng.random_range(0..2);
        let ids: Vec<&String> = self.secrets[team].ids.iter().collect();
        if ids.is_empty() {
            return "00".repeat(16);
        }
        ids[self.rng.random_range(0..ids.len())].clone()
    }

    fn vector(&mut self) -> Vec<f32> {
        (0..4).map(|_| self.rng.random_range(-1.0..1.0)).collect()
    }

    /// Payload for `op` sent by a member of `team`. Writes carry only the
    /// sender's own secrets; reads probe with anything.
    fn payload(&mut self, op: Op, team: usize) -> Value {
        match op {
            Op::PutRecord => {
                let marker = self.secret(team, "m");
                let mut p = json!({"modality": "text", "content": format!("{marker} note"), "provenance": [format!("team{}", TEAMS[team])]});
                if self.rng.random_bool(0.5) {
                    p["embedding"] = json!(self.vector());
                }
                p
            }
            Op::GetRecord => json!({"id": self.probe_id()}),
            Op::AssertTriple => json!({"subject": self.secret(team, "e"), "predicate": "rel", "object": self.secret(team, "e")}),
            Op::QueryTriples => json!({"subject": self.probe()}),
            Op::Knn => json!({"vector": self.vector(), "k": 5}),
            Op::Recall => json!({"cue": {"text_tokens": [self.probe()], "entities": [self.probe()]}}),
            Op::Associate => json!({"cue": {"entities": [self.probe(), self.probe()]}, "k": 20}),
            Op::Reason => json!({
                "goal": ["?x", "rel", "?y"],
                "rules": [{"id": "sym", "premises": [["?x", "rel", "?y"]], "conclusion": ["?y", "rel", "?x"], "confidence": 0.9}],
            }),
            Op::Predict => json!({"stream": self.probe(), "context": [self.probe()]}),
            Op::Reflect => json!({"task_id": self.probe(), "strategy": "heuristic", "success": self.rng.random_bool(0.5)}),
            Op::UpdateMemory => json!({"proposal": {
                "triple": {"subject": self.secret(team, "e"), "predicate": "attr", "object": format!("lit:{}", self.secret(team, "v"))},
                "evidence": [format!("team{}", TEAMS[team])],
                "evidence_confidence": 0.8,
            }}),
            Op::ConsolidateTick | Op::ForgetTick => json!({}),
            Op::SyncDelta => json!({"since": 0}),
            Op::ApplyDelta => {
                let Some((from, batch)) = &self.batches[team] else {
                    return json!({"batch": {"mutations": []}});
                };
                // Relabel the team's own delta onto another namespace, whole
                // or mixed in with the original.
                let all: Vec<String> = namespaces(0).into_iter().chain(namespaces(1)).collect();
                let target = all[self.rng.random_range(0..all.len())].clone();
                let moved: Value = serde_json::from_str(&batch.to_string().replace(&format!("\"{from}\""), &format!("\"{target}\"")))
                    .unwrap_or(Value::Null);
                let mutations = match self.rng.random_range(0..3) {
                    0 => batch["mutations"].clone(),
                    1 => moved["mutations"].clone(),
                    _ => {
                        let mut m = batch["mutations"].as_array().cloned().unwrap_or_default();
                        m.extend(moved["mutations"].as_array().cloned().unwrap_or_default());
                        Value::Array(m)
                    }
                };
                json!({"batch": {"mutations": mutations}})
            }
            Op::Stats => Value::Null,
        }
    }
}

/// Namespaces named by any partition in an apply_delta payload.
fn batch_namespaces(payload: &Value) -> BTreeSet<String> {
    payload["batch"]["mutations"]
        .as_array()
        .into_iter()
        .flatten()
        .filter_map(|m| m["partition"]["namespace"].as_str().map(str::to_owned))
        .collect()
}

/// Two teams, each with a reader, a writer and an admin granted only
/// `team<X>.*`, send 10k random requests over TCP across all sixteen ops,
/// aimed 30% at the other team's namespaces and probing with the other
/// team's ids, entity names and markers. Every cross-team request must be
/// refused as forbidden, every role denial must be exactly the expected
/// one, and no response may carry an id or secret of the other team that
/// the request did not already contain. Afterwards each namespace must hold
/// only its own team's data.
pub fn adversarial() -> Outcome {
    let dir = ok(tempfile::tempdir(), "tempdir")?;
    let mut cfg = EngineConfig::with_dir(dir.path());
    cfg.store.sync_writes = false;
    cfg.default_dim = 4;
    let engine = Arc::new(ok(Engine::open(cfg), "open")?);
    let mut principals = Vec::new();
    for team in 0..2 {
        for role in ROLES {
            principals.push(Principal::new(token(team, role), role, [format!("team{}.*", TEAMS[team])]));
        }
    }
    let auth = ok(AuthTable::new(principals), "auth table")?;
    let service = Arc::new(colma_service::Service::new(engine.clone(), auth));
    let server = ok(ok(Server::bind("127.0.0.1:0", service), "bind")?.spawn(), "spawn")?;
    let mut clients: BTreeMap<String, Client> = BTreeMap::new();
    for team in 0..2 {
        for role in ROLES {
            clients.insert(token(team, role), ok(Client::connect(server.addr()), "connect")?);
        }
    }

    let mut secrets: [Secrets; 2] = Default::default();
    let mut batches: [Option<(String, Value)>; 2] = [None, None];
    let mut rng = StdRng::seed_from_u64(1111);
    let (mut cross, mut denied_roles, mut succeeded, mut n) = (0, 0, 0, 0u64);
    for trial in 0..TRIALS {
        let team = rng.random_range(0..2);
        let role = ROLES[rng.random_range(0..3)];
        let op = Op::ALL[rng.random_range(0..Op::ALL.len())];
        let other = rng.random_bool(0.3);
        let ns_team = if other { 1 - team } else { team };
        let namespace = namespaces(ns_team)[rng.random_range(0..2)].clone();
        let payload = Gen {
            rng: &mut rng,
            secrets: &secrets,
            batches: &batches,
            n: &mut n,
        }
        .payload(op, team);
        let tok = token(team, role);
        let req = Request::new(op, &namespace, payload.clone()).with_token(&tok).with_id(trial as u64);
        let req_text = ok(serde_json::to_string(&req), "request json")?;
        let client = clients.get_mut(&tok).ok_or("client missing")?;
        let resp = ok(client.call(&req), "call")?;
        let resp_text = ok(cjson::canonical(&resp), "response json")?;
        ensure!(resp.request_id == json!(trial as u64), "trial {trial}: request id not echoed");

        let code = resp.code();
        let role_ok = match (role, op.class()) {
            (Role::Admin, _) => true,
            (Role::Writer, c) => c != OpClass::Admin,
            (Role::Reader, c) => c == OpClass::Read,
        };
        let foreign_batch = op == Op::ApplyDelta && batch_namespaces(&payload).iter().any(|b| *b != namespace);
        if other {
            cross += 1;
            ensure!(code == Some(ErrorCode::Forbidden), "trial {trial}: {tok} {op} on {namespace} gave {code:?}");
        } else if !role_ok {
            denied_roles += 1;
            ensure!(code == Some(ErrorCode::Forbidden), "trial {trial}: {tok} ran {op}: {code:?}");
        } else if foreign_batch {
            ensure!(code == Some(ErrorCode::Forbidden), "trial {trial}: relabeled batch applied to {namespace}: {code:?}");
        } else {
            ensure!(code != Some(ErrorCode::Forbidden) && code != Some(ErrorCode::Unauthorized), "trial {trial}: {tok} {op} on own {namespace} refused");
        }
        if let Some(leak) = secrets[1 - team].leaked_in(&tokens(&resp_text), &tokens(&req_text)) {
            return Err(format!("trial {trial}: {tok} {op} on {namespace} received {leak}"));
        }

        if resp.is_ok() {
            succeeded += 1;
            let payload_tokens = tokens(&payload.to_string());
            let mine = &mut secrets[team];
            mine.words.extend(payload_tokens.into_iter().filter(|t| t.starts_with(&format!("secret{}", TEAMS[team].to_lowercase()))));
            let value = resp.into_result().unwrap_or(Value::Null);
            match op {
                Op::PutRecord => {
                    if let Some(id) = value["id"].as_str() {
                        mine.ids.insert(id.to_owned());
                    }
                }
                Op::SyncDelta => batches[team] = Some((namespace.clone(), value)),
                _ => {}
            }
        }
    }

    // Reasoning and ticks create records of their own; collect every id now
    // stored per team and confirm nothing crossed over.
    let mut stored = 0;
    for team in 0..2 {
        let theirs = &secrets[1 - team];
        for ns in namespaces(team) {
            let kb = ok(engine.namespace(&ns), "namespace")?;
            for r in kb.records() {
                let text = ok(serde_json::to_string(&r), "record json")?;
                ensure!(!theirs.ids.contains(&r.id.to_hex()), "{ns} holds the other team's record {}", r.id);
                if let Some(leak) = theirs.leaked_in(&tokens(&text), &BTreeSet::new()) {
                    return Err(format!("{ns} record {} carries {leak}", r.id));
                }
                stored += 1;
            }
            for t in kb.all_triples() {
                let text = ok(serde_json::to_string(&t), "triple json")?;
                if let Some(leak) = theirs.leaked_in(&tokens(&text), &BTreeSet::new()) {
                    return Err(format!("{ns} triple carries {leak}"));
                }
            }
            let stats = ok(kb.stats(), "stats")?;
            ensure!(stats.records == kb.record_count(), "{ns}: stats disagree with the record count");
        }
    }
    ok(server.shutdown(), "shutdown")?;
    Ok(format!(
        "{TRIALS} trials: {cross} cross-team and {denied_roles} role denials refused, {succeeded} succeeded, no leaks; {stored} records stay with their team"
    ))
}
