//! Request dispatch: authentication, authorization, and the mapping from
//! wire operations onto engine calls.

use std::collections::BTreeMap;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use colma_core::cognition::{Cue, Pattern, ReflectOutcome, Rule, UpdateProposal};
use colma_core::coordination::TickReport;
use colma_core::storage::MutationBatch;
use colma_core::{json, Engine, KnnMode, RecordId, RecordInput, Triple, TriplePattern};

use crate::auth::{Access, AuthTable};
use crate::protocol::{ApiError, ErrorCode, Op, Request, Response, PROTOCOL_VERSION};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GetRecordArgs {
    id: RecordId,
    #[serde(default)]
    version: Option<u32>,
    #[serde(default)]
    as_of: Option<i64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryArgs {
    #[serde(default)]
    subject: Option<String>,
    #[serde(default)]
    predicate: Option<String>,
    #[serde(default)]
    object: Option<String>,
    #[serde(default)]
    as_of: Option<i64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KnnArgs {
    vector: Vec<f32>,
    k: usize,
    #[serde(default)]
    mode: KnnMode,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecallArgs {
    cue: Cue,
    #[serde(default)]
    max_rounds: Option<usize>,
    #[serde(default)]
    accept: Option<f64>,
}

fn default_k() -> usize {
    10
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AssociateArgs {
    cue: Cue,
    #[serde(default = "default_k")]
    k: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReasonArgs {
    goal: Pattern,
    #[serde(default)]
    rules: Vec<Rule>,
    #[serde(default)]
    max_depth: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictArgs {
    stream: String,
    #[serde(default)]
    context: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UpdateArgs {
    proposal: UpdateProposal,
    #[serde(default)]
    max_rounds: Option<usize>,
    #[serde(default)]
    accept: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TickArgs {
    #[serde(default)]
    now: Option<i64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SyncArgs {
    #[serde(default)]
    since: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ApplyArgs {
    batch: MutationBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PutRecordResult {
    pub id: RecordId,
    pub version: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApplyDeltaResult {
    pub max_seqno: u64,
}

fn args<T: DeserializeOwned>(op: Op, payload: Value) -> Result<T, ApiError> {
    let payload = if payload.is_null() { Value::Object(Default::default()) } else { payload };
    serde_json::from_value(payload).map_err(|e| ApiError::new(ErrorCode::InvalidArgument, format!("{op} payload: {e}")))
}

fn to_value<T: Serialize>(v: T) -> Result<Value, ApiError> {
    serde_json::to_value(v).map_err(|e| ApiError::new(ErrorCode::Internal, e.to_string()))
}

/// The engine behind an auth table. Shared by every connection.
pub struct Service {
    engine: Arc<Engine>,
    auth: AuthTable,
    tick_lock: Mutex<()>,
}

impl std::fmt::Debug for Service {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Service").field("engine", &self.engine).field("auth", &self.auth).finish()
    }
}

impl Service {
    pub fn new(engine: Arc<Engine>, auth: AuthTable) -> Self {
        Self {
            engine,
            auth,
            tick_lock: Mutex::new(()),
        }
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    /// One request line in, one canonical response line out (no newline).
    pub fn handle_line(&self, line: &str) -> String {
        let resp = match serde_json::from_str::<Value>(line) {
            Err(e) => Response::err(Value::Null, ApiError::new(ErrorCode::BadRequest, format!("malformed JSON: {e}"))),
            Ok(v) => {
                let id = v.get("request_id").cloned().unwrap_or(Value::Null);
                match serde_json::from_value::<Request>(v) {
                    Ok(req) => self.handle(req),
                    Err(e) => Response::err(id, ApiError::new(ErrorCode::BadRequest, format!("not a request: {e}"))),
                }
            }
        };
        json::canonical(&resp).expect("responses always serialize")
    }

    pub fn handle(&self, req: Request) -> Response {
        let id = req.request_id.clone();
        match self.check_and_execute(req) {
            Ok(v) => Response::ok(id, v),
            Err(e) => Response::err(id, e),
        }
    }

    fn check_and_execute(&self, req: Request) -> Result<Value, ApiError> {
        if req.v != PROTOCOL_VERSION {
            return Err(ApiError::new(
                ErrorCode::BadVersion,
                format!("protocol version {} is not supported; use {PROTOCOL_VERSION}", req.v),
            ));
        }
        let Some(token) = req.token.as_deref() else {
            return Err(ApiError::new(ErrorCode::Unauthorized, "missing token"));
        };
        if self.auth.resolve(token).is_none() {
            return Err(ApiError::new(ErrorCode::Unauthorized, "unknown token"));
        }
        let Some(op) = Op::parse(&req.op) else {
            return Err(ApiError::new(ErrorCode::UnknownOp, format!("unknown op {:?}", req.op)));
        };
        match self.auth.authorize_token(token, &req.namespace, op) {
            Some(Access::Allow) => {}
            Some(Access::DenyRole) => {
                return Err(ApiError::new(ErrorCode::Forbidden, format!("role may not run {op}")));
            }
            Some(Access::DenyNamespace) | None => {
                return Err(ApiError::new(ErrorCode::Forbidden, "namespace not granted"));
            }
        }
        self.execute(op, &req.namespace, req.payload)
    }

    /// Runs `op` on `namespace` without any auth check. The wire path and
    /// the command-line tool both end here, so their results are identical.
    pub fn execute(&self, op: Op, namespace: &str, payload: Value) -> Result<Value, ApiError> {
        let kb = self.engine.namespace(namespace)?;
        match op {
            Op::PutRecord => {
                let input: RecordInput = args(op, payload)?;
                let (id, version) = kb.upsert_record(input)?;
                to_value(PutRecordResult { id, version })
            }
            Op::GetRecord => {
                let a: GetRecordArgs = args(op, payload)?;
                let r = match (a.version, a.as_of) {
                    (Some(_), Some(_)) => {
                        return Err(ApiError::new(ErrorCode::InvalidArgument, "give version or as_of, not both"));
                    }
                    (Some(v), None) => kb.record_version(&a.id, v)?,
                    (None, Some(t)) => kb.record_as_of(&a.id, t)?,
                    (None, None) => kb.get_record(&a.id, None)?,
                };
                to_value(r)
            }
            Op::AssertTriple => {
                let t: Triple = args(op, payload)?;
                to_value(kb.assert_triple(t)?)
            }
            Op::QueryTriples => {
                let a: QueryArgs = args(op, payload)?;
                let p = TriplePattern::new(a.subject.as_deref(), a.predicate.as_deref(), a.object.as_deref());
                to_value(kb.query_triples(&p, a.as_of)?)
            }
            Op::Knn => {
                let a: KnnArgs = args(op, payload)?;
                to_value(kb.knn(&a.vector, a.k, a.mode)?)
            }
            Op::Recall => {
                let a: RecallArgs = args(op, payload)?;
                to_value(kb.recall(&a.cue, a.max_rounds, a.accept)?)
            }
            Op::Associate => {
                let a: AssociateArgs = args(op, payload)?;
                to_value(kb.associate(&a.cue, a.k)?)
            }
            Op::Reason => {
                let a: ReasonArgs = args(op, payload)?;
                to_value(kb.reason(&a.goal, &a.rules, a.max_depth)?)
            }
            Op::Predict => {
                let a: PredictArgs = args(op, payload)?;
                to_value(kb.predict(&a.stream, &a.context)?)
            }
            Op::Reflect => {
                let o: ReflectOutcome = args(op, payload)?;
                to_value(kb.reflect(&o)?)
            }
            Op::UpdateMemory => {
                let a: UpdateArgs = args(op, payload)?;
                to_value(kb.update_memory(&a.proposal, a.max_rounds, a.accept, None)?)
            }
            Op::ConsolidateTick => {
                let a: TickArgs = args(op, payload)?;
                let _t = self.tick_lock.lock();
                to_value(kb.consolidate_tick(a.now.unwrap_or_else(|| self.engine.now()))?)
            }
            Op::ForgetTick => {
                let a: TickArgs = args(op, payload)?;
                let _t = self.tick_lock.lock();
                to_value(kb.forget_tick(a.now.unwrap_or_else(|| self.engine.now()))?)
            }
            Op::SyncDelta => {
                let a: SyncArgs = args(op, payload)?;
                to_value(self.engine.sync_delta(namespace, a.since)?)
            }
            Op::ApplyDelta => {
                let a: ApplyArgs = args(op, payload)?;
                if a.batch.mutations.iter().any(|m| m.partition.namespace() != namespace) {
                    return Err(ApiError::new(ErrorCode::Forbidden, "batch writes outside the request namespace"));
                }
                to_value(ApplyDeltaResult {
                    max_seqno: self.engine.apply_delta(&a.batch)?,
                })
            }
            Op::Stats => to_value(kb.stats()?),
        }
    }

    /// Consolidation tick over every persisted namespace. Never overlaps
    /// another tick run through this service.
    pub fn tick_all(&self, now: Option<i64>) -> colma_core::Result<BTreeMap<String, TickReport>> {
        let _t = self.tick_lock.lock();
        let now = now.unwrap_or_else(|| self.engine.now());
        let mut out = BTreeMap::new();
        for ns in self.engine.namespaces() {
            out.insert(ns.clone(), self.engine.namespace(&ns)?.consolidate_tick(now)?);
        }
        Ok(out)
    }
}
