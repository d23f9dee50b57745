//! The knowledge layer of one namespace: versioned records, a triple store,
//! a vector index and key-value facts, all persisted as cells in the storage
//! engine and mirrored in memory for querying.
//!
//! Storage layout, by partition entity within the namespace:
//!
//! ```text
//! rec:<id>     b"v" ++ u32 BE version / "r"  record version (JSON)
//!              b"m" / "m"                    tier, salience, access counters
//! timeline     sortable created_at ++ id     one cell per record
//! triples      s \0 p \0 o \0 sortable at    triple (JSON), rewritten on retraction
//! facts        key bytes / "v"               fact value
//! stream:<id>  sortable at ++ record id      event label
//! cases        goal text / "c"               solved reasoning case (JSON)
//! meta         b"dim" / "v"                  embedding dimension
//! ```

pub mod export;
pub mod record;
pub mod triple;
pub mod vector;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::Bound;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use colma_storage::{Cell, PartitionKey, Store};

use crate::config::EngineConfig;
use crate::error::{CoreError, Result};
use crate::ids::RecordId;
use crate::json;

pub use record::{MemoryRecord, Modality, RecordInput, Tier, VersionRef};
pub use triple::{Direction, IndexChoice, Triple, TripleKey, TriplePattern, TripleStore};
pub use vector::{cosine_similarity, KnnMode, ScoredId, VectorIndex};

use record::{tokenize, Meta, StoredVersion};

pub const MAX_NEIGHBOR_DEPTH: usize = 8;
const DEFAULT_SALIENCE: f64 = 0.5;

pub(crate) fn sortable(t: i64) -> [u8; 8] {
    ((t as u64) ^ (1 << 63)).to_be_bytes()
}

pub(crate) fn from_sortable(b: &[u8]) -> i64 {
    let mut a = [0u8; 8];
    a.copy_from_slice(&b[..8]);
    (u64::from_be_bytes(a) ^ (1 << 63)) as i64
}

pub fn validate_namespace(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name.len() <= 128
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
    if ok {
        Ok(())
    } else {
        Err(CoreError::InvalidNamespace(name.to_owned()))
    }
}

/// A solved reasoning goal and the bindings that answered it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub goal: String,
    pub answer: BTreeMap<String, String>,
    /// Structured record holding the solution, if one was written.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<RecordId>,
    #[serde(skip)]
    pub embedding: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssertOutcome {
    /// False when an identical live triple already existed.
    pub created: bool,
    pub asserted_at: i64,
}

pub(crate) struct KState {
    /// Current version of every record, with live metadata.
    pub records: BTreeMap<RecordId, MemoryRecord>,
    pub tick_marks: HashMap<RecordId, i64>,
    pub triples: TripleStore,
    pub vectors: VectorIndex,
    pub tokens: BTreeMap<String, BTreeSet<RecordId>>,
    pub cases: BTreeMap<String, Case>,
}

impl KState {
    fn index_tokens(&mut self, r: &MemoryRecord) {
        if let Some(text) = r.text() {
            for t in tokenize(text) {
                self.tokens.entry(t).or_default().insert(r.id);
            }
        }
    }

    fn unindex_tokens(&mut self, r: &MemoryRecord) {
        if let Some(text) = r.text() {
            for t in tokenize(text) {
                if let Some(set) = self.tokens.get_mut(&t) {
                    set.remove(&r.id);
                    if set.is_empty() {
                        self.tokens.remove(&t);
                    }
                }
            }
        }
    }

    /// Brings every secondary index in line with `r` as the current version.
    fn install(&mut self, r: MemoryRecord) {
        if let Some(old) = self.records.remove(&r.id) {
            self.unindex_tokens(&old);
        }
        match (&r.embedding, r.is_archived()) {
            (Some(v), false) => self.vectors.upsert(r.id, v.clone()),
            _ => self.vectors.remove(&r.id),
        }
        self.index_tokens(&r);
        self.records.insert(r.id, r);
    }
}

pub struct Knowledge {
    name: String,
    store: Store,
    settings: Arc<EngineConfig>,
    dim: usize,
    created: AtomicBool,
    write: Mutex<()>,
    /// Consolidation and forgetting ticks never overlap.
    pub(crate) tick_lock: Mutex<()>,
    /// Serializes the compare-and-reconsolidate steps of belief updates.
    pub(crate) update_lock: Mutex<()>,
    pub(crate) state: RwLock<KState>,
}

impl std::fmt::Debug for Knowledge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Knowledge").field("name", &self.name).field("dim", &self.dim).finish()
    }
}

impl Knowledge {
    /// Loads namespace `name` from `store`. A namespace that has never been
    /// written takes `dim` (or the configured default) and is persisted on
    /// its first write.
    pub fn load(store: Store, settings: Arc<EngineConfig>, name: &str, dim: Option<usize>) -> Result<Self> {
        validate_namespace(name)?;
        let meta = PartitionKey::new(name, "meta")?;
        let stored_dim = store
            .get(&meta, b"dim", "v", None)
            .and_then(|c| std::str::from_utf8(&c.value).ok()?.parse::<usize>().ok());
        let dim = match (stored_dim, dim) {
            (Some(s), Some(d)) if s != d => return Err(CoreError::DimensionMismatch { expected: s, got: d }),
            (Some(s), _) => s,
            (None, d) => d.unwrap_or(settings.default_dim),
        };
        if dim == 0 {
            return Err(CoreError::InvalidRecord("embedding dimension must be positive".into()));
        }
        let kb = Self {
            name: name.to_owned(),
            state: RwLock::new(KState {
                records: BTreeMap::new(),
                tick_marks: HashMap::new(),
                triples: TripleStore::default(),
                vectors: VectorIndex::new(dim, settings.hnsw),
                tokens: BTreeMap::new(),
                cases: BTreeMap::new(),
            }),
            store,
            settings,
            dim,
            created: AtomicBool::new(stored_dim.is_some()),
            write: Mutex::new(()),
            tick_lock: Mutex::new(()),
            update_lock: Mutex::new(()),
        };
        kb.reload()?;
        Ok(kb)
    }

    /// Rebuilds the in-memory mirror from storage, e.g. after applying a
    /// replication delta.
    pub fn reload(&self) -> Result<()> {
        let _w = self.write.lock();
        let mut st = KState {
            records: BTreeMap::new(),
            tick_marks: HashMap::new(),
            triples: TripleStore::default(),
            vectors: VectorIndex::new(self.dim, self.settings.hnsw),
            tokens: BTreeMap::new(),
            cases: BTreeMap::new(),
        };
        for pk in self.store.partitions_in(&self.name) {
            let entity = pk.entity();
            if entity.starts_with("rec:") {
                let cells = self.store.range_scan(&pk, .., None);
                let meta = cells
                    .iter()
                    .find(|c| c.clustering == b"m")
                    .map(|c| serde_json::from_slice::<Meta>(&c.value))
                    .transpose()?;
                let latest = cells
                    .iter()
                    .filter(|c| c.clustering.first() == Some(&b'v'))
                    .max_by_key(|c| c.clustering.clone());
                if let (Some(meta), Some(v)) = (meta, latest) {
                    let sv: StoredVersion = serde_json::from_slice(&v.value)?;
                    st.tick_marks.insert(sv.id, meta.tick_mark);
                    st.install(sv.into_record(&self.name, &meta));
                }
            } else if entity == "triples" {
                for c in self.store.range_scan(&pk, .., None) {
                    st.triples.insert(serde_json::from_slice(&c.value)?);
                }
            } else if entity == "cases" {
                for c in self.store.range_scan(&pk, .., None) {
                    let mut case: Case = serde_json::from_slice(&c.value)?;
                    case.embedding = crate::scenario::embed::test_embed(&case.goal, self.dim)?;
                    st.cases.insert(case.goal.clone(), case);
                }
            }
        }
        *self.state.write() = st;
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn settings(&self) -> &EngineConfig {
        &self.settings
    }

    pub fn now(&self) -> i64 {
        self.store.now()
    }

    pub fn graph_enabled(&self) -> bool {
        self.settings.graph_enabled
    }

    pub(crate) fn require_graph(&self) -> Result<()> {
        if self.graph_enabled() {
            Ok(())
        } else {
            Err(CoreError::Disabled("graph layer"))
        }
    }

    fn part(&self, entity: &str) -> Result<PartitionKey> {
        Ok(PartitionKey::new(&self.name, entity)?)
    }

    fn ensure_created(&self) -> Result<()> {
        if !self.created.swap(true, Ordering::SeqCst) {
            let cell = Cell::new(b"dim".to_vec(), "v", self.dim.to_string().into_bytes(), self.now());
            self.store.put(&self.part("meta")?, cell)?;
        }
        Ok(())
    }

    fn put_json<T: Serialize>(&self, entity: &str, clustering: Vec<u8>, column: &str, value: &T, ts: i64) -> Result<()> {
        let bytes = json::canonical(value)?.into_bytes();
        self.store.put(&self.part(entity)?, Cell::new(clustering, column, bytes, ts))?;
        Ok(())
    }

    /// True when nothing has been written to this namespace.
    pub fn is_empty(&self) -> bool {
        self.store.partitions_in(&self.name).is_empty()
    }

    // ---- records ----

    fn check_embedding(&self, v: &Option<Vec<f32>>) -> Result<()> {
        if let Some(v) = v {
            if v.len() != self.dim {
                return Err(CoreError::DimensionMismatch {
                    expected: self.dim,
                    got: v.len(),
                });
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(CoreError::InvalidRecord("embedding components must be finite".into()));
            }
        }
        Ok(())
    }

    fn write_version(&self, r: &MemoryRecord) -> Result<()> {
        let mut clustering = b"v".to_vec();
        clustering.extend_from_slice(&r.version.to_be_bytes());
        self.put_json(&r.id.node(), clustering, "r", &StoredVersion::of(r), r.updated_at)
    }

    fn write_meta(&self, r: &MemoryRecord, tick_mark: i64) -> Result<()> {
        let meta = Meta { tick_mark, ..r.meta() };
        self.put_json(&r.id.node(), b"m".to_vec(), "m", &meta, self.now())
    }

    /// Creates a record (version 1) or writes the next version of an existing one.
    pub fn upsert_record(&self, input: RecordInput) -> Result<(RecordId, u32)> {
        self.check_embedding(&input.embedding)?;
        let mut content = input.content;
        if input.modality == Modality::Structured {
            let text = std::str::from_utf8(&content)
                .map_err(|_| CoreError::InvalidRecord("structured content must be UTF-8 JSON".into()))?;
            content = json::canonicalize(text)
                .map_err(|e| CoreError::InvalidRecord(format!("structured content: {e}")))?
                .into_bytes();
        }
        if let Some(s) = input.salience {
            if !(0.0..=1.0).contains(&s) {
                return Err(CoreError::InvalidRecord(format!("salience {s} outside [0, 1]")));
            }
        }
        let _w = self.write.lock();
        self.ensure_created()?;
        let now = self.now();
        let existing = input.id.and_then(|id| self.state.read().records.get(&id).cloned());
        let record = match existing {
            Some(cur) => {
                if input.expected_version != Some(cur.version) {
                    return Err(CoreError::VersionConflict { current: cur.version });
                }
                MemoryRecord {
                    modality: input.modality,
                    content,
                    embedding: input.embedding,
                    updated_at: now.max(cur.updated_at + 1),
                    version: cur.version + 1,
                    supersedes: Some(VersionRef {
                        id: cur.id,
                        version: cur.version,
                    }),
                    provenance: input.provenance,
                    ..cur
                }
            }
            None => {
                if input.expected_version.is_some_and(|v| v != 0) {
                    return Err(CoreError::VersionConflict { current: 0 });
                }
                let created_at = input.at.unwrap_or(now);
                let id = input
                    .id
                    .unwrap_or_else(|| RecordId::derive(&self.name, self.store.seqno() + 1, created_at, &content));
                MemoryRecord {
                    id,
                    namespace: self.name.clone(),
                    modality: input.modality,
                    content,
                    embedding: input.embedding,
                    created_at,
                    updated_at: created_at,
                    last_access: created_at,
                    access_count: 0,
                    salience: input.salience.unwrap_or(DEFAULT_SALIENCE),
                    tier: Tier::Short,
                    version: 1,
                    supersedes: None,
                    provenance: input.provenance,
                }
            }
        };
        self.write_version(&record)?;
        if record.version == 1 {
            self.write_meta(&record, i64::MIN)?;
            let mut clustering = sortable(record.created_at).to_vec();
            clustering.extend_from_slice(&record.id.0);
            self.store
                .put(&self.part("timeline")?, Cell::new(clustering, "t", Vec::new(), record.created_at))?;
        }
        let out = (record.id, record.version);
        self.state.write().install(record);
        Ok(out)
    }

    /// Newest non-archived version (counted as an access), or an explicit
    /// version regardless of tier (not counted).
    pub fn get_record(&self, id: &RecordId, version: Option<u32>) -> Result<Option<MemoryRecord>> {
        if let Some(v) = version {
            return self.record_version(id, v);
        }
        let _w = self.write.lock();
        let Some(mut r) = self.state.read().records.get(id).cloned() else {
            return Ok(None);
        };
        if r.is_archived() {
            return Ok(None);
        }
        r.access_count += 1;
        r.last_access = r.last_access.max(self.now());
        let mark = self.tick_mark(id);
        self.write_meta(&r, mark)?;
        self.state.write().records.insert(r.id, r.clone());
        Ok(Some(r))
    }

    /// Current version with metadata, archived or not, without counting an access.
    pub fn peek_record(&self, id: &RecordId) -> Option<MemoryRecord> {
        self.state.read().records.get(id).cloned()
    }

    pub fn record_version(&self, id: &RecordId, version: u32) -> Result<Option<MemoryRecord>> {
        let Some(cur) = self.peek_record(id) else {
            return Ok(None);
        };
        if version == cur.version {
            return Ok(Some(cur));
        }
        let mut clustering = b"v".to_vec();
        clustering.extend_from_slice(&version.to_be_bytes());
        let Some(cell) = self.store.get(&self.part(&id.node())?, &clustering, "r", None) else {
            return Ok(None);
        };
        let sv: StoredVersion = serde_json::from_slice(&cell.value)?;
        Ok(Some(sv.into_record(&self.name, &cur.meta())))
    }

    /// Every stored version of `id`, oldest first.
    pub fn record_versions(&self, id: &RecordId) -> Result<Vec<MemoryRecord>> {
        let Some(cur) = self.peek_record(id) else {
            return Ok(Vec::new());
        };
        let pk = self.part(&id.node())?;
        let mut out = Vec::new();
        for c in self.store.range_scan(&pk, (Bound::Included(&b"v"[..]), Bound::Excluded(&b"w"[..])), None) {
            let sv: StoredVersion = serde_json::from_slice(&c.value)?;
            out.push(sv.into_record(&self.name, &cur.meta()));
        }
        Ok(out)
    }

    /// The version that was current at time `as_of`.
    pub fn record_as_of(&self, id: &RecordId, as_of: i64) -> Result<Option<MemoryRecord>> {
        Ok(self
            .record_versions(id)?
            .into_iter()
            .filter(|r| r.updated_at <= as_of)
            .max_by_key(|r| r.version))
    }

    /// Current versions of all records, including archived ones.
    pub fn records(&self) -> Vec<MemoryRecord> {
        self.state.read().records.values().cloned().collect()
    }

    pub fn record_count(&self) -> usize {
        self.state.read().records.len()
    }

    pub(crate) fn tick_mark(&self, id: &RecordId) -> i64 {
        self.state.read().tick_marks.get(id).copied().unwrap_or(i64::MIN)
    }

    /// Applies a metadata change (tier, salience, counters) to the current
    /// version without creating a new one.
    pub(crate) fn update_meta(
        &self,
        id: &RecordId,
        tick_mark: Option<i64>,
        f: impl FnOnce(&mut MemoryRecord),
    ) -> Result<MemoryRecord> {
        let _w = self.write.lock();
        let mut r = self
            .peek_record(id)
            .ok_or_else(|| CoreError::UnknownRecord(id.to_hex()))?;
        f(&mut r);
        let mark = tick_mark.unwrap_or_else(|| self.tick_mark(id));
        self.write_meta(&r, mark)?;
        let mut st = self.state.write();
        st.tick_marks.insert(r.id, mark);
        st.install(r.clone());
        Ok(r)
    }

    /// Ids of records created within `[lo, hi]`, oldest first, archived excluded.
    pub fn timeline(&self, lo: i64, hi: i64) -> Result<Vec<RecordId>> {
        if lo > hi {
            return Ok(Vec::new());
        }
        let lo_b = sortable(lo);
        let hi_b = sortable(hi.saturating_add(1));
        let cells = self.store.range_scan(
            &self.part("timeline")?,
            (Bound::Included(&lo_b[..]), Bound::Excluded(&hi_b[..])),
            None,
        );
        let st = self.state.read();
        Ok(cells
            .into_iter()
            .filter_map(|c| c.clustering.get(8..24).and_then(|b| b.try_into().ok()).map(RecordId))
            .filter(|id| st.records.get(id).is_some_and(|r| !r.is_archived()))
            .collect())
    }

    /// Non-archived records whose text contains any of `tokens`.
    pub fn records_with_tokens(&self, tokens: &[String]) -> BTreeSet<RecordId> {
        let st = self.state.read();
        tokens
            .iter()
            .flat_map(|t| st.tokens.get(&t.to_lowercase()).into_iter().flatten())
            .filter(|id| st.records.get(id).is_some_and(|r| !r.is_archived()))
            .copied()
            .collect()
    }

    /// Nearest non-archived records by cosine similarity.
    pub fn knn(&self, query: &[f32], k: usize, mode: KnnMode) -> Result<Vec<ScoredId>> {
        if k == 0 {
            return Err(CoreError::InvalidRecord("k must be positive".into()));
        }
        self.state.read().vectors.knn(query, k, mode)
    }

    // ---- triples ----

    fn write_triple(&self, t: &Triple, ts: i64) -> Result<()> {
        let mut clustering = Vec::new();
        for part in [&t.subject, &t.predicate, &t.object] {
            clustering.extend_from_slice(part.as_bytes());
            clustering.push(0);
        }
        clustering.extend_from_slice(&sortable(t.asserted_at));
        self.put_json("triples", clustering, "t", t, ts)
    }

    /// Asserts `t`. A zero `asserted_at` means now. Re-asserting a live
    /// (s, p, o) is a no-op.
    pub fn assert_triple(&self, t: Triple) -> Result<AssertOutcome> {
        self.require_graph()?;
        let mut t = t.normalized()?;
        t.retracted_at = None;
        let _w = self.write.lock();
        self.ensure_created()?;
        if t.asserted_at == 0 {
            t.asserted_at = self.now();
        }
        {
            let st = self.state.read();
            if let Some(live) = st.triples.live(&t.subject, &t.predicate, &t.object) {
                return Ok(AssertOutcome {
                    created: false,
                    asserted_at: live.asserted_at,
                });
            }
            // Keep (s, p, o, asserted_at) unique and after any earlier interval.
            if let Some(last) = st.triples.history(&t.subject, &t.predicate, &t.object).last() {
                let floor = last.retracted_at.unwrap_or(last.asserted_at).max(last.asserted_at + 1);
                t.asserted_at = t.asserted_at.max(floor);
            }
        }
        self.write_triple(&t, self.now())?;
        let at = t.asserted_at;
        self.state.write().triples.insert(t);
        Ok(AssertOutcome {
            created: true,
            asserted_at: at,
        })
    }

    /// Marks the live (s, p, o) triple retracted at `at` (now when `None`).
    /// Returns false when no such triple is live.
    pub fn retract_triple(&self, subject: &str, predicate: &str, object: &str, at: Option<i64>) -> Result<bool> {
        self.require_graph()?;
        let (s, o) = (triple::normalize_term(subject), triple::normalize_term(object));
        let _w = self.write.lock();
        let Some(mut t) = self.state.read().triples.live(s, predicate, o).cloned() else {
            return Ok(false);
        };
        let at = at.unwrap_or_else(|| self.now());
        t.retracted_at = Some(at.max(t.asserted_at + 1));
        self.write_triple(&t, self.now())?;
        self.state.write().triples.insert(t);
        Ok(true)
    }

    /// Rewrites a stored triple in place (same quadruple), e.g. to raise its confidence.
    pub(crate) fn replace_triple(&self, t: Triple) -> Result<()> {
        self.require_graph()?;
        let t = t.normalized()?;
        let _w = self.write.lock();
        if self.state.read().triples.get(&t.key()).is_none() {
            return Err(CoreError::InvalidTriple("no such triple".into()));
        }
        self.write_triple(&t, self.now())?;
        self.state.write().triples.insert(t);
        Ok(())
    }

    pub fn query_triples(&self, pattern: &TriplePattern, as_of: Option<i64>) -> Result<Vec<Triple>> {
        self.query_triples_via(pattern, as_of, IndexChoice::Auto)
    }

    /// Same as [`Self::query_triples`] but forcing a particular index.
    pub fn query_triples_via(&self, pattern: &TriplePattern, as_of: Option<i64>, index: IndexChoice) -> Result<Vec<Triple>> {
        self.require_graph()?;
        Ok(self.state.read().triples.query(pattern, as_of, index))
    }

    /// Every triple ever recorded, live or retracted.
    pub fn all_triples(&self) -> Vec<Triple> {
        self.state.read().triples.all().cloned().collect()
    }

    pub fn neighbors(&self, entity: &str, max_depth: usize, direction: Direction) -> Result<BTreeMap<String, usize>> {
        self.require_graph()?;
        if max_depth == 0 || max_depth > MAX_NEIGHBOR_DEPTH {
            return Err(CoreError::InvalidTriple(format!("max_depth must be in 1..={MAX_NEIGHBOR_DEPTH}")));
        }
        Ok(self.state.read().triples.neighbors(entity, max_depth, direction))
    }

    pub fn link_record_entity(&self, id: &RecordId, entity: &str) -> Result<AssertOutcome> {
        self.require_graph()?;
        if self.peek_record(id).is_none() {
            return Err(CoreError::UnknownRecord(id.to_hex()));
        }
        self.assert_triple(Triple::new(entity, triple::MENTIONED_IN, id.node()))
    }

    /// Non-archived records linked to `entity`, ascending by id.
    pub fn records_of_entity(&self, entity: &str) -> Result<Vec<RecordId>> {
        self.require_graph()?;
        let pattern = TriplePattern::new(Some(entity), Some(triple::MENTIONED_IN), None);
        let st = self.state.read();
        let ids: BTreeSet<RecordId> = st
            .triples
            .query(&pattern, None, IndexChoice::Spo)
            .iter()
            .filter_map(|t| RecordId::from_node(&t.object))
            .filter(|id| st.records.get(id).is_some_and(|r| !r.is_archived()))
            .collect();
        Ok(ids.into_iter().collect())
    }

    /// Entities linked to record `id`.
    pub fn entities_of_record(&self, id: &RecordId) -> Result<Vec<String>> {
        let pattern = TriplePattern::new(None, Some(triple::MENTIONED_IN), Some(&id.node()));
        Ok(self
            .query_triples_via(&pattern, None, IndexChoice::Osp)?
            .into_iter()
            .map(|t| t.subject)
            .collect())
    }

    // ---- facts ----

    pub fn put_fact(&self, key: &str, value: &[u8]) -> Result<()> {
        if key.is_empty() {
            return Err(CoreError::InvalidRecord("fact key must be non-empty".into()));
        }
        let _w = self.write.lock();
        self.ensure_created()?;
        let cell = Cell::new(key.as_bytes().to_vec(), "v", value.to_vec(), self.now());
        self.store.put(&self.part("facts")?, cell)?;
        Ok(())
    }

    pub fn get_fact(&self, key: &str) -> Result<Option<Vec<u8>>> {
        Ok(self
            .store
            .get(&self.part("facts")?, key.as_bytes(), "v", None)
            .map(|c| c.value))
    }

    /// All facts as (key, value, updated_at), ascending by key.
    pub fn facts(&self) -> Result<Vec<(String, Vec<u8>, i64)>> {
        Ok(self
            .store
            .range_scan(&self.part("facts")?, .., None)
            .into_iter()
            .map(|c| (String::from_utf8_lossy(&c.clustering).into_owned(), c.value, c.timestamp))
            .collect())
    }

    // ---- event streams ----

    /// Records an event on `stream` as an event record plus a stream entry.
    pub fn append_event(&self, stream: &str, label: &str, at: i64) -> Result<RecordId> {
        if stream.is_empty() || label.is_empty() {
            return Err(CoreError::InvalidRecord("stream and label must be non-empty".into()));
        }
        let content = json::canonical(&serde_json::json!({ "stream": stream, "label": label }))?;
        let (id, _) = self.upsert_record(RecordInput::new(Modality::Event, content.into_bytes()).at(at))?;
        let _w = self.write.lock();
        let mut clustering = sortable(at).to_vec();
        clustering.extend_from_slice(&id.0);
        self.store.put(
            &self.part(&format!("stream:{stream}"))?,
            Cell::new(clustering, "e", label.as_bytes().to_vec(), at),
        )?;
        Ok(id)
    }

    /// Event labels of `stream` in time order, `None` for an unknown stream.
    pub fn stream_events(&self, stream: &str) -> Result<Option<Vec<(i64, RecordId, String)>>> {
        let cells = self.store.range_scan(&self.part(&format!("stream:{stream}"))?, .., None);
        if cells.is_empty() {
            return Ok(None);
        }
        Ok(Some(
            cells
                .into_iter()
                .filter_map(|c| {
                    let id = RecordId(c.clustering.get(8..24)?.try_into().ok()?);
                    Some((from_sortable(&c.clustering), id, String::from_utf8(c.value).ok()?))
                })
                .collect(),
        ))
    }

    pub fn streams(&self) -> Vec<String> {
        self.store
            .partitions_in(&self.name)
            .iter()
            .filter_map(|p| p.entity().strip_prefix("stream:").map(str::to_owned))
            .collect()
    }

    // ---- reasoning cases ----

    pub(crate) fn put_case(&self, case: Case) -> Result<()> {
        let _w = self.write.lock();
        self.ensure_created()?;
        self.put_json("cases", case.goal.as_bytes().to_vec(), "c", &case, self.now())?;
        self.state.write().cases.insert(case.goal.clone(), case);
        Ok(())
    }

    pub fn cases(&self) -> Vec<Case> {
        self.state.read().cases.values().cloned().collect()
    }

    pub fn stats(&self) -> Result<NamespaceStats> {
        let facts = self.facts()?.len();
        let streams = self.streams().len();
        let st = self.state.read();
        let mut s = NamespaceStats {
            records: st.records.len(),
            vectors: st.vectors.len(),
            triples_live: st.triples.all().filter(|t| t.is_live()).count(),
            triple_versions: st.triples.len(),
            facts,
            cases: st.cases.len(),
            streams,
            ..NamespaceStats::default()
        };
        for r in st.records.values() {
            *match r.tier {
                Tier::Short => &mut s.short,
                Tier::Medium => &mut s.medium,
                Tier::Long => &mut s.long,
                Tier::Archived => &mut s.archived,
            } += 1;
        }
        Ok(s)
    }
}

/// Object counts for one namespace.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamespaceStats {
    pub records: usize,
    pub short: usize,
    pub medium: usize,
    pub long: usize,
    pub archived: usize,
    pub vectors: usize,
    pub triples_live: usize,
    /// Every stored triple version, retracted ones included.
    pub triple_versions: usize,
    pub facts: usize,
    pub cases: usize,
    pub streams: usize,
}
