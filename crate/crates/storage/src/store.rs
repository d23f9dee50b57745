//! The store handle: WAL + memtable + segments, reads that merge all three,
//! flush, compaction and delta sync.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::ops::{Bound, RangeBounds};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::cell::{join, split, to_cell, Cell, Mutation, MutationBatch, Version, VersionKey};
use crate::clock::{Clock, SystemClock, MICROS_PER_SECOND};
use crate::error::{Result, StorageError};
use crate::key::PartitionKey;
use crate::segment::{self, Codec, Segment, SegmentId, SegmentMeta};
use crate::wal::Wal;

pub const DEFAULT_MAX_CELL_BYTES: usize = 1 << 20;
pub const DEFAULT_GRACE_WINDOW_S: u64 = 86_400;
pub const DEFAULT_RETENTION_HORIZON_S: u64 = 7 * 86_400;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct StoreConfig {
    pub dir: PathBuf,
    /// fsync the WAL on every acknowledged write.
    pub sync_writes: bool,
    pub max_cell_bytes: usize,
    /// Tombstones (and expired cells) are purged this long after they take effect.
    pub grace_window_s: u64,
    /// Shadowed versions younger than this survive compaction.
    pub retention_horizon_s: u64,
    pub codec: Codec,
    pub block_bytes: usize,
    /// Memtable size that triggers an automatic flush.
    pub memtable_flush_bytes: usize,
    /// Segment count that triggers an automatic full compaction after a flush.
    /// Zero disables it.
    pub auto_compact_segments: usize,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("./colma-data"),
            sync_writes: true,
            max_cell_bytes: DEFAULT_MAX_CELL_BYTES,
            grace_window_s: DEFAULT_GRACE_WINDOW_S,
            retention_horizon_s: DEFAULT_RETENTION_HORIZON_S,
            codec: Codec::PrefixVarint,
            block_bytes: 4096,
            memtable_flush_bytes: 4 << 20,
            auto_compact_segments: 8,
        }
    }
}

impl StoreConfig {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompactionStats {
    pub input_segments: usize,
    pub output_segments: usize,
    pub entries_in: usize,
    pub entries_out: usize,
    pub output_segment: Option<SegmentId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreStats {
    pub seqno: u64,
    pub segments: usize,
    pub memtable_entries: usize,
    pub segment_entries: usize,
}

type Memtable = BTreeMap<VersionKey, Version>;

#[derive(Default)]
struct State {
    memtable: Memtable,
    memtable_bytes: usize,
    /// Memtable being written out by an in-flight flush; still visible to reads.
    flushing: Option<Arc<Memtable>>,
    segments: Vec<Arc<Segment>>,
}

struct Inner {
    config: StoreConfig,
    clock: Arc<dyn Clock>,
    wal: Mutex<Option<Wal>>,
    state: RwLock<State>,
    maintenance: Mutex<()>,
    seqno: AtomicU64,
    next_segment: AtomicU64,
}

/// Handle to an open store. Cheap to clone; clones share the same store.
#[derive(Clone)]
pub struct Store {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("dir", &self.inner.config.dir).finish()
    }
}

fn entry_bytes(k: &VersionKey, v: &Version) -> usize {
    k.partition.len() + k.clustering.len() + k.column.len() + v.value.len() + 32
}

/// Range of version keys covering `clustering` bounds within one partition.
fn clustering_bounds(
    partition: &[u8],
    lo: Bound<&[u8]>,
    hi: Bound<&[u8]>,
) -> (Bound<VersionKey>, Bound<VersionKey>) {
    let succ = |b: &[u8]| {
        let mut v = b.to_vec();
        v.push(0);
        v
    };
    let start = match lo {
        Bound::Included(c) => Bound::Included(VersionKey::floor(partition, c)),
        Bound::Excluded(c) => Bound::Included(VersionKey::floor(partition, &succ(c))),
        Bound::Unbounded => Bound::Included(VersionKey::floor(partition, &[])),
    };
    let end = match hi {
        Bound::Included(c) => Bound::Excluded(VersionKey::floor(partition, &succ(c))),
        Bound::Excluded(c) => Bound::Excluded(VersionKey::floor(partition, c)),
        Bound::Unbounded => Bound::Excluded(VersionKey::floor(&succ(partition), &[])),
    };
    (start, end)
}

fn range_is_empty(lo: Bound<&[u8]>, hi: Bound<&[u8]>) -> bool {
    match (lo, hi) {
        (Bound::Included(a), Bound::Included(b)) => a > b,
        (Bound::Included(a), Bound::Excluded(b))
        | (Bound::Excluded(a), Bound::Included(b))
        | (Bound::Excluded(a), Bound::Excluded(b)) => a >= b,
        _ => false,
    }
}

fn in_bounds(k: &VersionKey, start: &Bound<VersionKey>, end: &Bound<VersionKey>) -> bool {
    (start.as_ref(), end.as_ref()).contains(k)
}

impl State {
    /// Visits every stored version in `[start, end)` from every source.
    fn for_each_in(
        &self,
        start: &Bound<VersionKey>,
        end: &Bound<VersionKey>,
        mut f: impl FnMut(&VersionKey, &Version),
    ) {
        let range = (start.clone(), end.clone());
        for (k, v) in self.memtable.range(range.clone()) {
            f(k, v);
        }
        if let Some(imm) = &self.flushing {
            for (k, v) in imm.range(range) {
                f(k, v);
            }
        }
        for seg in &self.segments {
            let from = match start {
                Bound::Included(k) | Bound::Excluded(k) => seg.lower_bound(k),
                Bound::Unbounded => 0,
            };
            for (k, v) in &seg.entries[from..] {
                if !in_bounds(k, start, end) {
                    if matches!(start, Bound::Excluded(s) if s == k) {
                        continue;
                    }
                    break;
                }
                f(k, v);
            }
        }
    }

    /// The version stored under an exact key, resolving duplicates across
    /// sources by highest seqno.
    fn exact(&self, key: &VersionKey) -> Option<Version> {
        let mut candidates: Vec<&Version> = Vec::new();
        candidates.extend(self.memtable.get(key));
        if let Some(imm) = &self.flushing {
            candidates.extend(imm.get(key));
        }
        for seg in &self.segments {
            if let Some((k, v)) = seg.entries.get(seg.lower_bound(key)) {
                if k == key {
                    candidates.push(v);
                }
            }
        }
        candidates.into_iter().max_by_key(|v| v.seqno).cloned()
    }

    /// Newest version at or before `as_of` per (clustering, column) in range.
    fn resolve(
        &self,
        start: &Bound<VersionKey>,
        end: &Bound<VersionKey>,
        as_of: i64,
    ) -> BTreeMap<(Vec<u8>, Vec<u8>, String), (i64, Version)> {
        let mut best: BTreeMap<(Vec<u8>, Vec<u8>, String), (i64, Version)> = BTreeMap::new();
        self.for_each_in(start, end, |k, v| {
            let ts = k.timestamp();
            if ts > as_of {
                return;
            }
            let slot = (k.partition.clone(), k.clustering.clone(), k.column.clone());
            match best.get(&slot) {
                Some((bts, bv)) if (*bts, bv.seqno) >= (ts, v.seqno) => {}
                _ => {
                    best.insert(slot, (ts, v.clone()));
                }
            }
        });
        best
    }

    fn has_cell_in_memtables(&self, k: &VersionKey) -> bool {
        let lo = VersionKey {
            rev_ts: std::cmp::Reverse(i64::MAX),
            ..k.clone()
        };
        let hit = |m: &Memtable| m.range(lo.clone()..).next().is_some_and(|(x, _)| x.same_cell(k));
        hit(&self.memtable) || self.flushing.as_deref().is_some_and(hit)
    }
}

fn visible(ts: i64, v: &Version, now: i64) -> bool {
    !v.tombstone && v.expires_at(ts).is_none_or(|at| now <= at)
}

impl Store {
    pub fn open(config: StoreConfig) -> Result<Self> {
        Self::open_with_clock(config, Arc::new(SystemClock))
    }

    /// Opens the store at `config.dir`, creating it if needed. Segments are
    /// verified block by block; the WAL is replayed up to its last valid record.
    pub fn open_with_clock(config: StoreConfig, clock: Arc<dyn Clock>) -> Result<Self> {
        fs::create_dir_all(&config.dir)?;
        let mut loaded = Vec::new();
        for (id, path) in segment::list(&config.dir)? {
            loaded.push(segment::read(&path, id)?);
        }
        let replaced: BTreeSet<SegmentId> = loaded
            .iter()
            .flat_map(|s| s.meta.compacted_from.iter().copied())
            .collect();
        let mut segments = Vec::new();
        for seg in loaded {
            if replaced.contains(&seg.meta.id) {
                // Left behind by a compaction that installed its output but
                // did not finish removing inputs.
                let _ = fs::remove_file(config.dir.join(segment::file_name(seg.meta.id)));
            } else {
                segments.push(Arc::new(seg));
            }
        }
        let next_segment = segments
            .iter()
            .map(|s| s.meta.id)
            .chain(replaced.iter().copied())
            .max()
            .map_or(1, |m| m + 1);
        let mut seqno = segments.iter().map(|s| s.meta.max_seqno).max().unwrap_or(0);

        let (wal, replay) = Wal::open(&config.dir, config.sync_writes)?;
        let mut state = State {
            segments,
            ..State::default()
        };
        for m in replay {
            seqno = seqno.max(m.seqno);
            let (k, v) = split(&m.partition, m.cell, m.seqno);
            state.memtable_bytes += entry_bytes(&k, &v);
            state.memtable.insert(k, v);
        }

        Ok(Self {
            inner: Arc::new(Inner {
                config,
                clock,
                wal: Mutex::new(Some(wal)),
                state: RwLock::new(state),
                maintenance: Mutex::new(()),
                seqno: AtomicU64::new(seqno),
                next_segment: AtomicU64::new(next_segment),
            }),
        })
    }

    pub fn config(&self) -> &StoreConfig {
        &self.inner.config
    }

    pub fn dir(&self) -> &Path {
        &self.inner.config.dir
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.inner.clock
    }

    pub fn now(&self) -> i64 {
        self.inner.clock.now_micros()
    }

    /// Highest seqno assigned so far.
    pub fn seqno(&self) -> u64 {
        self.inner.seqno.load(Ordering::SeqCst)
    }

    /// Syncs and closes the WAL; later writes fail with [`StorageError::Closed`].
    pub fn close(&self) -> Result<()> {
        let mut wal = self.inner.wal.lock();
        if let Some(w) = wal.as_mut() {
            w.sync()?;
        }
        *wal = None;
        Ok(())
    }

    pub fn is_closed(&self) -> bool {
        self.inner.wal.lock().is_none()
    }

    fn check_cell(&self, cell: &Cell) -> Result<()> {
        cell.validate()?;
        if cell.value.len() > self.inner.config.max_cell_bytes {
            return Err(StorageError::CellTooLarge {
                size: cell.value.len(),
                limit: self.inner.config.max_cell_bytes,
            });
        }
        Ok(())
    }

    /// Logs `cell` and makes it visible. Returns the assigned seqno once the
    /// record is in the WAL.
    pub fn put(&self, partition: &PartitionKey, cell: Cell) -> Result<u64> {
        self.check_cell(&cell)?;
        let seqno = {
            let mut wal = self.inner.wal.lock();
            let wal = wal.as_mut().ok_or(StorageError::Closed)?;
            self.append_locked(wal, partition, cell)?
        };
        self.maybe_flush()?;
        Ok(seqno)
    }

    fn append_locked(&self, wal: &mut Wal, partition: &PartitionKey, cell: Cell) -> Result<u64> {
        let seqno = self.inner.seqno.load(Ordering::SeqCst) + 1;
        let m = Mutation {
            partition: partition.clone(),
            cell,
            seqno,
        };
        wal.append(&m)?;
        self.inner.seqno.store(seqno, Ordering::SeqCst);
        let (k, v) = split(&m.partition, m.cell, seqno);
        let mut st = self.inner.state.write();
        st.memtable_bytes += entry_bytes(&k, &v);
        st.memtable.insert(k, v);
        Ok(seqno)
    }

    /// Writes a tombstone for (clustering, column) at `timestamp`.
    pub fn delete(&self, partition: &PartitionKey, clustering: &[u8], column: &str, timestamp: i64) -> Result<u64> {
        self.put(partition, Cell::tombstone(clustering.to_vec(), column, timestamp))
    }

    fn maybe_flush(&self) -> Result<()> {
        let limit = self.inner.config.memtable_flush_bytes;
        if limit > 0 && self.inner.state.read().memtable_bytes >= limit {
            self.flush()?;
        }
        Ok(())
    }

    /// Newest live version with timestamp <= `as_of` (default: newest overall).
    pub fn get(&self, partition: &PartitionKey, clustering: &[u8], column: &str, as_of: Option<i64>) -> Option<Cell> {
        let as_of = as_of.unwrap_or(i64::MAX);
        let now = self.now();
        let lo = VersionKey {
            partition: partition.as_bytes().to_vec(),
            clustering: clustering.to_vec(),
            column: column.to_owned(),
            rev_ts: std::cmp::Reverse(i64::MAX),
        };
        let hi = VersionKey {
            rev_ts: std::cmp::Reverse(i64::MIN),
            ..lo.clone()
        };
        let st = self.inner.state.read();
        let best = st.resolve(&Bound::Included(lo), &Bound::Included(hi), as_of);
        let (_, (ts, v)) = best.into_iter().next()?;
        let key = VersionKey {
            partition: partition.as_bytes().to_vec(),
            clustering: clustering.to_vec(),
            column: column.to_owned(),
            rev_ts: std::cmp::Reverse(ts),
        };
        visible(ts, &v, now).then(|| to_cell(&key, &v))
    }

    /// Live cells of one partition with clustering key in `range`, ascending
    /// by (clustering, column), one version each (the newest at or before `as_of`).
    pub fn range_scan<R>(&self, partition: &PartitionKey, range: R, as_of: Option<i64>) -> Vec<Cell>
    where
        R: RangeBounds<[u8]>,
    {
        let lo = range.start_bound();
        let hi = range.end_bound();
        if range_is_empty(lo, hi) {
            return Vec::new();
        }
        let (start, end) = clustering_bounds(partition.as_bytes(), lo, hi);
        let now = self.now();
        let st = self.inner.state.read();
        st.resolve(&start, &end, as_of.unwrap_or(i64::MAX))
            .into_iter()
            .filter(|(_, (ts, v))| visible(*ts, v, now))
            .map(|((_, clustering, column), (ts, v))| Cell {
                clustering,
                column,
                value: v.value,
                timestamp: ts,
                ttl_s: v.ttl_s,
                tombstone: false,
            })
            .collect()
    }

    /// Every live cell in the store, ordered by partition then clustering.
    pub fn scan_all(&self, as_of: Option<i64>) -> Vec<(PartitionKey, Cell)> {
        let now = self.now();
        let st = self.inner.state.read();
        st.resolve(&Bound::Unbounded, &Bound::Unbounded, as_of.unwrap_or(i64::MAX))
            .into_iter()
            .filter(|(_, (ts, v))| visible(*ts, v, now))
            .filter_map(|((p, clustering, column), (ts, v))| {
                let pk = PartitionKey::from_bytes(&p).ok()?;
                Some((
                    pk,
                    Cell {
                        clustering,
                        column,
                        value: v.value,
                        timestamp: ts,
                        ttl_s: v.ttl_s,
                        tombstone: false,
                    },
                ))
            })
            .collect()
    }

    /// Partitions holding any stored version (including tombstones).
    pub fn partitions(&self) -> Vec<PartitionKey> {
        let st = self.inner.state.read();
        let mut set = BTreeSet::new();
        st.for_each_in(&Bound::Unbounded, &Bound::Unbounded, |k, _| {
            if !set.contains(&k.partition) {
                set.insert(k.partition.clone());
            }
        });
        set.into_iter().filter_map(|p| PartitionKey::from_bytes(&p).ok()).collect()
    }

    /// Partitions whose namespace is `namespace`.
    pub fn partitions_in(&self, namespace: &str) -> Vec<PartitionKey> {
        let mut prefix = namespace.as_bytes().to_vec();
        prefix.push(crate::key::KEY_SEPARATOR);
        let mut end = namespace.as_bytes().to_vec();
        end.push(crate::key::KEY_SEPARATOR + 1);
        let st = self.inner.state.read();
        let mut set = BTreeSet::new();
        st.for_each_in(
            &Bound::Included(VersionKey::floor(&prefix, &[])),
            &Bound::Excluded(VersionKey::floor(&end, &[])),
            |k, _| {
                if !set.contains(&k.partition) {
                    set.insert(k.partition.clone());
                }
            },
        );
        set.into_iter().filter_map(|p| PartitionKey::from_bytes(&p).ok()).collect()
    }

    /// Seals the memtable into a new segment. Returns `None` if it was empty.
    pub fn flush(&self) -> Result<Option<SegmentId>> {
        let _m = self.inner.maintenance.lock();
        let id = {
            // Writers wait for the WAL lock; readers keep going.
            let mut wal = self.inner.wal.lock();
            let wal = wal.as_mut().ok_or(StorageError::Closed)?;
            let frozen = {
                let mut st = self.inner.state.write();
                if st.memtable.is_empty() {
                    return Ok(None);
                }
                let mt = Arc::new(std::mem::take(&mut st.memtable));
                st.memtable_bytes = 0;
                st.flushing = Some(mt.clone());
                mt
            };
            let id = self.inner.next_segment.fetch_add(1, Ordering::SeqCst);
            let entries: Vec<_> = frozen.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
            let seg = match segment::write(
                &self.inner.config.dir,
                id,
                entries,
                self.inner.config.codec,
                self.inner.config.block_bytes,
                &[],
            ) {
                Ok(s) => s,
                Err(e) => {
                    let mut st = self.inner.state.write();
                    if let Some(mt) = st.flushing.take() {
                        let mut restored = Arc::unwrap_or_clone(mt);
                        restored.append(&mut st.memtable);
                        st.memtable = restored;
                    }
                    return Err(e);
                }
            };
            {
                let mut st = self.inner.state.write();
                st.segments.push(Arc::new(seg));
                st.flushing = None;
            }
            wal.reset()?;
            id
        };
        drop(_m);
        let limit = self.inner.config.auto_compact_segments;
        if limit > 0 && self.segment_count() > limit {
            self.compact(..)?;
        }
        Ok(Some(id))
    }

    pub fn segment_count(&self) -> usize {
        self.inner.state.read().segments.len()
    }

    pub fn segments(&self) -> Vec<SegmentMeta> {
        self.inner.state.read().segments.iter().map(|s| s.meta.clone()).collect()
    }

    pub fn segment_path(&self, id: SegmentId) -> PathBuf {
        self.inner.config.dir.join(segment::file_name(id))
    }

    /// Merges every segment overlapping `range` into one, dropping expired and
    /// shadowed data according to the grace window and retention horizon.
    pub fn compact<R: RangeBounds<PartitionKey>>(&self, range: R) -> Result<CompactionStats> {
        let _m = self.inner.maintenance.lock();
        // Block writers so purge decisions can consult a stable memtable.
        let wal_guard = self.inner.wal.lock();
        if wal_guard.is_none() {
            return Err(StorageError::Closed);
        }
        let lo = match range.start_bound() {
            Bound::Included(k) | Bound::Excluded(k) => Some(k.as_bytes().to_vec()),
            Bound::Unbounded => None,
        };
        let hi = match range.end_bound() {
            Bound::Included(k) | Bound::Excluded(k) => Some(k.as_bytes().to_vec()),
            Bound::Unbounded => None,
        };
        let inputs: Vec<Arc<Segment>> = self
            .inner
            .state
            .read()
            .segments
            .iter()
            .filter(|s| s.overlaps_partitions(lo.as_deref(), hi.as_deref()))
            .cloned()
            .collect();
        if inputs.is_empty() {
            return Ok(CompactionStats::default());
        }

        let mut merged: BTreeMap<VersionKey, Version> = BTreeMap::new();
        let mut entries_in = 0;
        for seg in &inputs {
            for (k, v) in &seg.entries {
                entries_in += 1;
                match merged.get(k) {
                    Some(cur) if cur.seqno >= v.seqno => {}
                    _ => {
                        merged.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        let now = self.now();
        let grace = self.inner.config.grace_window_s as i64 * MICROS_PER_SECOND;
        let horizon = self.inner.config.retention_horizon_s as i64 * MICROS_PER_SECOND;
        let bounds = (
            range.start_bound().map(|k| k.as_bytes().to_vec()),
            range.end_bound().map(|k| k.as_bytes().to_vec()),
        );
        let kept = {
            let st = self.inner.state.read();
            // Partitions outside the requested range may have older versions in
            // segments that were not selected, so nothing of theirs is purged.
            gc(merged, now, grace, horizon, |k| {
                !bounds.contains(&k.partition) || st.has_cell_in_memtables(k)
            })
        };

        let input_ids: Vec<SegmentId> = inputs.iter().map(|s| s.meta.id).collect();
        let entries_out = kept.len();
        let out = if kept.is_empty() {
            None
        } else {
            let id = self.inner.next_segment.fetch_add(1, Ordering::SeqCst);
            Some(segment::write(
                &self.inner.config.dir,
                id,
                kept,
                self.inner.config.codec,
                self.inner.config.block_bytes,
                &input_ids,
            )?)
        };
        let output_segment = out.as_ref().map(|s| s.meta.id);
        {
            let mut st = self.inner.state.write();
            st.segments.retain(|s| !input_ids.contains(&s.meta.id));
            if let Some(seg) = out {
                st.segments.push(Arc::new(seg));
                st.segments.sort_by_key(|s| s.meta.id);
            }
        }
        for id in &input_ids {
            let _ = fs::remove_file(self.segment_path(*id));
        }
        drop(wal_guard);
        Ok(CompactionStats {
            input_segments: input_ids.len(),
            output_segments: usize::from(output_segment.is_some()),
            entries_in,
            entries_out,
            output_segment,
        })
    }

    /// All surviving mutations of `partition` with seqno > `since`, in seqno order.
    pub fn sync_delta(&self, partition: &PartitionKey, since: u64) -> MutationBatch {
        let (start, end) = clustering_bounds(partition.as_bytes(), Bound::Unbounded, Bound::Unbounded);
        self.collect_delta(&start, &end, since)
    }

    /// Delta over every partition of `namespace`.
    pub fn sync_delta_namespace(&self, namespace: &str, since: u64) -> MutationBatch {
        let mut prefix = namespace.as_bytes().to_vec();
        prefix.push(crate::key::KEY_SEPARATOR);
        let mut end = namespace.as_bytes().to_vec();
        end.push(crate::key::KEY_SEPARATOR + 1);
        self.collect_delta(
            &Bound::Included(VersionKey::floor(&prefix, &[])),
            &Bound::Excluded(VersionKey::floor(&end, &[])),
            since,
        )
    }

    fn collect_delta(&self, start: &Bound<VersionKey>, end: &Bound<VersionKey>, since: u64) -> MutationBatch {
        let st = self.inner.state.read();
        let mut by_key: BTreeMap<VersionKey, Version> = BTreeMap::new();
        st.for_each_in(start, end, |k, v| {
            match by_key.get(k) {
                Some(cur) if cur.seqno >= v.seqno => {}
                _ => {
                    by_key.insert(k.clone(), v.clone());
                }
            }
        });
        drop(st);
        let mut mutations: Vec<Mutation> = by_key
            .iter()
            .filter(|(_, v)| v.seqno > since)
            .filter_map(|(k, v)| join(k, v).ok())
            .collect();
        mutations.sort_by_key(|m| m.seqno);
        MutationBatch { mutations }
    }

    /// Applies mutations from another store. Each incoming version is written
    /// only if no version exists at the same (partition, clustering, column,
    /// timestamp) or if it beats the existing one under the replica ordering,
    /// so replay and reordering are harmless. Returns the local max seqno.
    pub fn apply_delta(&self, batch: &MutationBatch) -> Result<u64> {
        for m in &batch.mutations {
            self.check_cell(&m.cell)?;
        }
        {
            let mut wal = self.inner.wal.lock();
            let wal = wal.as_mut().ok_or(StorageError::Closed)?;
            for m in &batch.mutations {
                let (key, incoming) = split(&m.partition, m.cell.clone(), 0);
                let existing = self.inner.state.read().exact(&key);
                let wins = existing.is_none_or(|cur| incoming.replica_cmp(&cur).is_gt());
                if wins {
                    self.append_locked(wal, &m.partition, m.cell.clone())?;
                }
            }
        }
        self.maybe_flush()?;
        Ok(self.seqno())
    }

    pub fn stats(&self) -> StoreStats {
        let st = self.inner.state.read();
        StoreStats {
            seqno: self.seqno(),
            segments: st.segments.len(),
            memtable_entries: st.memtable.len() + st.flushing.as_ref().map_or(0, |m| m.len()),
            segment_entries: st.segments.iter().map(|s| s.entries.len()).sum(),
        }
    }
}

/// Compaction garbage collection over a merged, sorted run.
///
/// Per (partition, clustering, column), newest first:
/// - a tombstone older than the grace window, or a cell expired for longer
///   than the grace window, is purged together with every older version,
///   unless `pinned` says the cell may still have versions elsewhere;
/// - of what remains, the newest version is kept, and older (shadowed)
///   versions are kept only while younger than the retention horizon.
fn gc(
    merged: BTreeMap<VersionKey, Version>,
    now: i64,
    grace: i64,
    horizon: i64,
    pinned: impl Fn(&VersionKey) -> bool,
) -> Vec<(VersionKey, Version)> {
    let mut out = Vec::with_capacity(merged.len());
    let mut group: Vec<(VersionKey, Version)> = Vec::new();
    let flush_group = |group: &mut Vec<(VersionKey, Version)>, out: &mut Vec<(VersionKey, Version)>| {
        if group.is_empty() {
            return;
        }
        let pinned = pinned(&group[0].0);
        let purge_at = group.iter().position(|(k, v)| {
            let ts = k.timestamp();
            let dead_since = if v.tombstone {
                Some(ts)
            } else {
                v.expires_at(ts)
            };
            !pinned && dead_since.is_some_and(|d| now > d.saturating_add(grace))
        });
        let live = match purge_at {
            Some(i) => &group[..i],
            None => &group[..],
        };
        for (i, (k, v)) in live.iter().enumerate() {
            if i == 0 || k.timestamp() > now.saturating_sub(horizon) {
                out.push((k.clone(), v.clone()));
            }
        }
        group.clear();
    };
    for (k, v) in merged {
        if group.first().is_some_and(|(g, _)| !g.same_cell(&k)) {
            flush_group(&mut group, &mut out);
        }
        group.push((k, v));
    }
    flush_group(&mut group, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;

    fn open(dir: &Path, clock: Arc<ManualClock>) -> Store {
        let mut cfg = StoreConfig::new(dir);
        cfg.sync_writes = false;
        cfg.auto_compact_segments = 0;
        Store::open_with_clock(cfg, clock).unwrap()
    }

    fn pk(e: &str) -> PartitionKey {
        PartitionKey::new("ns", e).unwrap()
    }

    #[test]
    fn empty_directory_opens_fresh() {
        let dir = tempfile::tempdir().unwrap();
        let s = open(dir.path(), Arc::new(ManualClock::new(0)));
        assert_eq!(s.seqno(), 0);
        assert_eq!(s.segment_count(), 0);
    }

    #[test]
    fn first_put_gets_seqno_one() {
        let dir = tempfile::tempdir().unwrap();
        let s = open(dir.path(), Arc::new(ManualClock::new(0)));
        assert_eq!(s.put(&pk("a"), Cell::new(b"k".to_vec(), "c", b"v".to_vec(), 1)).unwrap(), 1);
        assert_eq!(s.put(&pk("a"), Cell::new(b"k".to_vec(), "c", b"w".to_vec(), 2)).unwrap(), 2);
    }

    #[test]
    fn last_write_wins_by_timestamp_not_arrival() {
        let dir = tempfile::tempdir().unwrap();
        let s = open(dir.path(), Arc::new(ManualClock::new(0)));
        s.put(&pk("a"), Cell::new(b"k".to_vec(), "c", b"ten".to_vec(), 10)).unwrap();
        s.put(&pk("a"), Cell::new(b"k".to_vec(), "c", b"five".to_vec(), 5)).unwrap();
        assert_eq!(s.get(&pk("a"), b"k", "c", None).unwrap().value, b"ten");
    }

    #[test]
    fn equal_timestamps_resolve_to_higher_seqno() {
        let dir = tempfile::tempdir().unwrap();
        let s = open(dir.path(), Arc::new(ManualClock::new(0)));
        s.put(&pk("a"), Cell::new(b"k".to_vec(), "c", b"z-first".to_vec(), 7)).unwrap();
        s.flush().unwrap();
        s.put(&pk("a"), Cell::new(b"k".to_vec(), "c", b"a-second".to_vec(), 7)).unwrap();
        assert_eq!(s.get(&pk("a"), b"k", "c", None).unwrap().value, b"a-second");
        s.flush().unwrap();
        assert_eq!(s.get(&pk("a"), b"k", "c", None).unwrap().value, b"a-second");
        s.compact(..).unwrap();
        assert_eq!(s.get(&pk("a"), b"k", "c", None).unwrap().value, b"a-second");
    }

    #[test]
    fn as_of_reads_historical_versions() {
        let dir = tempfile::tempdir().unwrap();
        let s = open(dir.path(), Arc::new(ManualClock::new(0)));
        for t in 1..=3 {
            s.put(&pk("a"), Cell::new(b"k".to_vec(), "c", vec![t as u8], t)).unwrap();
        }
        assert_eq!(s.get(&pk("a"), b"k", "c", Some(2)).unwrap().value, vec![2]);
        assert!(s.get(&pk("a"), b"k", "c", Some(0)).is_none());
        assert!(s.get(&pk("a"), b"missing", "c", None).is_none());
    }

    #[test]
    fn ttl_expiry() {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(ManualClock::new(1_000_000));
        let s = open(dir.path(), clock.clone());
        s.put(&pk("a"), Cell::new(b"k".to_vec(), "c", b"v".to_vec(), clock.now_micros()).with_ttl(1))
            .unwrap();
        assert!(s.get(&pk("a"), b"k", "c", None).is_some());
        clock.advance(2 * MICROS_PER_SECOND);
        assert!(s.get(&pk("a"), b"k", "c", None).is_none());
        assert!(s.range_scan(&pk("a"), .., None).is_empty());
    }

    #[test]
    fn delete_hides_and_missing_delete_succeeds() {
        let dir = tempfile::tempdir().unwrap();
        let s = open(dir.path(), Arc::new(ManualClock::new(0)));
        s.delete(&pk("a"), b"nothing", "c", 3).unwrap();
        s.put(&pk("a"), Cell::new(b"k".to_vec(), "c", b"v".to_vec(), 1)).unwrap();
        s.delete(&pk("a"), b"k", "c", 2).unwrap();
        assert!(s.get(&pk("a"), b"k", "c", None).is_none());
        assert_eq!(s.get(&pk("a"), b"k", "c", Some(1)).unwrap().value, b"v");
    }

    #[test]
    fn closed_store_rejects_writes() {
        let dir = tempfile::tempdir().unwrap();
        let s = open(dir.path(), Arc::new(ManualClock::new(0)));
        s.close().unwrap();
        assert!(matches!(
            s.put(&pk("a"), Cell::new(b"k".to_vec(), "c", b"v".to_vec(), 1)),
            Err(StorageError::Closed)
        ));
    }

    #[test]
    fn oversize_cell_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let s = open(dir.path(), Arc::new(ManualClock::new(0)));
        let big = vec![0u8; DEFAULT_MAX_CELL_BYTES + 1];
        assert!(matches!(
            s.put(&pk("a"), Cell::new(b"k".to_vec(), "c", big, 1)),
            Err(StorageError::CellTooLarge { .. })
        ));
    }

    #[test]
    fn inverted_and_empty_ranges() {
        let dir = tempfile::tempdir().unwrap();
        let s = open(dir.path(), Arc::new(ManualClock::new(0)));
        assert!(s.range_scan(&pk("a"), .., None).is_empty());
        s.put(&pk("a"), Cell::new(b"m".to_vec(), "c", b"v".to_vec(), 1)).unwrap();
        assert!(s.range_scan(&pk("a"), (Bound::Included(&b"z"[..]), Bound::Excluded(&b"a"[..])), None).is_empty());
        assert_eq!(s.range_scan(&pk("a"), (Bound::Included(&b"a"[..]), Bound::Excluded(&b"z"[..])), None).len(), 1);
    }

    #[test]
    fn flush_empty_memtable_creates_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let s = open(dir.path(), Arc::new(ManualClock::new(0)));
        assert_eq!(s.flush().unwrap(), None);
        assert_eq!(s.segment_count(), 0);
    }

    #[test]
    fn compaction_purges_tombstones_after_grace() {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(ManualClock::new(10 * MICROS_PER_SECOND));
        let s = open(dir.path(), clock.clone());
        s.put(&pk("a"), Cell::new(b"k".to_vec(), "c", b"v".to_vec(), clock.now_micros())).unwrap();
        s.flush().unwrap();
        s.delete(&pk("a"), b"k", "c", clock.now_micros() + 1).unwrap();
        s.flush().unwrap();
        // Inside the grace window the tombstone must survive.
        s.compact(..).unwrap();
        assert_eq!(s.stats().segment_entries, 2);
        clock.advance((DEFAULT_GRACE_WINDOW_S as i64 + 1) * MICROS_PER_SECOND);
        let stats = s.compact(..).unwrap();
        assert_eq!(stats.entries_out, 0);
        assert_eq!(s.segment_count(), 0);
    }

    #[test]
    fn tombstone_pinned_by_older_memtable_write_survives() {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(ManualClock::new(10 * MICROS_PER_SECOND));
        let s = open(dir.path(), clock.clone());
        s.delete(&pk("a"), b"k", "c", 100).unwrap();
        s.flush().unwrap();
        s.put(&pk("a"), Cell::new(b"k".to_vec(), "c", b"old".to_vec(), 50)).unwrap();
        clock.advance((DEFAULT_GRACE_WINDOW_S as i64 + 1) * MICROS_PER_SECOND);
        s.compact(..).unwrap();
        assert!(s.get(&pk("a"), b"k", "c", None).is_none());
    }

    #[test]
    fn apply_delta_is_idempotent() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let clock = Arc::new(ManualClock::new(0));
        let a = open(d1.path(), clock.clone());
        let b = open(d2.path(), clock);
        for i in 0..20u8 {
            a.put(&pk("p"), Cell::new(vec![i % 5], "c", vec![i], i64::from(i))).unwrap();
        }
        let batch = a.sync_delta(&pk("p"), 0);
        assert!(a.sync_delta(&pk("p"), a.seqno()).is_empty());
        assert!(a.sync_delta(&pk("unknown"), 0).is_empty());
        let s1 = b.apply_delta(&batch).unwrap();
        let snap = b.scan_all(None);
        let s2 = b.apply_delta(&batch).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(b.scan_all(None), snap);
        assert_eq!(a.scan_all(None), snap);
    }

    #[test]
    fn reopen_preserves_state_and_seqno() {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(ManualClock::new(0));
        let before = {
            let s = open(dir.path(), clock.clone());
            for i in 0..10u8 {
                s.put(&pk("a"), Cell::new(vec![i], "c", vec![i], 1)).unwrap();
                if i == 4 {
                    s.flush().unwrap();
                }
            }
            s.close().unwrap();
            s.scan_all(None)
        };
        let s = open(dir.path(), clock);
        assert_eq!(s.scan_all(None), before);
        assert_eq!(s.seqno(), 10);
        assert_eq!(s.put(&pk("a"), Cell::new(b"x".to_vec(), "c", b"".to_vec(), 1)).unwrap(), 11);
    }

    #[test]
    fn corrupt_segment_fails_open() {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(ManualClock::new(0));
        let id = {
            let s = open(dir.path(), clock.clone());
            s.put(&pk("a"), Cell::new(b"k".to_vec(), "c", b"value".to_vec(), 1)).unwrap();
            s.flush().unwrap().unwrap()
        };
        let path = dir.path().join(segment::file_name(id));
        let mut bytes = fs::read(&path).unwrap();
        bytes[20] ^= 0x01;
        fs::write(&path, bytes).unwrap();
        let mut cfg = StoreConfig::new(dir.path());
        cfg.sync_writes = false;
        assert!(matches!(
            Store::open_with_clock(cfg, clock),
            Err(StorageError::Integrity { .. })
        ));
    }

    #[test]
    fn interrupted_compaction_inputs_are_discarded_on_open() {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(ManualClock::new(0));
        let s = open(dir.path(), clock.clone());
        s.put(&pk("a"), Cell::new(b"k".to_vec(), "c", b"1".to_vec(), 1)).unwrap();
        let a = s.flush().unwrap().unwrap();
        let saved = fs::read(s.segment_path(a)).unwrap();
        s.put(&pk("a"), Cell::new(b"k".to_vec(), "c", b"2".to_vec(), 2)).unwrap();
        s.flush().unwrap();
        s.compact(..).unwrap();
        // Simulate a crash before input removal by restoring one input.
        fs::write(s.segment_path(a), saved).unwrap();
        drop(s);
        let s = open(dir.path(), clock);
        assert_eq!(s.segment_count(), 1);
        assert!(!dir.path().join(segment::file_name(a)).exists());
    }
}
