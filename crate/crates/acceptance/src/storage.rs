//! Storage engine: shadow-model equivalence, torn-WAL recovery and replica
//! convergence.

use std::collections::BTreeMap;
use std::ops::Bound;
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use colma_storage::wal::WAL_FILE;
use colma_storage::{Cell, Clock, Codec, ManualClock, Mutation, MutationBatch, PartitionKey, Store, StoreConfig, MICROS_PER_SECOND};

use crate::{ensure, ok, Outcome};

type Row = (Vec<u8>, String, Vec<u8>, i64);

#[derive(Clone)]
struct Version {
    value: Vec<u8>,
    ttl_s: Option<u32>,
    tombstone: bool,
}

/// Every version ever written, keyed by cell and timestamp. Reads take the
/// newest version; a repeated timestamp overwrites, as a later sequence
/// number does in the store.
#[derive(Default)]
struct Shadow {
    cells: BTreeMap<(PartitionKey, Vec<u8>, String), BTreeMap<i64, Version>>,
}

impl Shadow {
    fn write(&mut self, p: &PartitionKey, c: &Cell) {
        self.cells.entry((p.clone(), c.clustering.clone(), c.column.clone())).or_default().insert(
            c.timestamp,
            Version {
                value: c.value.clone(),
                ttl_s: c.ttl_s,
                tombstone: c.tombstone,
            },
        );
    }

    fn scan(&self, p: &PartitionKey, lo: &[u8], hi: Option<&[u8]>, now: i64) -> Vec<Row> {
        let mut out = Vec::new();
        for ((mp, cl, col), versions) in &self.cells {
            if mp != p || cl.as_slice() < lo || hi.is_some_and(|h| cl.as_slice() >= h) {
                continue;
            }
            let (ts, v) = versions.iter().next_back().expect("cells hold at least one version");
            let expired = v.ttl_s.is_some_and(|t| now > ts + i64::from(t) * MICROS_PER_SECOND);
            if !v.tombstone && !expired {
                out.push((cl.clone(), col.clone(), v.value.clone(), *ts));
            }
        }
        out
    }
}

fn rows(cells: Vec<Cell>) -> Vec<Row> {
    cells.into_iter().map(|c| (c.clustering, c.column, c.value, c.timestamp)).collect()
}

fn small_config(dir: &std::path::Path, codec: Codec) -> StoreConfig {
    let mut c = StoreConfig::new(dir);
    c.sync_writes = false;
    c.auto_compact_segments = 0;
    c.memtable_flush_bytes = 0;
    c.block_bytes = 256;
    c.codec = codec;
    c
}

const RUNS: u64 = 20;
const OPS_PER_RUN: usize = 500;

/// 10k random operations (20 runs of 500): puts with and without TTL,
/// deletes, flushes, full and single-partition compactions, clock jumps
/// past the grace window, and close/reopen. After every operation a random
/// range scan is compared with the shadow model; each run ends with full
/// scans of every partition.
pub fn oracle_equivalence() -> Outcome {
    let mut scans = 0usize;
    for seed in 0..RUNS {
        let dir = ok(tempfile::tempdir(), "tempdir")?;
        let codec = if seed % 2 == 0 { Codec::None } else { Codec::PrefixVarint };
        let clock = Arc::new(ManualClock::new(1_000 * MICROS_PER_SECOND));
        let mut store = ok(Store::open_with_clock(small_config(dir.path(), codec), clock.clone()), "open")?;
        let mut rng = StdRng::seed_from_u64(seed);
        let mut shadow = Shadow::default();
        let parts: Vec<PartitionKey> = (0..3).map(|i| PartitionKey::new("ns", &format!("p{i}")).unwrap()).collect();
        for step in 0..OPS_PER_RUN {
            let p = &parts[rng.random_range(0..parts.len())];
            let clustering = vec![rng.random_range(b'a'..=b'h')];
            let column = ["x", "y"][rng.random_range(0..2)].to_string();
            // Timestamps near the clock, which only moves forward, so no
            // write lands behind a tombstone compaction may already purge.
            let ts = clock.now_micros() + rng.random_range(-2_000..2_000);
            match rng.random_range(0..100) {
                0..=54 => {
                    let mut cell = Cell::new(clustering, column, vec![rng.random::<u8>(); rng.random_range(0..6)], ts);
                    if rng.random_bool(0.1) {
                        cell = cell.with_ttl(rng.random_range(1..5));
                    }
                    ok(store.put(p, cell.clone()), "put")?;
                    shadow.write(p, &cell);
                }
                55..=74 => {
                    ok(store.delete(p, &clustering, &column, ts), "delete")?;
                    shadow.write(p, &Cell::tombstone(clustering, column, ts));
                }
                75..=82 => {
                    ok(store.flush(), "flush")?;
                }
                83..=88 => {
                    if rng.random_bool(0.5) {
                        ok(store.compact(..), "compact")?;
                    } else {
                        ok(store.compact(p.clone()..=p.clone()), "compact")?;
                    }
                }
                89..=92 => {
                    clock.advance([1, 3, 90_000][rng.random_range(0..3)] * MICROS_PER_SECOND);
                }
                93..=94 => {
                    ok(store.close(), "close")?;
                    store = ok(Store::open_with_clock(small_config(dir.path(), codec), clock.clone()), "reopen")?;
                }
                _ => {}
            }
            let now = clock.now_micros();
            let lo = vec![rng.random_range(b'a'..=b'h')];
            let hi = vec![rng.random_range(b'a'..=b'i')];
            let got = rows(store.range_scan(p, (Bound::Included(&lo[..]), Bound::Excluded(&hi[..])), None));
            let want = shadow.scan(p, &lo, Some(&hi), now);
            ensure!(got == want, "run {seed} step {step}: range scan differs from the model");
            scans += 1;
        }
        for p in &parts {
            let got = rows(store.range_scan(p, .., None));
            ensure!(got == shadow.scan(p, &[], None, clock.now_micros()), "run {seed}: full scan of {p:?} differs");
            scans += 1;
        }
    }
    Ok(format!("{} operations, {scans} scans equal to the model", RUNS as usize * OPS_PER_RUN))
}

/// End offsets of WAL records whose header, payload and checksum are all
/// present, walking the framing directly.
fn complete_records(wal: &[u8]) -> Vec<usize> {
    let mut ends = Vec::new();
    let mut pos = 0;
    while pos + 8 <= wal.len() {
        let len = u32::from_le_bytes(wal[pos..pos + 4].try_into().unwrap()) as usize;
        let crc = u32::from_le_bytes(wal[pos + 4..pos + 8].try_into().unwrap());
        let end = pos + 8 + len;
        if end > wal.len() || crc32fast::hash(&wal[pos + 8..end]) != crc {
            break;
        }
        ends.push(end);
        pos = end;
    }
    ends
}

/// A 100-mutation WAL (puts, deletes, several partitions) truncated at every
/// byte offset. The reopened store must hold exactly the mutations whose
/// records are complete before the cut, and accept new writes after it.
pub fn crash_recovery() -> Outcome {
    let src = ok(tempfile::tempdir(), "tempdir")?;
    let cfg = |d: &std::path::Path| {
        let mut c = StoreConfig::new(d);
        c.memtable_flush_bytes = 0;
        c.auto_compact_segments = 0;
        c
    };
    let clock = || Arc::new(ManualClock::new(0));
    let parts: Vec<PartitionKey> = (0..4).map(|i| PartitionKey::new("crash", &format!("e{i}")).unwrap()).collect();
    let mut rng = StdRng::seed_from_u64(77);
    let mut written: Vec<(PartitionKey, Cell)> = Vec::new();
    {
        let s = ok(Store::open_with_clock(cfg(src.path()), clock()), "open")?;
        for i in 0..100i64 {
            let p = parts[rng.random_range(0..parts.len())].clone();
            let clustering = vec![rng.random_range(0..12u8)];
            let cell = if rng.random_bool(0.2) {
                Cell::tombstone(clustering, "c", i)
            } else {
                Cell::new(clustering, "c", vec![rng.random(); rng.random_range(0..24)], i)
            };
            ok(s.put(&p, cell.clone()), "put")?;
            written.push((p, cell));
        }
    }
    let wal = ok(std::fs::read(src.path().join(WAL_FILE)), "read wal")?;
    let ends = complete_records(&wal);
    ensure!(ends.len() == 100, "framing walk found {} records, wrote 100", ends.len());

    for cut in 0..=wal.len() {
        let dir = ok(tempfile::tempdir(), "tempdir")?;
        ok(std::fs::write(dir.path().join(WAL_FILE), &wal[..cut]), "write wal")?;
        let s = ok(Store::open_with_clock(cfg(dir.path()), clock()), "reopen")?;
        let n = ends.iter().filter(|&&e| e <= cut).count();
        let mut shadow = Shadow::default();
        for (p, c) in &written[..n] {
            shadow.write(p, c);
        }
        for p in &parts {
            let got = rows(s.range_scan(p, .., None));
            ensure!(got == shadow.scan(p, &[], None, 0), "cut at byte {cut}: {p:?} differs from the first {n} mutations");
        }
        ensure!(s.seqno() == n as u64, "cut at byte {cut}: seqno {} after {n} complete records", s.seqno());
        ok(s.put(&parts[0], Cell::new(b"after".to_vec(), "c", b"x".to_vec(), 1_000)), "put after recovery")?;
        drop(s);
        let again = ok(Store::open_with_clock(cfg(dir.path()), clock()), "second reopen")?;
        ensure!(
            again.get(&parts[0], b"after", "c", None).is_some() && again.seqno() == n as u64 + 1,
            "cut at byte {cut}: write after recovery did not survive a reopen"
        );
    }
    Ok(format!("{} truncation points over a {}-byte WAL", wal.len() + 1, wal.len()))
}

/// Three writers produce overlapping, conflicting mutations (shared cells,
/// colliding timestamps, tombstones). Three replicas each receive the union
/// of all deltas shuffled, with duplicates, in random chunks, with flushes
/// and compactions in between. Every replica must end byte-identical, and
/// equal to a last-writer-wins merge computed here from the raw deltas.
pub fn replica_convergence() -> Outcome {
    let root = ok(tempfile::tempdir(), "tempdir")?;
    let clock = Arc::new(ManualClock::new(0));
    let open = |name: &str| {
        let mut c = StoreConfig::new(root.path().join(name));
        c.sync_writes = false;
        c.memtable_flush_bytes = 0;
        c.auto_compact_segments = 0;
        Store::open_with_clock(c, clock.clone())
    };
    let parts: Vec<PartitionKey> = (0..5).map(|i| PartitionKey::new("sync", &format!("k{i}")).unwrap()).collect();
    let mut rng = StdRng::seed_from_u64(8);
    let mut deltas = Vec::new();
    for w in 0..3 {
        let s = ok(open(&format!("writer{w}")), "open writer")?;
        for _ in 0..400 {
            let p = &parts[rng.random_range(0..parts.len())];
            let clustering = vec![rng.random_range(0..8u8)];
            let column = ["a", "b"][rng.random_range(0..2)];
            let ts = rng.random_range(0..40);
            let cell = if rng.random_bool(0.2) {
                Cell::tombstone(clustering, column, ts)
            } else {
                Cell::new(clustering, column, vec![rng.random_range(0..4u8); rng.random_range(1..3)], ts)
            };
            ok(s.put(p, cell), "writer put")?;
        }
        deltas.extend(s.sync_delta_namespace("sync", 0).mutations);
    }

    // Independent merge: per cell, the greatest (timestamp, tombstone,
    // value, ttl); tombstoned cells are absent.
    let mut merged: BTreeMap<(Vec<u8>, Vec<u8>, String), (i64, bool, Vec<u8>, Option<u32>)> = BTreeMap::new();
    for m in &deltas {
        let k = (m.partition.as_bytes().to_vec(), m.cell.clustering.clone(), m.cell.column.clone());
        let v = (m.cell.timestamp, m.cell.tombstone, m.cell.value.clone(), m.cell.ttl_s);
        let e = merged.entry(k).or_insert_with(|| v.clone());
        if v > *e {
            *e = v;
        }
    }
    let want: Vec<(Vec<u8>, Vec<u8>, String, Vec<u8>, i64)> = merged
        .into_iter()
        .filter(|(_, v)| !v.1)
        .map(|((p, cl, col), (ts, _, val, _))| (p, cl, col, val, ts))
        .collect();

    let mut scans = Vec::new();
    for r in 0..3 {
        let replica = ok(open(&format!("replica{r}")), "open replica")?;
        let mut feed = deltas.clone();
        for _ in 0..feed.len() / 3 {
            feed.push(deltas[rng.random_range(0..deltas.len())].clone());
        }
        for i in (1..feed.len()).rev() {
            feed.swap(i, rng.random_range(0..=i));
        }
        let mut rest = &feed[..];
        while !rest.is_empty() {
            let n = rng.random_range(1..=60).min(rest.len());
            ok(replica.apply_delta(&MutationBatch { mutations: rest[..n].to_vec() }), "apply_delta")?;
            rest = &rest[n..];
            match rng.random_range(0..10) {
                0 => {
                    ok(replica.flush(), "flush")?;
                }
                1 => {
                    ok(replica.compact(..), "compact")?;
                }
                _ => {}
            }
        }
        let scan = replica.scan_all(None);
        let got: Vec<(Vec<u8>, Vec<u8>, String, Vec<u8>, i64)> = scan
            .iter()
            .map(|(p, c)| (p.as_bytes().to_vec(), c.clustering.clone(), c.column.clone(), c.value.clone(), c.timestamp))
            .collect();
        ensure!(got == want, "replica {r} differs from the last-writer-wins merge");
        let mut bytes = Vec::new();
        for (partition, cell) in scan {
            bytes.extend(Mutation { partition, cell, seqno: 0 }.encode());
        }
        scans.push(bytes);
    }
    ensure!(scans.windows(2).all(|w| w[0] == w[1]), "replica scans are not byte-identical");
    Ok(format!("{} mutations from 3 writers, {} live cells on every replica", deltas.len(), want.len()))
}
