//! Randomized interleavings of writes, flushes, compactions and reopens
//! checked against an in-memory model of the versioned cell map.

use std::collections::BTreeMap;
use std::ops::Bound;
use std::sync::Arc;

use colma_storage::{Cell, Clock, ManualClock, PartitionKey, Store, StoreConfig, MICROS_PER_SECOND};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

#[derive(Debug, Clone)]
struct ModelVersion {
    value: Vec<u8>,
    ttl_s: Option<u32>,
    tombstone: bool,
}

/// (partition, clustering, column) -> timestamp -> version
#[derive(Default)]
struct Model {
    cells: BTreeMap<(PartitionKey, Vec<u8>, String), BTreeMap<i64, ModelVersion>>,
}

impl Model {
    /// A later write with the same timestamp replaces the earlier one, as a
    /// higher seqno does in the store.
    fn put(&mut self, p: &PartitionKey, c: &Cell) {
        self.cells
            .entry((p.clone(), c.clustering.clone(), c.column.clone()))
            .or_default()
            .insert(
                c.timestamp,
                ModelVersion {
                    value: c.value.clone(),
                    ttl_s: c.ttl_s,
                    tombstone: c.tombstone,
                },
            );
    }

    fn scan(&self, p: &PartitionKey, lo: &[u8], hi: &[u8], now: i64) -> Vec<(Vec<u8>, String, Vec<u8>, i64)> {
        let mut out = Vec::new();
        for ((mp, cl, col), versions) in &self.cells {
            if mp != p || cl.as_slice() < lo || cl.as_slice() >= hi {
                continue;
            }
            let Some((ts, v)) = versions.iter().next_back() else { continue };
            let expired = v.ttl_s.is_some_and(|t| now > ts + i64::from(t) * MICROS_PER_SECOND);
            if !v.tombstone && !expired {
                out.push((cl.clone(), col.clone(), v.value.clone(), *ts));
            }
        }
        out
    }
}

fn cfg(dir: &std::path::Path, codec_none: bool) -> StoreConfig {
    let mut c = StoreConfig::new(dir);
    c.sync_writes = false;
    c.auto_compact_segments = 0;
    c.memtable_flush_bytes = 0;
    c.block_bytes = 256;
    if codec_none {
        c.codec = colma_storage::Codec::None;
    }
    c
}

fn project(cells: Vec<Cell>) -> Vec<(Vec<u8>, String, Vec<u8>, i64)> {
    cells.into_iter().map(|c| (c.clustering, c.column, c.value, c.timestamp)).collect()
}

/// Runs `ops` random operations and checks every scan against the model.
/// Timestamps stay within a few milliseconds of the clock, which only moves
/// forward, so a write never lands behind a tombstone that compaction has
/// already been allowed to purge.
fn run(seed: u64, ops: usize) {
    let dir = tempfile::tempdir().unwrap();
    let clock = Arc::new(ManualClock::new(1_000 * MICROS_PER_SECOND));
    let mut store = Store::open_with_clock(cfg(dir.path(), seed % 2 == 0), clock.clone()).unwrap();
    let mut rng = StdRng::seed_from_u64(seed);
    let mut model = Model::default();
    let parts: Vec<PartitionKey> = (0..3).map(|i| PartitionKey::new("ns", &format!("p{i}")).unwrap()).collect();

    for _ in 0..ops {
        let p = &parts[rng.random_range(0..parts.len())];
        let clustering = vec![rng.random_range(b'a'..=b'h')];
        let column = ["x", "y"][rng.random_range(0..2)].to_string();
        let ts = clock.now_micros() + rng.random_range(-2_000..2_000);
        match rng.random_range(0..100) {
            0..=54 => {
                let mut cell = Cell::new(clustering, column, vec![rng.random::<u8>(); rng.random_range(0..6)], ts);
                if rng.random_bool(0.1) {
                    cell = cell.with_ttl(rng.random_range(1..5));
                }
                store.put(p, cell.clone()).unwrap();
                model.put(p, &cell);
            }
            55..=74 => {
                store.delete(p, &clustering, &column, ts).unwrap();
                model.put(p, &Cell::tombstone(clustering, column, ts));
            }
            75..=82 => {
                store.flush().unwrap();
            }
            83..=88 => {
                if rng.random_bool(0.5) {
                    store.compact(..).unwrap();
                } else {
                    store.compact(p.clone()..=p.clone()).unwrap();
                }
            }
            89..=92 => {
                let secs = [1, 3, 90_000][rng.random_range(0..3)];
                clock.advance(secs * MICROS_PER_SECOND);
            }
            93..=94 => {
                store.close().unwrap();
                store = Store::open_with_clock(cfg(dir.path(), seed % 2 == 0), clock.clone()).unwrap();
            }
            _ => {}
        }
        let now = clock.now_micros();
        let lo = vec![rng.random_range(b'a'..=b'h')];
        let hi = vec![rng.random_range(b'a'..=b'i')];
        let got = project(store.range_scan(p, (Bound::Included(&lo[..]), Bound::Excluded(&hi[..])), None));
        assert_eq!(got, model.scan(p, &lo, &hi, now), "seed {seed}");
    }
    for p in &parts {
        let got = project(store.range_scan(p, .., None));
        assert_eq!(got, model.scan(p, &[], &[0xff], clock.now_micros()), "seed {seed}");
    }
}

#[test]
fn random_interleavings_match_model() {
    for seed in 0..20 {
        run(seed, 400);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Final visible state depends only on the set of writes.
    #[test]
    fn lww_is_order_independent(
        writes in prop::collection::vec((0u8..4, 0i64..6, any::<u8>(), any::<bool>()), 1..40),
        seed in any::<u64>(),
    ) {
        let p = PartitionKey::new("ns", "e").unwrap();
        let to_cells = |ws: &[(u8, i64, u8, bool)]| -> Vec<Cell> {
            ws.iter().map(|&(k, ts, v, del)| if del {
                Cell::tombstone(vec![k], "c", ts)
            } else {
                Cell::new(vec![k], "c", vec![v], ts)
            }).collect()
        };
        let mut shuffled = writes.clone();
        let mut rng = StdRng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let scan = |cells: Vec<Cell>| {
            let dir = tempfile::tempdir().unwrap();
            let s = Store::open_with_clock(cfg(dir.path(), false), Arc::new(ManualClock::new(0))).unwrap();
            let batch = colma_storage::MutationBatch {
                mutations: cells.into_iter().enumerate().map(|(i, cell)| colma_storage::Mutation {
                    partition: p.clone(), cell, seqno: i as u64 + 1,
                }).collect(),
            };
            s.apply_delta(&batch).unwrap();
            s.scan_all(None)
        };
        prop_assert_eq!(scan(to_cells(&writes)), scan(to_cells(&shuffled)));
    }

    /// Every version written within the retention horizon stays readable at
    /// its own timestamp, across flushes and compactions.
    #[test]
    fn historical_versions_survive_compaction(k in 1usize..30, flush_every in 1usize..10) {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(ManualClock::new(10 * MICROS_PER_SECOND));
        let s = Store::open_with_clock(cfg(dir.path(), false), clock.clone()).unwrap();
        let p = PartitionKey::new("ns", "e").unwrap();
        for i in 0..k {
            clock.advance(MICROS_PER_SECOND);
            s.put(&p, Cell::new(b"k".to_vec(), "c", format!("v{i}").into_bytes(), clock.now_micros())).unwrap();
            if i % flush_every == 0 {
                s.flush().unwrap();
                s.compact(..).unwrap();
            }
        }
        s.flush().unwrap();
        s.compact(..).unwrap();
        for i in 0..k {
            let ts = 10 * MICROS_PER_SECOND + (i as i64 + 1) * MICROS_PER_SECOND;
            let got = s.get(&p, b"k", "c", Some(ts)).unwrap();
            prop_assert_eq!(got.value, format!("v{i}").into_bytes());
        }
    }
}

#[test]
fn range_scan_matches_filtered_full_scan() {
    let dir = tempfile::tempdir().unwrap();
    let s = Store::open_with_clock(cfg(dir.path(), false), Arc::new(ManualClock::new(0))).unwrap();
    let p = PartitionKey::new("ns", "series").unwrap();
    let mut rng = StdRng::seed_from_u64(7);
    for i in 0..100u64 {
        let ts = 1_000 + i * 17 + rng.random_range(0..10);
        s.put(&p, Cell::new(ts.to_be_bytes().to_vec(), "v", i.to_le_bytes().to_vec(), ts as i64)).unwrap();
        if i == 50 {
            s.flush().unwrap();
        }
    }
    let all = s.range_scan(&p, .., None);
    let lo = all[30].clustering.clone();
    let hi = all[70].clustering.clone();
    let expected: Vec<Cell> = all
        .iter()
        .filter(|c| c.clustering >= lo && c.clustering < hi)
        .cloned()
        .collect();
    let before = s.range_scan(&p, (Bound::Included(&lo[..]), Bound::Excluded(&hi[..])), None);
    assert_eq!(before.len(), 40);
    assert_eq!(before, expected);
    s.flush().unwrap();
    assert_eq!(s.range_scan(&p, (Bound::Included(&lo[..]), Bound::Excluded(&hi[..])), None), before);
}

#[test]
fn eight_segments_compact_without_changing_scans() {
    for codec_none in [false, true] {
        let dir = tempfile::tempdir().unwrap();
        let s = Store::open_with_clock(cfg(dir.path(), codec_none), Arc::new(ManualClock::new(0))).unwrap();
        let p = PartitionKey::new("ns", "e").unwrap();
        for seg in 0..8u8 {
            for k in 0..20u8 {
                s.put(&p, Cell::new(vec![k], "c", vec![seg, k], i64::from(seg) * 100 + i64::from(k))).unwrap();
            }
            s.flush().unwrap();
        }
        assert_eq!(s.segment_count(), 8);
        let before = s.scan_all(None);
        let stats = s.compact(..).unwrap();
        assert_eq!(stats.input_segments, 8);
        assert!(s.segment_count() <= 4);
        assert_eq!(s.scan_all(None), before);
    }
}

#[test]
fn compacted_segment_holds_neither_value_nor_tombstone() {
    let dir = tempfile::tempdir().unwrap();
    let clock = Arc::new(ManualClock::new(100 * MICROS_PER_SECOND));
    let s = Store::open_with_clock(cfg(dir.path(), false), clock.clone()).unwrap();
    let p = PartitionKey::new("ns", "e").unwrap();
    s.put(&p, Cell::new(b"gone".to_vec(), "c", b"secret".to_vec(), clock.now_micros())).unwrap();
    s.put(&p, Cell::new(b"kept".to_vec(), "c", b"v".to_vec(), clock.now_micros())).unwrap();
    s.delete(&p, b"gone", "c", clock.now_micros() + 1).unwrap();
    s.flush().unwrap();
    clock.advance(86_401 * MICROS_PER_SECOND);
    let out = s.compact(..).unwrap().output_segment.unwrap();
    let (_, dump) = colma_storage::segment::inspect(s.segment_path(out)).unwrap();
    assert_eq!(dump.len(), 1);
    assert_eq!(dump[0].cell.clustering, b"kept");
}
