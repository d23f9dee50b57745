//! WAL torn-tail handling: truncating the log at every byte offset.

use std::fs;
use std::sync::Arc;

use colma_storage::wal::WAL_FILE;
use colma_storage::{Cell, ManualClock, Mutation, PartitionKey, Store, StoreConfig};

fn cfg(dir: &std::path::Path) -> StoreConfig {
    let mut c = StoreConfig::new(dir);
    c.memtable_flush_bytes = 0;
    c.auto_compact_segments = 0;
    c
}

/// Record boundaries found by walking the framing directly: each record is
/// complete once its 8-byte header and full payload are present and the
/// payload checksum matches.
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

#[test]
fn truncation_at_every_offset_keeps_exactly_the_complete_prefix() {
    let src = tempfile::tempdir().unwrap();
    let p = PartitionKey::new("ns", "e").unwrap();
    let mut written = Vec::new();
    {
        let s = Store::open_with_clock(cfg(src.path()), Arc::new(ManualClock::new(0))).unwrap();
        for i in 0..40u32 {
            let cell = Cell::new(i.to_be_bytes().to_vec(), "c", vec![i as u8; (i % 7) as usize], i64::from(i));
            s.put(&p, cell.clone()).unwrap();
            written.push(cell);
        }
    }
    let wal = fs::read(src.path().join(WAL_FILE)).unwrap();
    let full = complete_records(&wal);
    assert_eq!(full.len(), written.len());

    for cut in 0..=wal.len() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(WAL_FILE), &wal[..cut]).unwrap();
        let s = Store::open_with_clock(cfg(dir.path()), Arc::new(ManualClock::new(0))).unwrap();
        let n = full.iter().filter(|&&e| e <= cut).count();
        let got: Vec<Cell> = s.scan_all(None).into_iter().map(|(_, c)| c).collect();
        assert_eq!(got, written[..n], "cut at {cut}");
        assert_eq!(s.seqno(), n as u64);
        // The torn tail is gone, so the next write lands right after the prefix.
        s.put(&p, Cell::new(b"z".to_vec(), "c", b"after".to_vec(), 1_000)).unwrap();
        drop(s);
        let again = Store::open_with_clock(cfg(dir.path()), Arc::new(ManualClock::new(0))).unwrap();
        assert_eq!(again.scan_all(None).len(), n + 1, "cut at {cut}");
    }
}

#[test]
fn corrupt_third_record_leaves_first_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = PartitionKey::new("ns", "e").unwrap();
    {
        let s = Store::open_with_clock(cfg(dir.path()), Arc::new(ManualClock::new(0))).unwrap();
        for i in 0..3u8 {
            s.put(&p, Cell::new(vec![i], "c", vec![i], 1)).unwrap();
        }
    }
    let path = dir.path().join(WAL_FILE);
    let mut wal = fs::read(&path).unwrap();
    let ends = complete_records(&wal);
    let last = wal.len() - 1;
    wal[last] ^= 0xff;
    fs::write(&path, &wal).unwrap();
    let parsed: Vec<Mutation> = colma_storage::wal::parse(&wal).0;
    assert_eq!(parsed.len(), 2);
    assert_eq!(complete_records(&wal).len(), 2);
    assert_eq!(ends.len(), 3);
    let s = Store::open_with_clock(cfg(dir.path()), Arc::new(ManualClock::new(0))).unwrap();
    let got: Vec<Vec<u8>> = s.scan_all(None).into_iter().map(|(_, c)| c.value).collect();
    assert_eq!(got, vec![vec![0], vec![1]]);
}
