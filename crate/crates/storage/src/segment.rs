//! Immutable sorted segment files (`seg-<id>.colm`).
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! header   "COLM" | u32 format version (1) | u8 codec | u64 index offset
//! blocks   entry data, each block checksummed independently
//! index    u32 block count
//!          per block: u64 offset | u32 length | u32 crc32 | u32 entry count
//!          bytes min partition | bytes max partition | u64 max seqno
//!          u32 n | n x u64 ids of segments this one replaced by compaction
//!          u32 crc32 of the index section above
//! ```
//!
//! Entries are sorted by (partition, clustering, column, timestamp desc).
//! With codec 1 each entry's composite key is stored as a varint shared-prefix
//! length against the previous entry in the block plus the unshared suffix,
//! and lengths/seqnos are varints. Codec 0 stores everything at fixed width.

use std::cmp::Reverse;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cell::{join, Mutation, Version, VersionKey};
use crate::codec::{Decoder, Encoder};
use crate::error::{Result, StorageError};

pub const MAGIC: &[u8; 4] = b"COLM";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 1 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Codec {
    None,
    #[default]
    PrefixVarint,
}

impl Codec {
    pub fn byte(self) -> u8 {
        match self {
            Codec::None => 0,
            Codec::PrefixVarint => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Codec::None),
            1 => Some(Codec::PrefixVarint),
            _ => None,
        }
    }
}

pub type SegmentId = u64;

pub fn file_name(id: SegmentId) -> String {
    format!("seg-{id}.colm")
}

pub fn parse_file_name(name: &str) -> Option<SegmentId> {
    name.strip_prefix("seg-")?.strip_suffix(".colm")?.parse().ok()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockHandle {
    pub offset: u64,
    pub len: u32,
    pub crc: u32,
    pub entries: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentMeta {
    pub id: SegmentId,
    pub codec: Codec,
    pub min_key: Vec<u8>,
    pub max_key: Vec<u8>,
    pub max_seqno: u64,
    pub blocks: Vec<BlockHandle>,
    pub compacted_from: Vec<SegmentId>,
    pub file_bytes: u64,
}

#[derive(Debug)]
pub(crate) struct Segment {
    pub meta: SegmentMeta,
    pub entries: Vec<(VersionKey, Version)>,
}

impl Segment {
    /// Index of the first entry whose key is >= `key`.
    pub fn lower_bound(&self, key: &VersionKey) -> usize {
        self.entries.partition_point(|(k, _)| k < key)
    }

    pub fn overlaps_partitions(&self, lo: Option<&[u8]>, hi: Option<&[u8]>) -> bool {
        lo.is_none_or(|lo| self.meta.max_key.as_slice() >= lo)
            && hi.is_none_or(|hi| self.meta.min_key.as_slice() <= hi)
    }
}

fn composite_key(k: &VersionKey) -> Vec<u8> {
    let mut e = Encoder::new();
    e.bytes(&k.partition);
    e.bytes(&k.clustering);
    e.bytes(k.column.as_bytes());
    e.into_inner()
}

fn split_composite(buf: &[u8]) -> Result<(Vec<u8>, Vec<u8>, String)> {
    let mut d = Decoder::new(buf);
    let p = d.bytes()?.to_vec();
    let c = d.bytes()?.to_vec();
    let col = d.string()?;
    Ok((p, c, col))
}

fn encode_entry(e: &mut Encoder, codec: Codec, prev_key: &[u8], key: &[u8], ts: i64, v: &Version) {
    let flags = u8::from(v.tombstone) | (u8::from(v.ttl_s.is_some()) << 1);
    match codec {
        Codec::None => {
            e.bytes(key);
            e.i64(ts);
            e.u64(v.seqno);
            e.u8(flags);
            e.u32(v.ttl_s.unwrap_or(0));
            e.bytes(&v.value);
        }
        Codec::PrefixVarint => {
            let shared = prev_key.iter().zip(key).take_while(|(a, b)| a == b).count();
            e.varint(shared as u64);
            e.varint((key.len() - shared) as u64);
            e.raw(&key[shared..]);
            e.i64(ts);
            e.varint(v.seqno);
            e.u8(flags);
            if let Some(t) = v.ttl_s {
                e.varint(u64::from(t));
            }
            e.varint(v.value.len() as u64);
            e.raw(&v.value);
        }
    }
}

fn decode_block(buf: &[u8], codec: Codec, count: u32) -> Result<Vec<(VersionKey, Version)>> {
    let mut d = Decoder::new(buf);
    let mut out = Vec::with_capacity(count as usize);
    let mut prev: Vec<u8> = Vec::new();
    for _ in 0..count {
        let (key, ts, seqno, flags, ttl, value) = match codec {
            Codec::None => {
                let key = d.bytes()?.to_vec();
                let ts = d.i64()?;
                let seqno = d.u64()?;
                let flags = d.u8()?;
                let ttl = d.u32()?;
                let value = d.bytes()?.to_vec();
                (key, ts, seqno, flags, ttl, value)
            }
            Codec::PrefixVarint => {
                let shared = d.varint()? as usize;
                let unshared = d.varint()? as usize;
                if shared > prev.len() {
                    return Err(StorageError::integrity("<block>", "bad shared prefix"));
                }
                let mut key = prev[..shared].to_vec();
                key.extend_from_slice(d.take(unshared)?);
                let ts = d.i64()?;
                let seqno = d.varint()?;
                let flags = d.u8()?;
                let ttl = if flags & 2 != 0 { d.varint()? as u32 } else { 0 };
                let len = d.varint()? as usize;
                let value = d.take(len)?.to_vec();
                (key, ts, seqno, flags, ttl, value)
            }
        };
        let (partition, clustering, column) = split_composite(&key)?;
        out.push((
            VersionKey {
                partition,
                clustering,
                column,
                rev_ts: Reverse(ts),
            },
            Version {
                seqno,
                ttl_s: (flags & 2 != 0).then_some(ttl),
                tombstone: flags & 1 != 0,
                value,
            },
        ));
        prev = key;
    }
    if !d.is_empty() {
        return Err(StorageError::integrity("<block>", "trailing bytes in block"));
    }
    Ok(out)
}

/// Serializes a sorted run of entries into a segment image.
pub(crate) fn encode(
    id: SegmentId,
    entries: &[(VersionKey, Version)],
    codec: Codec,
    block_bytes: usize,
    compacted_from: &[SegmentId],
) -> (Vec<u8>, SegmentMeta) {
    let mut out = Encoder::new();
    out.raw(MAGIC);
    out.u32(FORMAT_VERSION);
    out.u8(codec.byte());
    out.u64(0); // index offset, patched below

    let mut blocks = Vec::new();
    let mut block = Encoder::new();
    let mut block_entries = 0u32;
    let mut prev_key: Vec<u8> = Vec::new();
    let mut flush_block = |out: &mut Encoder, block: &mut Encoder, n: &mut u32, prev: &mut Vec<u8>| {
        if *n == 0 {
            return;
        }
        let data = std::mem::take(&mut block.buf);
        blocks.push(BlockHandle {
            offset: out.buf.len() as u64,
            len: data.len() as u32,
            crc: crc32fast::hash(&data),
            entries: *n,
        });
        out.raw(&data);
        *n = 0;
        prev.clear();
    };
    for (k, v) in entries {
        let key = composite_key(k);
        encode_entry(&mut block, codec, &prev_key, &key, k.timestamp(), v);
        block_entries += 1;
        prev_key = key;
        if block.buf.len() >= block_bytes {
            flush_block(&mut out, &mut block, &mut block_entries, &mut prev_key);
        }
    }
    flush_block(&mut out, &mut block, &mut block_entries, &mut prev_key);

    let min_key = entries.first().map(|(k, _)| k.partition.clone()).unwrap_or_default();
    let max_key = entries.last().map(|(k, _)| k.partition.clone()).unwrap_or_default();
    let max_seqno = entries.iter().map(|(_, v)| v.seqno).max().unwrap_or(0);

    let index_offset = out.buf.len() as u64;
    let mut idx = Encoder::new();
    idx.u32(blocks.len() as u32);
    for b in &blocks {
        idx.u64(b.offset);
        idx.u32(b.len);
        idx.u32(b.crc);
        idx.u32(b.entries);
    }
    idx.bytes(&min_key);
    idx.bytes(&max_key);
    idx.u64(max_seqno);
    idx.u32(compacted_from.len() as u32);
    for id in compacted_from {
        idx.u64(*id);
    }
    let idx_crc = crc32fast::hash(&idx.buf);
    out.raw(&idx.buf);
    out.u32(idx_crc);
    let mut buf = out.into_inner();
    buf[9..17].copy_from_slice(&index_offset.to_le_bytes());

    let meta = SegmentMeta {
        id,
        codec,
        min_key,
        max_key,
        max_seqno,
        blocks,
        compacted_from: compacted_from.to_vec(),
        file_bytes: buf.len() as u64,
    };
    (buf, meta)
}

/// Parses and fully verifies a segment image; every block checksum is checked.
pub(crate) fn decode(id: SegmentId, buf: &[u8], file: &str) -> Result<Segment> {
    let bad = |reason: &str| StorageError::integrity(file, reason);
    if buf.len() < HEADER_LEN || &buf[..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let mut d = Decoder::new(&buf[4..HEADER_LEN]);
    let version = d.u32().map_err(|_| bad("short header"))?;
    if version != FORMAT_VERSION {
        return Err(bad("unsupported format version"));
    }
    let codec = Codec::from_byte(d.u8().map_err(|_| bad("short header"))?).ok_or_else(|| bad("unknown codec"))?;
    let index_offset = d.u64().map_err(|_| bad("short header"))? as usize;
    if index_offset < HEADER_LEN || index_offset + 4 > buf.len() {
        return Err(bad("index offset out of range"));
    }
    let idx_bytes = &buf[index_offset..buf.len() - 4];
    let idx_crc = u32::from_le_bytes(buf[buf.len() - 4..].try_into().unwrap());
    if crc32fast::hash(idx_bytes) != idx_crc {
        return Err(bad("index checksum mismatch"));
    }
    let mut d = Decoder::new(idx_bytes);
    let parse_index = |d: &mut Decoder| -> Result<(Vec<BlockHandle>, Vec<u8>, Vec<u8>, u64, Vec<u64>)> {
        let n = d.u32()?;
        let mut blocks = Vec::with_capacity(n as usize);
        for _ in 0..n {
            blocks.push(BlockHandle {
                offset: d.u64()?,
                len: d.u32()?,
                crc: d.u32()?,
                entries: d.u32()?,
            });
        }
        let min_key = d.bytes()?.to_vec();
        let max_key = d.bytes()?.to_vec();
        let max_seqno = d.u64()?;
        let m = d.u32()?;
        let mut from = Vec::with_capacity(m as usize);
        for _ in 0..m {
            from.push(d.u64()?);
        }
        Ok((blocks, min_key, max_key, max_seqno, from))
    };
    let (blocks, min_key, max_key, max_seqno, compacted_from) =
        parse_index(&mut d).map_err(|_| bad("malformed index"))?;

    let mut entries = Vec::new();
    for (i, b) in blocks.iter().enumerate() {
        let start = b.offset as usize;
        let end = start + b.len as usize;
        if start < HEADER_LEN || end > index_offset {
            return Err(bad(&format!("block {i} out of range")));
        }
        let data = &buf[start..end];
        if crc32fast::hash(data) != b.crc {
            return Err(bad(&format!("block {i} checksum mismatch")));
        }
        let decoded = decode_block(data, codec, b.entries).map_err(|_| bad(&format!("block {i} malformed")))?;
        entries.extend(decoded);
    }
    if entries.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(bad("entries out of order"));
    }
    Ok(Segment {
        meta: SegmentMeta {
            id,
            codec,
            min_key,
            max_key,
            max_seqno,
            blocks,
            compacted_from,
            file_bytes: buf.len() as u64,
        },
        entries,
    })
}

/// Writes a segment atomically (temp file, fsync, rename) and returns it loaded.
pub(crate) fn write(
    dir: &Path,
    id: SegmentId,
    entries: Vec<(VersionKey, Version)>,
    codec: Codec,
    block_bytes: usize,
    compacted_from: &[SegmentId],
) -> Result<Segment> {
    let (buf, meta) = encode(id, &entries, codec, block_bytes, compacted_from);
    let final_path = dir.join(file_name(id));
    let tmp = dir.join(format!("{}.tmp", file_name(id)));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, &final_path)?;
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(Segment { meta, entries })
}

pub(crate) fn read(path: &Path, id: SegmentId) -> Result<Segment> {
    let buf = fs::read(path)?;
    decode(id, &buf, &path.display().to_string())
}

/// Reads and verifies a segment file, returning its metadata and entries as
/// mutations in stored order.
pub fn inspect(path: impl AsRef<Path>) -> Result<(SegmentMeta, Vec<Mutation>)> {
    let path = path.as_ref();
    let id = path
        .file_name()
        .and_then(|n| n.to_str())
        .and_then(parse_file_name)
        .unwrap_or(0);
    let seg = read(path, id)?;
    let muts = seg.entries.iter().map(|(k, v)| join(k, v)).collect::<Result<Vec<_>>>()?;
    Ok((seg.meta, muts))
}

pub(crate) fn list(dir: &Path) -> Result<Vec<(SegmentId, PathBuf)>> {
    let mut out = Vec::new();
    for ent in fs::read_dir(dir)? {
        let ent = ent?;
        let name = ent.file_name();
        let Some(name) = name.to_str() else { continue };
        if name.ends_with(".colm.tmp") {
            let _ = fs::remove_file(ent.path());
            continue;
        }
        if let Some(id) = parse_file_name(name) {
            out.push((id, ent.path()));
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::split;
    use crate::{Cell, PartitionKey};

    fn entries(n: usize) -> Vec<(VersionKey, Version)> {
        let mut v: Vec<_> = (0..n)
            .map(|i| {
                let pk = PartitionKey::new("ns", &format!("p{}", i % 7)).unwrap();
                let mut c = Cell::new(format!("row-{i:05}").into_bytes(), "col", vec![i as u8; i % 13], i as i64);
                if i % 5 == 0 {
                    c = c.with_ttl(30);
                }
                if i % 11 == 0 {
                    c = Cell::tombstone(c.clustering, "col", i as i64);
                }
                split(&pk, c, i as u64 + 1)
            })
            .collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    }

    #[test]
    fn both_codecs_roundtrip_identically() {
        let e = entries(500);
        let (raw, _) = encode(1, &e, Codec::None, 256, &[]);
        let (packed, meta) = encode(1, &e, Codec::PrefixVarint, 256, &[3, 4]);
        assert!(packed.len() < raw.len());
        assert!(meta.blocks.len() > 1);
        let a = decode(1, &raw, "raw").unwrap();
        let b = decode(1, &packed, "packed").unwrap();
        assert_eq!(a.entries, e);
        assert_eq!(b.entries, e);
        assert_eq!(b.meta.compacted_from, vec![3, 4]);
    }

    #[test]
    fn any_flipped_bit_is_detected() {
        let e = entries(40);
        let (buf, _) = encode(1, &e, Codec::PrefixVarint, 128, &[]);
        for pos in (0..buf.len()).step_by(7) {
            let mut bad = buf.clone();
            bad[pos] ^= 0x10;
            assert!(decode(1, &bad, "x").is_err(), "flip at {pos} went unnoticed");
        }
    }

    #[test]
    fn empty_segment() {
        let (buf, meta) = encode(9, &[], Codec::PrefixVarint, 4096, &[]);
        assert!(meta.blocks.is_empty());
        assert!(decode(9, &buf, "e").unwrap().entries.is_empty());
    }

    #[test]
    fn file_names() {
        assert_eq!(file_name(12), "seg-12.colm");
        assert_eq!(parse_file_name("seg-12.colm"), Some(12));
        assert_eq!(parse_file_name("seg-12.colm.tmp"), None);
    }
}
