//! Write-ahead log.
//!
//! Record framing: `[u32 LE payload length][u32 LE CRC32 of payload][payload]`,
//! where the payload is [`Mutation::encode`]. Replay stops at the first record
//! that is short or fails its checksum, and the file is truncated there.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::cell::Mutation;
use crate::error::Result;

pub const WAL_FILE: &str = "wal.log";
const FRAME_HEADER: usize = 8;

pub fn frame(m: &Mutation) -> Vec<u8> {
    let payload = m.encode();
    let mut out = Vec::with_capacity(FRAME_HEADER + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

/// Parses the CRC-valid prefix of a WAL image. Returns the mutations and the
/// byte length of the valid prefix.
pub fn parse(buf: &[u8]) -> (Vec<Mutation>, usize) {
    let mut out = Vec::new();
    let mut pos = 0usize;
    while buf.len() - pos >= FRAME_HEADER {
        let len = u32::from_le_bytes(buf[pos..pos + 4].try_into().unwrap()) as usize;
        let crc = u32::from_le_bytes(buf[pos + 4..pos + 8].try_into().unwrap());
        let start = pos + FRAME_HEADER;
        let Some(end) = start.checked_add(len).filter(|&e| e <= buf.len()) else {
            break;
        };
        let payload = &buf[start..end];
        if crc32fast::hash(payload) != crc {
            break;
        }
        match Mutation::decode(payload) {
            Ok(m) => out.push(m),
            Err(_) => break,
        }
        pos = end;
    }
    (out, pos)
}

#[derive(Debug)]
pub(crate) struct Wal {
    file: File,
    path: PathBuf,
    sync: bool,
}

impl Wal {
    /// Opens (or creates) the log, replays the valid prefix and truncates
    /// any torn tail.
    pub fn open(dir: &Path, sync: bool) -> Result<(Self, Vec<Mutation>)> {
        let path = dir.join(WAL_FILE);
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(&path)?;
        let mut buf = Vec::new();
        file.read_to_end(&mut buf)?;
        let (mutations, valid) = parse(&buf);
        if valid < buf.len() {
            file.set_len(valid as u64)?;
            file.sync_all()?;
        }
        file.seek(SeekFrom::Start(valid as u64))?;
        Ok((Self { file, path, sync }, mutations))
    }

    pub fn append(&mut self, m: &Mutation) -> Result<()> {
        self.file.write_all(&frame(m))?;
        if self.sync {
            self.file.sync_data()?;
        }
        Ok(())
    }

    /// Discards the log contents after a flush has made them redundant.
    pub fn reset(&mut self) -> Result<()> {
        self.file.set_len(0)?;
        self.file.seek(SeekFrom::Start(0))?;
        self.file.sync_all()?;
        Ok(())
    }

    pub fn sync(&mut self) -> Result<()> {
        self.file.sync_all()?;
        Ok(())
    }

    #[allow(dead_code)]
    pub fn path(&self) -> &Path {
        &self.path
    }
}
