use std::cmp::{Ordering, Reverse};

use serde::{Deserialize, Serialize};

use crate::clock::MICROS_PER_SECOND;
use crate::codec::{Decoder, Encoder};
use crate::error::{Result, StorageError};
use crate::key::PartitionKey;

/// A timestamped wide-column write unit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub clustering: Vec<u8>,
    pub column: String,
    pub value: Vec<u8>,
    /// Microseconds since the Unix epoch.
    pub timestamp: i64,
    pub ttl_s: Option<u32>,
    pub tombstone: bool,
}

impl Cell {
    pub fn new(
        clustering: impl Into<Vec<u8>>,
        column: impl Into<String>,
        value: impl Into<Vec<u8>>,
        timestamp: i64,
    ) -> Self {
        Self {
            clustering: clustering.into(),
            column: column.into(),
            value: value.into(),
            timestamp,
            ttl_s: None,
            tombstone: false,
        }
    }

    pub fn tombstone(clustering: impl Into<Vec<u8>>, column: impl Into<String>, timestamp: i64) -> Self {
        Self {
            clustering: clustering.into(),
            column: column.into(),
            value: Vec::new(),
            timestamp,
            ttl_s: None,
            tombstone: true,
        }
    }

    pub fn with_ttl(mut self, ttl_s: u32) -> Self {
        self.ttl_s = Some(ttl_s);
        self
    }

    /// Microsecond instant after which the cell is expired, if it has a TTL.
    pub fn expires_at(&self) -> Option<i64> {
        self.ttl_s
            .map(|ttl| self.timestamp.saturating_add(i64::from(ttl) * MICROS_PER_SECOND))
    }

    pub fn is_expired(&self, now: i64) -> bool {
        self.expires_at().is_some_and(|at| now > at)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tombstone && !self.value.is_empty() {
            return Err(StorageError::InvalidCell("tombstone must carry an empty value".into()));
        }
        if self.ttl_s == Some(0) {
            return Err(StorageError::InvalidCell("ttl must be positive".into()));
        }
        Ok(())
    }
}

/// A logged write: partition, cell and the sequence number assigned at WAL append.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mutation {
    pub partition: PartitionKey,
    pub cell: Cell,
    pub seqno: u64,
}

impl Mutation {
    /// Canonical binary form: fields in declaration order, integers
    /// little-endian, byte strings u32-length-prefixed.
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.bytes(self.partition.namespace().as_bytes());
        e.bytes(self.partition.entity().as_bytes());
        e.bytes(&self.cell.clustering);
        e.bytes(self.cell.column.as_bytes());
        e.bytes(&self.cell.value);
        e.i64(self.cell.timestamp);
        match self.cell.ttl_s {
            Some(t) => {
                e.u8(1);
                e.u32(t);
            }
            None => {
                e.u8(0);
                e.u32(0);
            }
        }
        e.u8(u8::from(self.cell.tombstone));
        e.u64(self.seqno);
        e.into_inner()
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let mut d = Decoder::new(buf);
        let ns = d.string()?;
        let entity = d.string()?;
        let partition = PartitionKey::new(&ns, &entity)?;
        let clustering = d.bytes()?.to_vec();
        let column = d.string()?;
        let value = d.bytes()?.to_vec();
        let timestamp = d.i64()?;
        let has_ttl = d.u8()?;
        let ttl = d.u32()?;
        let tombstone = d.u8()? != 0;
        let seqno = d.u64()?;
        if !d.is_empty() {
            return Err(StorageError::integrity("<mutation>", "trailing bytes"));
        }
        Ok(Self {
            partition,
            cell: Cell {
                clustering,
                column,
                value,
                timestamp,
                ttl_s: (has_ttl != 0).then_some(ttl),
                tombstone,
            },
            seqno,
        })
    }
}

/// Mutations for delta sync, in ascending seqno order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationBatch {
    pub mutations: Vec<Mutation>,
}

impl MutationBatch {
    pub fn is_empty(&self) -> bool {
        self.mutations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.mutations.len()
    }

    pub fn max_seqno(&self) -> Option<u64> {
        self.mutations.iter().map(|m| m.seqno).max()
    }
}

/// Sort key of a stored version: partition, clustering, column ascending,
/// then timestamp descending so the newest version comes first.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub(crate) struct VersionKey {
    pub partition: Vec<u8>,
    pub clustering: Vec<u8>,
    pub column: String,
    pub rev_ts: Reverse<i64>,
}

impl VersionKey {
    pub fn timestamp(&self) -> i64 {
        self.rev_ts.0
    }

    pub fn same_cell(&self, other: &VersionKey) -> bool {
        self.partition == other.partition
            && self.clustering == other.clustering
            && self.column == other.column
    }

    /// Smallest key of (partition, clustering): empty column, newest timestamp.
    pub fn floor(partition: &[u8], clustering: &[u8]) -> Self {
        Self {
            partition: partition.to_vec(),
            clustering: clustering.to_vec(),
            column: String::new(),
            rev_ts: Reverse(i64::MAX),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Version {
    pub seqno: u64,
    pub ttl_s: Option<u32>,
    pub tombstone: bool,
    pub value: Vec<u8>,
}

impl Version {
    pub fn expires_at(&self, ts: i64) -> Option<i64> {
        self.ttl_s
            .map(|ttl| ts.saturating_add(i64::from(ttl) * MICROS_PER_SECOND))
    }

    /// Ordering used when two replicas hold different content for the same
    /// (partition, clustering, column, timestamp): tombstones first, then the
    /// lexicographically larger value, then the TTL.
    pub fn replica_cmp(&self, other: &Version) -> Ordering {
        (self.tombstone, &self.value, self.ttl_s).cmp(&(other.tombstone, &other.value, other.ttl_s))
    }
}

pub(crate) fn split(partition: &PartitionKey, cell: Cell, seqno: u64) -> (VersionKey, Version) {
    (
        VersionKey {
            partition: partition.as_bytes().to_vec(),
            clustering: cell.clustering,
            column: cell.column,
            rev_ts: Reverse(cell.timestamp),
        },
        Version {
            seqno,
            ttl_s: cell.ttl_s,
            tombstone: cell.tombstone,
            value: cell.value,
        },
    )
}

pub(crate) fn join(key: &VersionKey, v: &Version) -> Result<Mutation> {
    Ok(Mutation {
        partition: PartitionKey::from_bytes(&key.partition)?,
        cell: to_cell(key, v),
        seqno: v.seqno,
    })
}

pub(crate) fn to_cell(key: &VersionKey, v: &Version) -> Cell {
    Cell {
        clustering: key.clustering.clone(),
        column: key.column.clone(),
        value: v.value.clone(),
        timestamp: key.timestamp(),
        ttl_s: v.ttl_s,
        tombstone: v.tombstone,
    }
}
