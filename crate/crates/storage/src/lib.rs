//! Wide-column LSM storage: write-ahead log, sorted memtable, immutable
//! checksummed segments, compaction with tombstone and TTL collection,
//! consistent-hash placement and delta sync between replicas.

pub mod cell;
pub mod clock;
pub mod cluster;
mod codec;
pub mod error;
pub mod hash;
pub mod key;
pub mod ring;
pub mod segment;
pub mod store;
pub mod wal;

pub use cell::{Cell, Mutation, MutationBatch};
pub use clock::{Clock, ManualClock, SystemClock, MICROS_PER_DAY, MICROS_PER_SECOND};
pub use cluster::SimulatedCluster;
pub use error::{Result, StorageError};
pub use key::PartitionKey;
pub use ring::{ring_locate, NodeId, Ring, RingConfig};
pub use segment::{Codec, SegmentId, SegmentMeta};
pub use store::{CompactionStats, Store, StoreConfig, StoreStats};
