//! Hierarchical memory engine: a knowledge layer (records, triples, vectors,
//! facts) over the wide-column store, a three-tier consolidation coordinator,
//! cognitive operations built on both, and scripted scenarios that exercise
//! the whole stack.

pub mod cognition;
pub mod config;
pub mod coordination;
pub mod engine;
pub mod error;
pub mod ids;
pub mod json;
pub mod knowledge;
pub mod scenario;

pub use config::{CognitionConfig, EngineConfig};
pub use engine::Engine;
pub use error::{CoreError, Result};
pub use ids::RecordId;
pub use knowledge::{
    Direction, IndexChoice, Knowledge, KnnMode, MemoryRecord, Modality, NamespaceStats, RecordInput, ScoredId, Tier, Triple,
    TriplePattern,
};

pub use colma_storage as storage;
