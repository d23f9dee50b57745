//! Memory records: versioned multimodal items with tier and access metadata.

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::ids::RecordId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    ImageDescriptor,
    Structured,
    Event,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Short,
    Medium,
    Long,
    Archived,
}

impl Tier {
    pub fn next(self) -> Tier {
        match self {
            Tier::Short => Tier::Medium,
            Tier::Medium | Tier::Long => Tier::Long,
            Tier::Archived => Tier::Archived,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VersionRef {
    pub id: RecordId,
    pub version: u32,
}

/// Byte content that serializes as a plain string when it is UTF-8 and as
/// `{"base64": "..."}` otherwise.
pub mod content_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Text(String),
        Binary { base64: String },
    }

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        match std::str::from_utf8(bytes) {
            Ok(t) => Repr::Text(t.to_owned()),
            Err(_) => Repr::Binary {
                base64: base64::engine::general_purpose::STANDARD.encode(bytes),
            },
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Text(t) => Ok(t.into_bytes()),
            Repr::Binary { base64 } => base64::engine::general_purpose::STANDARD
                .decode(base64)
                .map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub id: RecordId,
    pub namespace: String,
    pub modality: Modality,
    #[serde(with = "content_serde")]
    pub content: Vec<u8>,
    pub embedding: Option<Vec<f32>>,
    pub created_at: i64,
    /// When this version was written.
    pub updated_at: i64,
    pub last_access: i64,
    pub access_count: u64,
    pub salience: f64,
    pub tier: Tier,
    pub version: u32,
    pub supersedes: Option<VersionRef>,
    pub provenance: Vec<String>,
}

impl MemoryRecord {
    pub fn text(&self) -> Option<&str> {
        std::str::from_utf8(&self.content).ok()
    }

    pub fn is_archived(&self) -> bool {
        self.tier == Tier::Archived
    }

    pub(crate) fn meta(&self) -> Meta {
        Meta {
            tier: self.tier,
            salience: self.salience,
            access_count: self.access_count,
            last_access: self.last_access,
            tick_mark: i64::MIN,
        }
    }
}

/// Caller input for [`crate::Knowledge::upsert_record`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordInput {
    /// Absent for a new record. Present with `expected_version` to update.
    #[serde(default)]
    pub id: Option<RecordId>,
    /// Version the caller last saw; the write becomes `expected_version + 1`.
    #[serde(default)]
    pub expected_version: Option<u32>,
    pub modality: Modality,
    #[serde(with = "content_serde")]
    pub content: Vec<u8>,
    #[serde(default)]
    pub embedding: Option<Vec<f32>>,
    /// Defaults to 0.5 on creation; ignored on update.
    #[serde(default)]
    pub salience: Option<f64>,
    #[serde(default)]
    pub provenance: Vec<String>,
    /// Creation time for new records; defaults to now.
    #[serde(default)]
    pub at: Option<i64>,
}

impl RecordInput {
    pub fn text(content: impl Into<String>) -> Self {
        Self::new(Modality::Text, content.into().into_bytes())
    }

    pub fn new(modality: Modality, content: Vec<u8>) -> Self {
        Self {
            id: None,
            expected_version: None,
            modality,
            content,
            embedding: None,
            salience: None,
            provenance: Vec::new(),
            at: None,
        }
    }

    pub fn with_embedding(mut self, v: Vec<f32>) -> Self {
        self.embedding = Some(v);
        self
    }

    pub fn with_salience(mut self, s: f64) -> Self {
        self.salience = Some(s);
        self
    }

    pub fn with_provenance(mut self, p: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.provenance = p.into_iter().map(Into::into).collect();
        self
    }

    pub fn at(mut self, t: i64) -> Self {
        self.at = Some(t);
        self
    }

    /// Update of an existing record expected to be at `version`.
    pub fn update_of(mut self, id: RecordId, version: u32) -> Self {
        self.id = Some(id);
        self.expected_version = Some(version);
        self
    }
}

/// Mutable per-record metadata, stored apart from versions so reinforcement
/// and tier changes do not create new versions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub(crate) struct Meta {
    pub tier: Tier,
    pub salience: f64,
    pub access_count: u64,
    pub last_access: i64,
    /// Last tick time at which this record changed tier; a tick at the same
    /// time skips it, which makes ticks idempotent.
    pub tick_mark: i64,
}

/// Versioned part of a record as persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct StoredVersion {
    pub id: RecordId,
    pub modality: Modality,
    #[serde(with = "content_serde")]
    pub content: Vec<u8>,
    pub embedding: Option<Vec<f32>>,
    pub created_at: i64,
    pub updated_at: i64,
    pub version: u32,
    pub supersedes: Option<VersionRef>,
    pub provenance: Vec<String>,
}

impl StoredVersion {
    pub fn into_record(self, namespace: &str, meta: &Meta) -> MemoryRecord {
        MemoryRecord {
            id: self.id,
            namespace: namespace.to_owned(),
            modality: self.modality,
            content: self.content,
            embedding: self.embedding,
            created_at: self.created_at,
            updated_at: self.updated_at,
            last_access: meta.last_access,
            access_count: meta.access_count,
            salience: meta.salience,
            tier: meta.tier,
            version: self.version,
            supersedes: self.supersedes,
            provenance: self.provenance,
        }
    }

    pub fn of(r: &MemoryRecord) -> Self {
        Self {
            id: r.id,
            modality: r.modality,
            content: r.content.clone(),
            embedding: r.embedding.clone(),
            created_at: r.created_at,
            updated_at: r.updated_at,
            version: r.version,
            supersedes: r.supersedes,
            provenance: r.provenance.clone(),
        }
    }
}

/// Lowercase alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}
