use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Result, StorageError};

/// Separator between namespace and entity in the serialized key (ASCII unit separator).
pub const KEY_SEPARATOR: u8 = 0x1f;

/// Partition key: `namespace 0x1F entity`.
///
/// Ordering and equality are bytewise on the serialized form, which is what
/// segments and the ring see.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PartitionKey {
    bytes: Vec<u8>,
    split: usize,
}

impl PartitionKey {
    pub fn new(namespace: &str, entity: &str) -> Result<Self> {
        if namespace.is_empty() || entity.is_empty() {
            return Err(StorageError::InvalidKey(
                "namespace and entity must be non-empty".into(),
            ));
        }
        if namespace.as_bytes().contains(&KEY_SEPARATOR) || entity.as_bytes().contains(&KEY_SEPARATOR) {
            return Err(StorageError::InvalidKey(
                "namespace and entity must not contain 0x1F".into(),
            ));
        }
        let mut bytes = Vec::with_capacity(namespace.len() + entity.len() + 1);
        bytes.extend_from_slice(namespace.as_bytes());
        bytes.push(KEY_SEPARATOR);
        bytes.extend_from_slice(entity.as_bytes());
        Ok(Self {
            bytes,
            split: namespace.len(),
        })
    }

    /// Parses a serialized key.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let split = bytes
            .iter()
            .position(|&b| b == KEY_SEPARATOR)
            .ok_or_else(|| StorageError::InvalidKey("missing separator".into()))?;
        let ns = std::str::from_utf8(&bytes[..split])
            .map_err(|_| StorageError::InvalidKey("namespace is not UTF-8".into()))?;
        let entity = std::str::from_utf8(&bytes[split + 1..])
            .map_err(|_| StorageError::InvalidKey("entity is not UTF-8".into()))?;
        Self::new(ns, entity)
    }

    pub fn namespace(&self) -> &str {
        // Validated as UTF-8 on construction.
        std::str::from_utf8(&self.bytes[..self.split]).unwrap_or_default()
    }

    pub fn entity(&self) -> &str {
        std::str::from_utf8(&self.bytes[self.split + 1..]).unwrap_or_default()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }
}

impl Ord for PartitionKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bytes.cmp(&other.bytes)
    }
}

impl PartialOrd for PartitionKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for PartitionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PartitionKey({}/{})", self.namespace(), self.entity())
    }
}

impl fmt::Display for PartitionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.namespace(), self.entity())
    }
}

#[derive(Serialize, Deserialize)]
struct KeyRepr {
    namespace: String,
    entity: String,
}

impl Serialize for PartitionKey {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        KeyRepr {
            namespace: self.namespace().to_owned(),
            entity: self.entity().to_owned(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PartitionKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = KeyRepr::deserialize(d)?;
        PartitionKey::new(&repr.namespace, &repr.entity).map_err(serde::de::Error::custom)
    }
}
