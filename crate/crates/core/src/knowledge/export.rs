//! Lossless JSON Lines export and import of one namespace.
//!
//! Every line is canonical JSON with a `kind` field. Order: the namespace
//! header, records (every version, oldest first, ascending id), triples
//! (s, p, o, asserted_at), facts by key, events by stream and time, cases by
//! goal. Exporting an imported namespace reproduces the input byte for byte.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use colma_storage::Cell;

use super::record::{content_serde, Meta, StoredVersion};
use super::{sortable, Case, Knowledge, Modality, Triple, VersionRef};
use crate::error::{CoreError, Result};
use crate::ids::RecordId;
use crate::json;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub tier: super::Tier,
    pub salience: f64,
    pub access_count: u64,
    pub last_access: i64,
    pub tick_mark: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExportLine {
    Namespace {
        name: String,
        dim: usize,
    },
    Record {
        id: RecordId,
        version: u32,
        modality: Modality,
        #[serde(with = "content_serde")]
        content: Vec<u8>,
        embedding: Option<Vec<f32>>,
        created_at: i64,
        updated_at: i64,
        supersedes: Option<VersionRef>,
        provenance: Vec<String>,
        /// Present on the newest version only.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        meta: Option<RecordMeta>,
    },
    Triple(Triple),
    Fact {
        key: String,
        #[serde(with = "content_serde")]
        value: Vec<u8>,
        updated_at: i64,
    },
    Event {
        stream: String,
        label: String,
        at: i64,
        record: RecordId,
    },
    Case {
        goal: String,
        answer: BTreeMap<String, String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        record: Option<RecordId>,
    },
}

impl Knowledge {
    pub fn export(&self) -> Result<Vec<String>> {
        let mut lines = vec![ExportLine::Namespace {
            name: self.name.clone(),
            dim: self.dim,
        }];
        for cur in self.records() {
            let mark = self.tick_mark(&cur.id);
            for v in self.record_versions(&cur.id)? {
                let meta = (v.version == cur.version).then_some(RecordMeta {
                    tier: cur.tier,
                    salience: cur.salience,
                    access_count: cur.access_count,
                    last_access: cur.last_access,
                    tick_mark: mark,
                });
                lines.push(ExportLine::Record {
                    id: v.id,
                    version: v.version,
                    modality: v.modality,
                    content: v.content,
                    embedding: v.embedding,
                    created_at: v.created_at,
                    updated_at: v.updated_at,
                    supersedes: v.supersedes,
                    provenance: v.provenance,
                    meta,
                });
            }
        }
        lines.extend(self.all_triples().into_iter().map(ExportLine::Triple));
        for (key, value, updated_at) in self.facts()? {
            lines.push(ExportLine::Fact { key, value, updated_at });
        }
        for stream in self.streams() {
            for (at, record, label) in self.stream_events(&stream)?.unwrap_or_default() {
                lines.push(ExportLine::Event {
                    stream: stream.clone(),
                    label,
                    at,
                    record,
                });
            }
        }
        for c in self.cases() {
            lines.push(ExportLine::Case {
                goal: c.goal,
                answer: c.answer,
                record: c.record,
            });
        }
        lines.iter().map(|l| Ok(json::canonical(l)?)).collect()
    }

    /// Loads exported lines into this namespace, which must be empty.
    /// Returns the number of lines applied.
    pub fn import<'a>(&self, lines: impl IntoIterator<Item = &'a str>) -> Result<usize> {
        if !self.is_empty() {
            return Err(CoreError::DirtyNamespace(self.name.clone()));
        }
        let mut n = 0;
        for (i, line) in lines.into_iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ExportLine =
                serde_json::from_str(line).map_err(|e| CoreError::Import(format!("line {}: {e}", i + 1)))?;
            self.import_line(parsed)?;
            n += 1;
        }
        self.reload()?;
        Ok(n)
    }

    fn import_line(&self, line: ExportLine) -> Result<()> {
        let now = self.now();
        match line {
            ExportLine::Namespace { dim, .. } => {
                if dim != self.dim {
                    return Err(CoreError::DimensionMismatch {
                        expected: self.dim,
                        got: dim,
                    });
                }
                self.ensure_created()?;
            }
            ExportLine::Record {
                id,
                version,
                modality,
                content,
                embedding,
                created_at,
                updated_at,
                supersedes,
                provenance,
                meta,
            } => {
                self.ensure_created()?;
                self.check_embedding(&embedding)?;
                let sv = StoredVersion {
                    id,
                    modality,
                    content,
                    embedding,
                    created_at,
                    updated_at,
                    version,
                    supersedes,
                    provenance,
                };
                let mut clustering = b"v".to_vec();
                clustering.extend_from_slice(&version.to_be_bytes());
                self.put_json(&id.node(), clustering, "r", &sv, updated_at)?;
                if version == 1 {
                    let mut clustering = sortable(created_at).to_vec();
                    clustering.extend_from_slice(&id.0);
                    self.store
                        .put(&self.part("timeline")?, Cell::new(clustering, "t", Vec::new(), created_at))?;
                }
                if let Some(m) = meta {
                    let meta = Meta {
                        tier: m.tier,
                        salience: m.salience,
                        access_count: m.access_count,
                        last_access: m.last_access,
                        tick_mark: m.tick_mark,
                    };
                    self.put_json(&id.node(), b"m".to_vec(), "m", &meta, now)?;
                }
            }
            ExportLine::Triple(t) => {
                self.ensure_created()?;
                let t = t.normalized()?;
                self.write_triple(&t, now)?;
            }
            ExportLine::Fact { key, value, updated_at } => {
                self.ensure_created()?;
                self.store
                    .put(&self.part("facts")?, Cell::new(key.into_bytes(), "v", value, updated_at))?;
            }
            ExportLine::Event {
                stream,
                label,
                at,
                record,
            } => {
                self.ensure_created()?;
                let mut clustering = sortable(at).to_vec();
                clustering.extend_from_slice(&record.0);
                self.store.put(
                    &self.part(&format!("stream:{stream}"))?,
                    Cell::new(clustering, "e", label.into_bytes(), at),
                )?;
            }
            ExportLine::Case { goal, answer, record } => {
                self.ensure_created()?;
                let case = Case {
                    goal,
                    answer,
                    record,
                    embedding: Vec::new(),
                };
                self.put_json("cases", case.goal.as_bytes().to_vec(), "c", &case, now)?;
            }
        }
        Ok(())
    }
}
