//! Recall as iterative reconstruction. Candidate fragments are gathered from
//! the cue, slots are filled from the best-matching fragment, and the
//! reconstruction is scored as completeness × coherence. Below the
//! acceptance threshold the candidate set is widened through association
//! seeded with the filled fragments, up to a round budget. The best round
//! wins, so extra rounds never lower the score.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::Cue;
use crate::error::{CoreError, Result};
use crate::ids::RecordId;
use crate::knowledge::{cosine_similarity, KnnMode, Knowledge, MemoryRecord, Modality};
use crate::knowledge::record::tokenize;

/// Match strength of a structured top-level key equal to the slot name.
const KEY_MATCH: f64 = 1.0;
/// Match strength of a text token equal to the slot name.
const TOKEN_MATCH: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotFill {
    pub record: RecordId,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub filled_slots: BTreeMap<String, SlotFill>,
    /// Requested slots that stayed empty.
    pub missing_slots: Vec<String>,
    pub completeness: f64,
    pub coherence: f64,
    pub score: f64,
    pub rounds_used: usize,
    pub fragments: Vec<RecordId>,
}

/// How well `r` fills `slot`, before embedding affinity.
pub fn slot_match(slot: &str, r: &MemoryRecord) -> f64 {
    let slot = slot.to_lowercase();
    if r.modality == Modality::Structured {
        if let Some(obj) = r
            .text()
            .and_then(|t| serde_json::from_str::<serde_json::Value>(t).ok())
            .as_ref()
            .and_then(|v| v.as_object())
        {
            if obj.keys().any(|k| k.to_lowercase() == slot) {
                return KEY_MATCH;
            }
        }
    }
    if r.text().is_some_and(|t| tokenize(t).contains(&slot)) {
        TOKEN_MATCH
    } else {
        0.0
    }
}

/// Mean pairwise cosine of the embedded fragments, clamped at zero; 1.0 when
/// fewer than two fragments carry an embedding.
pub fn coherence(fragments: &[&MemoryRecord]) -> f64 {
    let vs: Vec<&Vec<f32>> = fragments.iter().filter_map(|r| r.embedding.as_ref()).collect();
    if vs.len() < 2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..vs.len() {
        for j in i + 1..vs.len() {
            sum += cosine_similarity(vs[i], vs[j]).unwrap_or(0.0);
            n += 1;
        }
    }
    (sum / n as f64).clamp(0.0, 1.0)
}

struct Round {
    filled: BTreeMap<String, SlotFill>,
    completeness: f64,
    coherence: f64,
    fragments: Vec<RecordId>,
}

impl Knowledge {
    /// Reconstructs an episode from a partial cue. Fragments that contribute
    /// to the answer are reinforced.
    pub fn recall(&self, cue: &Cue, max_rounds: Option<usize>, accept: Option<f64>) -> Result<ReconstructionResult> {
        cue.validate()?;
        if let Some(q) = &cue.embedding {
            if q.len() != self.dim() {
                return Err(CoreError::DimensionMismatch {
                    expected: self.dim(),
                    got: q.len(),
                });
            }
        }
        let cfg = self.settings().cognition.clone();
        let max_rounds = max_rounds.unwrap_or(cfg.recall_max_rounds).max(1);
        let accept = accept.unwrap_or(cfg.recall_accept);
        let mut slots: Vec<String> = Vec::new();
        for s in &cue.slots {
            if !slots.contains(s) {
                slots.push(s.clone());
            }
        }

        let mut candidates = self.gather(cue, cfg.recall_k)?;
        let mut best: Option<(f64, Round)> = None;
        let mut rounds_used = 0;
        for round in 1..=max_rounds {
            rounds_used = round;
            let r = self.evaluate(cue, &slots, &candidates, cfg.recall_k);
            let score = r.completeness * r.coherence;
            let seeds = r.fragments.clone();
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, r));
            }
            if score >= accept || round == max_rounds {
                break;
            }
            let added = self.expand(&seeds, &candidates, cfg.recall_k)?;
            if added.is_empty() {
                break;
            }
            candidates.extend(added);
        }

        let (score, r) = best.expect("at least one round runs");
        for id in &r.fragments {
            // A fragment archived concurrently is simply not reinforced.
            let _ = self.reinforce(id, cfg.recall_reinforce);
        }
        let missing_slots = slots.iter().filter(|s| !r.filled.contains_key(*s)).cloned().collect();
        Ok(ReconstructionResult {
            filled_slots: r.filled,
            missing_slots,
            completeness: r.completeness,
            coherence: r.coherence,
            score,
            rounds_used,
            fragments: r.fragments,
        })
    }

    fn gather(&self, cue: &Cue, k: usize) -> Result<BTreeSet<RecordId>> {
        let mut out = BTreeSet::new();
        if let Some((lo, hi)) = cue.time_window {
            out.extend(self.timeline(lo, hi)?);
        }
        if let Some(q) = &cue.embedding {
            out.extend(self.knn(q, k, KnnMode::Exact)?.into_iter().map(|h| h.id));
        }
        if self.graph_enabled() {
            for e in &cue.entities {
                out.extend(self.records_of_entity(e)?);
            }
        }
        let tokens: Vec<String> = cue
            .text_tokens
            .iter()
            .chain(&cue.salience_tags)
            .flat_map(|t| tokenize(t))
            .collect();
        out.extend(self.records_with_tokens(&tokens));
        Ok(out)
    }

    fn evaluate(&self, cue: &Cue, slots: &[String], candidates: &BTreeSet<RecordId>, k: usize) -> Round {
        let records: Vec<MemoryRecord> = candidates
            .iter()
            .filter_map(|id| self.peek_record(id))
            .filter(|r| !r.is_archived())
            .collect();
        let affinity = |r: &MemoryRecord| match (&cue.embedding, &r.embedding) {
            (Some(q), Some(v)) => (1.0 + cosine_similarity(q, v).unwrap_or(0.0)) / 2.0,
            _ => 1.0,
        };

        let mut filled = BTreeMap::new();
        let fragments: Vec<RecordId> = if slots.is_empty() {
            let mut ranked: Vec<(f64, f64, RecordId)> =
                records.iter().map(|r| (affinity(r), r.salience, r.id)).collect();
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
            ranked.into_iter().take(k).map(|(_, _, id)| id).collect()
        } else {
            for slot in slots {
                let pick = records
                    .iter()
                    .filter_map(|r| {
                        let m = slot_match(slot, r);
                        (m > 0.0).then(|| (m * affinity(r), r))
                    })
                    .min_by(|(ca, a), (cb, b)| cb.total_cmp(ca).then(b.salience.total_cmp(&a.salience)).then(a.id.cmp(&b.id)));
                if let Some((confidence, r)) = pick {
                    filled.insert(slot.clone(), SlotFill { record: r.id, confidence });
                }
            }
            let mut ids: Vec<RecordId> = filled.values().map(|f| f.record).collect();
            ids.sort();
            ids.dedup();
            ids
        };

        let completeness = if slots.is_empty() {
            if fragments.is_empty() { 0.0 } else { 1.0 }
        } else {
            filled.len() as f64 / slots.len() as f64
        };
        let frag_records: Vec<&MemoryRecord> = records.iter().filter(|r| fragments.contains(&r.id)).collect();
        let coherence = if fragments.is_empty() { 0.0 } else { coherence(&frag_records) };
        Round {
            filled,
            completeness,
            coherence,
            fragments,
        }
    }

    /// New candidates reachable from the current fragments (or from every
    /// candidate when nothing was filled yet).
    fn expand(&self, seeds: &[RecordId], candidates: &BTreeSet<RecordId>, k: usize) -> Result<BTreeSet<RecordId>> {
        let seed_ids: Vec<RecordId> = if seeds.is_empty() {
            candidates.iter().copied().collect()
        } else {
            seeds.to_vec()
        };
        let mut found = BTreeSet::new();
        for id in seed_ids {
            let Some(r) = self.peek_record(&id) else { continue };
            let cue = Cue {
                entities: if self.graph_enabled() { vec![id.node()] } else { Vec::new() },
                embedding: r.embedding.clone(),
                ..Cue::default()
            };
            if cue.entities.is_empty() && cue.embedding.is_none() {
                continue;
            }
            for a in self.associate(&cue, k)? {
                if let Some(rid) = RecordId::from_node(&a.node) {
                    found.insert(rid);
                } else if self.graph_enabled() {
                    found.extend(self.records_of_entity(&a.node)?);
                }
            }
        }
        found.retain(|id| !candidates.contains(id) && self.peek_record(id).is_some_and(|r| !r.is_archived()));
        Ok(found)
    }
}
