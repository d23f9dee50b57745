//! Tiered consolidation: intake into short-term memory, retention scoring,
//! promotion along short -> medium -> long, reinforcement and archival.
//!
//! Retention score, with Δt the days since last access and λ the decay rate
//! of the record's tier:
//!
//! ```text
//! R = w_recency·exp(-λ·Δt) + w_frequency·(1 - exp(-access_count/5)) + w_salience·salience
//! ```

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use colma_storage::MICROS_PER_DAY;

use crate::error::{CoreError, Result};
use crate::ids::RecordId;
use crate::knowledge::{Knowledge, MemoryRecord, Modality, RecordInput, Tier};

/// Access count at which the frequency term reaches 1 - 1/e.
pub const FREQUENCY_SCALE: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetentionPolicy {
    pub lambda_short: f64,
    pub lambda_medium: f64,
    pub lambda_long: f64,
    pub promote_threshold: f64,
    pub archive_threshold: f64,
    pub short_capacity: usize,
    pub w_recency: f64,
    pub w_frequency: f64,
    pub w_salience: f64,
}

impl Default for RetentionPolicy {
    fn default() -> Self {
        Self {
            lambda_short: 2.0,
            lambda_medium: 0.2,
            lambda_long: 0.02,
            promote_threshold: 0.6,
            archive_threshold: 0.05,
            short_capacity: 64,
            w_recency: 0.3,
            w_frequency: 0.3,
            w_salience: 0.4,
        }
    }
}

impl RetentionPolicy {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::InvalidConfig(format!("retention policy: {m}")));
        if !(self.lambda_short > self.lambda_medium && self.lambda_medium > self.lambda_long && self.lambda_long > 0.0) {
            return bad("decay rates must satisfy short > medium > long > 0");
        }
        if !(0.0 < self.archive_threshold && self.archive_threshold < self.promote_threshold && self.promote_threshold < 1.0) {
            return bad("thresholds must satisfy 0 < archive < promote < 1");
        }
        if self.short_capacity == 0 {
            return bad("short_capacity must be positive");
        }
        let w = [self.w_recency, self.w_frequency, self.w_salience];
        if w.iter().any(|x| *x < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("weights must be non-negative and sum to 1");
        }
        Ok(())
    }

    pub fn lambda(&self, tier: Tier) -> f64 {
        match tier {
            Tier::Short => self.lambda_short,
            Tier::Medium => self.lambda_medium,
            Tier::Long | Tier::Archived => self.lambda_long,
        }
    }

    /// Score from explicit arguments; `dt_days` below zero counts as zero.
    pub fn score(&self, tier: Tier, dt_days: f64, access_count: u64, salience: f64) -> f64 {
        let dt = dt_days.max(0.0);
        self.w_recency * (-self.lambda(tier) * dt).exp()
            + self.w_frequency * (1.0 - (-(access_count as f64) / FREQUENCY_SCALE).exp())
            + self.w_salience * salience
    }

    pub fn retention_score(&self, r: &MemoryRecord, now: i64) -> f64 {
        let dt_days = (now - r.last_access) as f64 / MICROS_PER_DAY as f64;
        self.score(r.tier, dt_days, r.access_count, r.salience)
    }
}

/// Something perceived, before it becomes a memory record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stimulus {
    pub modality: Modality,
    #[serde(with = "crate::knowledge::record::content_serde")]
    pub content: Vec<u8>,
    #[serde(default)]
    pub embedding: Option<Vec<f32>>,
    #[serde(default)]
    pub salience: Option<f64>,
    #[serde(default)]
    pub entities: Vec<String>,
    #[serde(default)]
    pub occurred_at: Option<i64>,
    #[serde(default)]
    pub provenance: Vec<String>,
}

impl Stimulus {
    pub fn text(content: impl Into<String>) -> Self {
        Self {
            modality: Modality::Text,
            content: content.into().into_bytes(),
            embedding: None,
            salience: None,
            entities: Vec::new(),
            occurred_at: None,
            provenance: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeResult {
    pub record: MemoryRecord,
    /// A short-tier record moved out because the tier was over capacity.
    pub displaced: Option<(RecordId, Tier)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TickReport {
    pub promoted: Vec<(RecordId, Tier, Tier)>,
    pub archived: Vec<RecordId>,
    pub evaluated: usize,
}

impl TickReport {
    pub fn is_empty(&self) -> bool {
        self.promoted.is_empty() && self.archived.is_empty()
    }
}

/// What a tick does to one record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TickDecision {
    Promote(Tier),
    Archive,
    Keep,
}

pub fn decide(policy: &RetentionPolicy, r: &MemoryRecord, now: i64) -> TickDecision {
    let score = policy.retention_score(r, now);
    if score >= policy.promote_threshold && matches!(r.tier, Tier::Short | Tier::Medium) {
        TickDecision::Promote(r.tier.next())
    } else if score < policy.archive_threshold {
        TickDecision::Archive
    } else {
        TickDecision::Keep
    }
}

impl Knowledge {
    fn policy(&self) -> RetentionPolicy {
        self.settings().policy
    }

    pub fn retention_score(&self, id: &RecordId, now: i64) -> Option<f64> {
        self.peek_record(id).map(|r| self.policy().retention_score(&r, now))
    }

    /// Stores a stimulus as a short-tier record and links its entities. When
    /// the short tier overflows, its lowest-scoring record is moved out: to
    /// `archived` if its score is below the archive threshold, otherwise to
    /// `medium`.
    pub fn encode(&self, stimulus: Stimulus) -> Result<EncodeResult> {
        let mut input = RecordInput::new(stimulus.modality, stimulus.content).with_provenance(stimulus.provenance);
        input.embedding = stimulus.embedding;
        input.salience = Some(stimulus.salience.unwrap_or(0.5));
        input.at = stimulus.occurred_at;
        let (id, _) = self.upsert_record(input)?;
        if !stimulus.entities.is_empty() {
            for e in &stimulus.entities {
                self.link_record_entity(&id, e)?;
            }
        }
        let displaced = self.enforce_short_capacity()?;
        let record = self.peek_record(&id).ok_or_else(|| CoreError::UnknownRecord(id.to_hex()))?;
        Ok(EncodeResult { record, displaced })
    }

    fn enforce_short_capacity(&self) -> Result<Option<(RecordId, Tier)>> {
        let policy = self.policy();
        let now = self.now();
        let shorts: Vec<MemoryRecord> = self.records().into_iter().filter(|r| r.tier == Tier::Short).collect();
        if shorts.len() <= policy.short_capacity {
            return Ok(None);
        }
        let victim = shorts
            .iter()
            .map(|r| (policy.retention_score(r, now), r))
            .min_by(|(sa, a), (sb, b)| {
                sa.total_cmp(sb)
                    .then(a.created_at.cmp(&b.created_at))
                    .then(a.id.cmp(&b.id))
            })
            .map(|(s, r)| (s, r.id));
        let Some((score, id)) = victim else { return Ok(None) };
        let to = if score < policy.archive_threshold {
            Tier::Archived
        } else {
            Tier::Medium
        };
        self.update_meta(&id, None, |r| r.tier = to)?;
        Ok(Some((id, to)))
    }

    /// Evaluates every non-archived record once at time `now`: promote one
    /// tier when R >= promote threshold, archive when R < archive threshold.
    pub fn consolidate_tick(&self, now: i64) -> Result<TickReport> {
        self.tick(now, true)
    }

    /// Archives records whose score fell below the archive threshold.
    pub fn forget_tick(&self, now: i64) -> Result<Vec<RecordId>> {
        Ok(self.tick(now, false)?.archived)
    }

    fn tick(&self, now: i64, promote: bool) -> Result<TickReport> {
        let _t = self.tick_lock.lock();
        let policy = self.policy();
        // Snapshot, decide, then apply; decisions never see each other's effects.
        let plan: Vec<(MemoryRecord, TickDecision)> = {
            let st = self.state.read();
            st.records
                .values()
                .filter(|r| !r.is_archived())
                .filter(|r| st.tick_marks.get(&r.id).copied().unwrap_or(i64::MIN) < now)
                .map(|r| (r.clone(), decide(&policy, r, now)))
                .collect()
        };
        let mut report = TickReport {
            evaluated: plan.len(),
            ..TickReport::default()
        };
        for (r, d) in plan {
            match d {
                TickDecision::Promote(to) if promote => {
                    self.update_meta(&r.id, Some(now), |m| m.tier = to)?;
                    report.promoted.push((r.id, r.tier, to));
                }
                TickDecision::Archive => {
                    self.update_meta(&r.id, Some(now), |m| m.tier = Tier::Archived)?;
                    report.archived.push(r.id);
                }
                _ => {}
            }
        }
        Ok(report)
    }

    /// Strengthens a live record: salience moves by `delta` (clamped to
    /// [0, 1]) and the access is counted. No new version is written.
    pub fn reinforce(&self, id: &RecordId, delta: f64) -> Result<MemoryRecord> {
        if !delta.is_finite() {
            return Err(CoreError::InvalidRecord("reinforcement delta must be finite".into()));
        }
        match self.peek_record(id) {
            Some(r) if !r.is_archived() => {}
            _ => return Err(CoreError::UnknownRecord(id.to_hex())),
        }
        let now = self.now();
        self.update_meta(id, None, |r| {
            r.salience = (r.salience + delta).clamp(0.0, 1.0);
            r.access_count += 1;
            r.last_access = r.last_access.max(now);
        })
    }

    /// Short-tier record ids, ascending.
    pub fn short_tier(&self) -> BTreeSet<RecordId> {
        self.state
            .read()
            .records
            .values()
            .filter(|r| r.tier == Tier::Short)
            .map(|r| r.id)
            .collect()
    }
}
