//! Conflict-aware belief updating: retrieve what is known about the
//! proposal's (subject, predicate), compare, verify competing resolutions,
//! then reconsolidate. Nothing is ever deleted; a replaced belief is
//! retracted and stays visible to historical queries.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::ids::RecordId;
use crate::knowledge::{Direction, IndexChoice, Knowledge, Triple, TripleKey, TriplePattern};

/// Corroboration used when no neighbouring triple carries provenance.
pub const NEUTRAL_CORROBORATION: f64 = 0.5;
pub const SUPERSEDES_PREFIX: &str = "supersedes:";
pub const COEXISTS_PREFIX: &str = "coexists-with:";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateProposal {
    pub triple: Triple,
    pub evidence: Vec<String>,
    pub evidence_confidence: f64,
    #[serde(default)]
    pub source_record: Option<RecordId>,
}

impl UpdateProposal {
    pub fn validate(&self) -> Result<()> {
        if self.evidence.is_empty() {
            return Err(CoreError::InvalidProposal("evidence must be non-empty".into()));
        }
        if !(self.evidence_confidence > 0.0 && self.evidence_confidence <= 1.0) {
            return Err(CoreError::InvalidProposal(format!(
                "evidence_confidence {} outside (0, 1]",
                self.evidence_confidence
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Reinforced,
    Replaced,
    Coexists,
    Rejected,
}

/// Candidate resolutions of a conflict, in the order they are tried.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Resolution {
    KeepOld,
    Replace,
    Coexist,
}

pub const RESOLUTION_ORDER: [Resolution; 3] = [Resolution::KeepOld, Resolution::Replace, Resolution::Coexist];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewVersion {
    pub key: TripleKey,
    /// Number of triples ever stored for the (subject, predicate), this one included.
    pub version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateOutcome {
    pub decision: Decision,
    pub new_version: Option<NewVersion>,
    pub conflict_with: Option<Triple>,
    pub verification_rounds: u32,
    pub consistency: f64,
    pub completeness_q: f64,
    /// Resolution picked during verification; keep-old yields `rejected`.
    pub resolution: Option<Resolution>,
    pub corroboration: f64,
}

/// Consistency of each candidate resolution.
///
/// With support for the new value `sn = ev · corr` and for the old value
/// `so = old · (1 − corr)`: replace scores `sn / (sn + so · (1 − ev))`,
/// keep-old scores `so / (so + sn · (1 − old))`, and coexisting scores
/// `1 − |replace − keep|`. A zero denominator scores 0.
pub fn consistency(resolution: Resolution, ev: f64, old: f64, corr: f64) -> f64 {
    let ratio = |a: f64, b: f64| if a + b > 0.0 { a / (a + b) } else { 0.0 };
    let sn = ev * corr;
    let so = old * (1.0 - corr);
    let replace = ratio(sn, so * (1.0 - ev));
    let keep = ratio(so, sn * (1.0 - old));
    match resolution {
        Resolution::Replace => replace,
        Resolution::KeepOld => keep,
        Resolution::Coexist => 1.0 - (replace - keep).abs(),
    }
}

/// First resolution in [`RESOLUTION_ORDER`] whose consistency times
/// `completeness_q` reaches `accept`.
pub fn choose(ev: f64, old: f64, corr: f64, completeness_q: f64, accept: f64) -> Option<(Resolution, f64)> {
    RESOLUTION_ORDER
        .into_iter()
        .map(|r| (r, consistency(r, ev, old, corr)))
        .find(|(_, c)| c * completeness_q >= accept)
}

/// Share of `neighborhood` triples (those with any provenance) whose sources
/// intersect `sources`; [`NEUTRAL_CORROBORATION`] when none carry provenance.
pub fn corroboration(sources: &BTreeSet<String>, neighborhood: &[BTreeSet<String>]) -> f64 {
    let with_prov: Vec<&BTreeSet<String>> = neighborhood.iter().filter(|p| !p.is_empty()).collect();
    if with_prov.is_empty() {
        return NEUTRAL_CORROBORATION;
    }
    let shared = with_prov.iter().filter(|p| !p.is_disjoint(sources)).count();
    shared as f64 / with_prov.len() as f64
}

pub type Validator<'a> = &'a dyn Fn(&UpdateProposal, &Triple) -> f64;

impl Knowledge {
    fn triple_sources(&self, t: &Triple) -> BTreeSet<String> {
        let mut s: BTreeSet<String> = t.provenance.iter().cloned().collect();
        if let Some(r) = t.source_record.and_then(|id| self.peek_record(&id)) {
            s.extend(r.provenance);
        }
        s
    }

    /// Provenance sets of the live triples touching the 2-hop neighbourhood
    /// of `subject`, excluding the (subject, predicate) triples themselves.
    fn neighborhood_sources(&self, subject: &str, predicate: &str) -> Result<Vec<BTreeSet<String>>> {
        let nodes = self.neighbors(subject, 2, Direction::Both)?;
        let st = self.state.read();
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for n in nodes.keys() {
            for pat in [TriplePattern::new(Some(n), None, None), TriplePattern::new(None, None, Some(n))] {
                for t in st.triples.query(&pat, None, IndexChoice::Auto) {
                    if t.subject == subject && t.predicate == predicate {
                        continue;
                    }
                    if seen.insert(t.key()) {
                        out.push(t);
                    }
                }
            }
        }
        drop(st);
        Ok(out.iter().map(|t| self.triple_sources(t)).collect())
    }

    fn completeness_q(&self, p: &UpdateProposal) -> f64 {
        let evidence = p.evidence.iter().all(|e| !e.trim().is_empty());
        let source = p.source_record.is_some_and(|id| self.peek_record(&id).is_some());
        (u8::from(evidence) + u8::from(source)) as f64 / 2.0
    }

    fn version_of(&self, subject: &str, predicate: &str, key: TripleKey) -> NewVersion {
        let pat = TriplePattern::new(Some(subject), Some(predicate), None);
        let version = self
            .state
            .read()
            .triples
            .all()
            .filter(|t| pat.matches(t))
            .count() as u32;
        NewVersion { key, version }
    }

    pub fn update_memory(
        &self,
        proposal: &UpdateProposal,
        max_rounds: Option<usize>,
        accept_q: Option<f64>,
        validator: Option<Validator<'_>>,
    ) -> Result<UpdateOutcome> {
        self.require_graph()?;
        proposal.validate()?;
        let cfg = self.settings().cognition.clone();
        let max_rounds = max_rounds.unwrap_or(cfg.update_max_rounds).max(1);
        let accept = accept_q.unwrap_or(cfg.update_accept);
        let new = proposal.triple.clone().normalized()?;
        let (s, p, o) = (new.subject.clone(), new.predicate.clone(), new.object.clone());
        let ev = proposal.evidence_confidence;
        let q = self.completeness_q(proposal);

        let _u = self.update_lock.lock();
        // RETRIEVE
        let related = self.query_triples(&TriplePattern::new(Some(&s), Some(&p), None), None)?;
        let sources: BTreeSet<String> = proposal.evidence.iter().cloned().collect();
        let mut corr = corroboration(&sources, &self.neighborhood_sources(&s, &p)?);

        let mut provenance = proposal.evidence.clone();
        let base = Triple {
            confidence: ev,
            asserted_at: 0,
            retracted_at: None,
            source_record: proposal.source_record,
            ..new.clone()
        };

        // COMPARE
        if let Some(same) = related.iter().find(|t| t.object == o) {
            if ev > same.confidence {
                self.replace_triple(Triple {
                    confidence: ev,
                    ..same.clone()
                })?;
            }
            for id in [same.source_record, proposal.source_record].into_iter().flatten().collect::<BTreeSet<_>>() {
                if self.peek_record(&id).is_some_and(|r| !r.is_archived()) {
                    self.reinforce(&id, cfg.update_reinforce)?;
                }
            }
            return Ok(UpdateOutcome {
                decision: Decision::Reinforced,
                new_version: None,
                conflict_with: None,
                verification_rounds: 0,
                consistency: 1.0,
                completeness_q: q,
                resolution: None,
                corroboration: corr,
            });
        }
        let Some(old) = related
            .iter()
            .max_by(|a, b| a.confidence.total_cmp(&b.confidence).then(b.asserted_at.cmp(&a.asserted_at)))
            .cloned()
        else {
            let t = Triple {
                provenance: provenance.clone(),
                ..base
            };
            let at = self.assert_triple(t)?;
            let key = TripleKey {
                subject: s.clone(),
                predicate: p.clone(),
                object: o.clone(),
                asserted_at: at.asserted_at,
            };
            return Ok(UpdateOutcome {
                decision: Decision::Coexists,
                new_version: Some(self.version_of(&s, &p, key)),
                conflict_with: None,
                verification_rounds: 0,
                consistency: 1.0,
                completeness_q: q,
                resolution: None,
                corroboration: corr,
            });
        };

        // VERIFY
        let mut rounds = 0u32;
        let mut chosen = None;
        for _ in 0..max_rounds {
            rounds += 1;
            if let Some(v) = validator {
                corr = ((corr + v(proposal, &old).clamp(0.0, 1.0)) / 2.0).clamp(0.0, 1.0);
            }
            chosen = choose(ev, old.confidence, corr, q, accept);
            if chosen.is_some() || validator.is_none() {
                break;
            }
        }
        let best_consistency = RESOLUTION_ORDER
            .into_iter()
            .map(|r| consistency(r, ev, old.confidence, corr))
            .fold(0.0, f64::max);
        let mut outcome = UpdateOutcome {
            decision: Decision::Rejected,
            new_version: None,
            conflict_with: Some(old.clone()),
            verification_rounds: rounds,
            consistency: chosen.map_or(best_consistency, |(_, c)| c),
            completeness_q: q,
            resolution: chosen.map(|(r, _)| r),
            corroboration: corr,
        };

        // RECONSOLIDATE
        let asserted = match chosen.map(|(r, _)| r) {
            None | Some(Resolution::KeepOld) => return Ok(outcome),
            Some(Resolution::Replace) => {
                let now = self.now();
                self.retract_triple(&old.subject, &old.predicate, &old.object, Some(now))?;
                provenance.push(format!(
                    "{SUPERSEDES_PREFIX}{}|{}|{}|{}",
                    old.subject, old.predicate, old.object, old.asserted_at
                ));
                outcome.decision = Decision::Replaced;
                // The successor starts where the retracted belief ends.
                let end = now.max(old.asserted_at + 1);
                self.assert_triple(Triple {
                    provenance,
                    asserted_at: end,
                    ..base
                })?
            }
            Some(Resolution::Coexist) => {
                provenance.push(format!("{COEXISTS_PREFIX}{}", old.object));
                outcome.decision = Decision::Coexists;
                self.assert_triple(Triple { provenance, ..base })?
            }
        };
        let key = TripleKey {
            subject: s.clone(),
            predicate: p.clone(),
            object: o,
            asserted_at: asserted.asserted_at,
        };
        outcome.new_version = Some(self.version_of(&s, &p, key));
        Ok(outcome)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn napoleon_scores() {
        // Empty neighbourhood, full provenance.
        let r = consistency(Resolution::Replace, 0.9, 0.5, NEUTRAL_CORROBORATION);
        assert!((r - 0.45 / 0.475).abs() < 1e-12);
        let k = consistency(Resolution::KeepOld, 0.9, 0.5, NEUTRAL_CORROBORATION);
        assert!((k - 0.25 / 0.475).abs() < 1e-12);
        assert_eq!(choose(0.9, 0.5, 0.5, 1.0, 0.7).map(|c| c.0), Some(Resolution::Replace));
        // Half the provenance cannot clear the bar.
        assert_eq!(choose(0.9, 0.5, 0.5, 0.5, 0.7), None);
    }

    #[test]
    fn strong_old_belief_is_kept() {
        assert_eq!(choose(0.6, 0.95, 0.2, 1.0, 0.7).map(|c| c.0), Some(Resolution::KeepOld));
    }

    #[test]
    fn corroboration_counts_only_sourced_triples() {
        let src: BTreeSet<String> = ["archive".to_string()].into();
        let n = vec![
            ["archive".to_string()].into(),
            ["diary".to_string()].into(),
            BTreeSet::new(),
        ];
        assert_eq!(corroboration(&src, &n), 0.5);
        assert_eq!(corroboration(&src, &[BTreeSet::new()]), NEUTRAL_CORROBORATION);
        assert_eq!(corroboration(&src, &n[..1]), 1.0);
    }
}
