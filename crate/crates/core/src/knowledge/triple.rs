//! Subject-predicate-object assertions with validity intervals, indexed three
//! ways (SPO, POS, OSP).

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Bound;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::ids::RecordId;

pub const LITERAL_PREFIX: &str = "lit:";
pub const ENTITY_PREFIX: &str = "ent:";
pub const MENTIONED_IN: &str = "mentionedIn";

pub fn is_literal(term: &str) -> bool {
    term.starts_with(LITERAL_PREFIX)
}

/// Objects name an entity unless prefixed `lit:`; an explicit `ent:` prefix
/// is dropped so both spellings of an entity are the same node.
pub fn normalize_term(term: &str) -> &str {
    term.strip_prefix(ENTITY_PREFIX).unwrap_or(term)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triple {
    pub subject: String,
    pub predicate: String,
    pub object: String,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    #[serde(default)]
    pub asserted_at: i64,
    #[serde(default)]
    pub retracted_at: Option<i64>,
    #[serde(default)]
    pub source_record: Option<RecordId>,
    /// Sources backing the assertion, plus `supersedes:` entries written when
    /// an update replaces an older triple.
    #[serde(default)]
    pub provenance: Vec<String>,
}

fn default_confidence() -> f64 {
    1.0
}

impl Triple {
    pub fn new(subject: impl Into<String>, predicate: impl Into<String>, object: impl Into<String>) -> Self {
        Self {
            subject: subject.into(),
            predicate: predicate.into(),
            object: object.into(),
            confidence: 1.0,
            asserted_at: 0,
            retracted_at: None,
            source_record: None,
            provenance: Vec::new(),
        }
    }

    pub fn with_confidence(mut self, c: f64) -> Self {
        self.confidence = c;
        self
    }

    pub fn at(mut self, t: i64) -> Self {
        self.asserted_at = t;
        self
    }

    pub fn key(&self) -> TripleKey {
        TripleKey {
            subject: self.subject.clone(),
            predicate: self.predicate.clone(),
            object: self.object.clone(),
            asserted_at: self.asserted_at,
        }
    }

    pub fn is_live(&self) -> bool {
        self.retracted_at.is_none()
    }

    pub fn live_at(&self, t: i64) -> bool {
        self.asserted_at <= t && self.retracted_at.is_none_or(|r| r > t)
    }

    pub(crate) fn normalized(mut self) -> Result<Self> {
        self.object = normalize_term(&self.object).to_owned();
        self.subject = normalize_term(&self.subject).to_owned();
        for (name, term) in [("subject", &self.subject), ("predicate", &self.predicate), ("object", &self.object)] {
            if term.is_empty() || term.contains('\0') {
                return Err(CoreError::InvalidTriple(format!("{name} must be non-empty without NUL")));
            }
        }
        if is_literal(&self.subject) {
            return Err(CoreError::InvalidTriple("subject must be an entity".into()));
        }
        if !(self.confidence > 0.0 && self.confidence <= 1.0) {
            return Err(CoreError::InvalidTriple(format!("confidence {} outside (0, 1]", self.confidence)));
        }
        if self.retracted_at.is_some_and(|r| r <= self.asserted_at) {
            return Err(CoreError::InvalidTriple("retracted_at must follow asserted_at".into()));
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TripleKey {
    pub subject: String,
    pub predicate: String,
    pub object: String,
    pub asserted_at: i64,
}

/// A pattern with optional bound positions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriplePattern {
    #[serde(default)]
    pub subject: Option<String>,
    #[serde(default)]
    pub predicate: Option<String>,
    #[serde(default)]
    pub object: Option<String>,
}

impl TriplePattern {
    pub fn new(s: Option<&str>, p: Option<&str>, o: Option<&str>) -> Self {
        Self {
            subject: s.map(|x| normalize_term(x).to_owned()),
            predicate: p.map(str::to_owned),
            object: o.map(|x| normalize_term(x).to_owned()),
        }
    }

    pub fn matches(&self, t: &Triple) -> bool {
        self.subject.as_ref().is_none_or(|s| *s == t.subject)
            && self.predicate.as_ref().is_none_or(|p| *p == t.predicate)
            && self.object.as_ref().is_none_or(|o| *o == t.object)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexChoice {
    Auto,
    Spo,
    Pos,
    Osp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Out,
    In,
    #[default]
    Both,
}

type PosKey = (String, String, String, i64);

/// All triples ever asserted (live and retracted) with the three orderings.
#[derive(Debug, Clone, Default)]
pub struct TripleStore {
    spo: BTreeMap<TripleKey, Triple>,
    pos: BTreeSet<PosKey>,
    osp: BTreeSet<PosKey>,
}

fn string_range(prefix: &[&str]) -> (Bound<PosKey>, Bound<PosKey>) {
    let lo = (
        prefix.first().map_or(String::new(), |s| s.to_string()),
        prefix.get(1).map_or(String::new(), |s| s.to_string()),
        prefix.get(2).map_or(String::new(), |s| s.to_string()),
        i64::MIN,
    );
    // The successor of a bound string component: append the smallest char.
    let succ = |s: &str| format!("{s}\0");
    let hi = match prefix.len() {
        0 => return (Bound::Unbounded, Bound::Unbounded),
        1 => (succ(prefix[0]), String::new(), String::new(), i64::MIN),
        2 => (prefix[0].to_string(), succ(prefix[1]), String::new(), i64::MIN),
        _ => (prefix[0].to_string(), prefix[1].to_string(), succ(prefix[2]), i64::MIN),
    };
    (Bound::Included(lo), Bound::Excluded(hi))
}

impl TripleStore {
    pub fn len(&self) -> usize {
        self.spo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spo.is_empty()
    }

    pub fn get(&self, key: &TripleKey) -> Option<&Triple> {
        self.spo.get(key)
    }

    pub fn insert(&mut self, t: Triple) {
        let k = t.key();
        self.pos
            .insert((k.predicate.clone(), k.object.clone(), k.subject.clone(), k.asserted_at));
        self.osp
            .insert((k.object.clone(), k.subject.clone(), k.predicate.clone(), k.asserted_at));
        self.spo.insert(k, t);
    }

    pub fn all(&self) -> impl Iterator<Item = &Triple> {
        self.spo.values()
    }

    /// Live (s, p, o) triple, if any.
    pub fn live(&self, s: &str, p: &str, o: &str) -> Option<&Triple> {
        self.history(s, p, o).find(|t| t.is_live())
    }

    /// Every recorded triple with this (s, p, o), oldest first.
    pub fn history<'a>(&'a self, s: &str, p: &str, o: &str) -> impl Iterator<Item = &'a Triple> + 'a {
        let lo = TripleKey {
            subject: s.into(),
            predicate: p.into(),
            object: o.into(),
            asserted_at: i64::MIN,
        };
        let hi = TripleKey {
            asserted_at: i64::MAX,
            ..lo.clone()
        };
        self.spo.range(lo..=hi).map(|(_, t)| t)
    }

    fn pick(&self, pattern: &TriplePattern, index: IndexChoice) -> IndexChoice {
        if index != IndexChoice::Auto {
            return index;
        }
        match (&pattern.subject, &pattern.predicate, &pattern.object) {
            (Some(_), _, _) => IndexChoice::Spo,
            (None, Some(_), _) => IndexChoice::Pos,
            (None, None, Some(_)) => IndexChoice::Osp,
            (None, None, None) => IndexChoice::Spo,
        }
    }

    /// Candidate keys from one index, using the longest bound prefix it supports.
    fn candidates(&self, pattern: &TriplePattern, index: IndexChoice) -> Vec<TripleKey> {
        let (s, p, o) = (
            pattern.subject.as_deref(),
            pattern.predicate.as_deref(),
            pattern.object.as_deref(),
        );
        match self.pick(pattern, index) {
            IndexChoice::Spo | IndexChoice::Auto => {
                let prefix: Vec<&str> = [s, p, o].into_iter().map_while(|x| x).collect();
                let (lo, hi) = string_range(&prefix);
                let conv = |b: Bound<PosKey>| {
                    b.map(|(a, b, c, t)| TripleKey {
                        subject: a,
                        predicate: b,
                        object: c,
                        asserted_at: t,
                    })
                };
                self.spo.range((conv(lo), conv(hi))).map(|(k, _)| k.clone()).collect()
            }
            IndexChoice::Pos => {
                let prefix: Vec<&str> = [p, o, s].into_iter().map_while(|x| x).collect();
                self.pos
                    .range(string_range(&prefix))
                    .map(|(p, o, s, t)| TripleKey {
                        subject: s.clone(),
                        predicate: p.clone(),
                        object: o.clone(),
                        asserted_at: *t,
                    })
                    .collect()
            }
            IndexChoice::Osp => {
                let prefix: Vec<&str> = [o, s, p].into_iter().map_while(|x| x).collect();
                self.osp
                    .range(string_range(&prefix))
                    .map(|(o, s, p, t)| TripleKey {
                        subject: s.clone(),
                        predicate: p.clone(),
                        object: o.clone(),
                        asserted_at: *t,
                    })
                    .collect()
            }
        }
    }

    /// Triples matching `pattern` that are live at `as_of` (currently live
    /// when `None`), ordered by (s, p, o, asserted_at).
    pub fn query(&self, pattern: &TriplePattern, as_of: Option<i64>, index: IndexChoice) -> Vec<Triple> {
        let mut keys = self.candidates(pattern, index);
        keys.sort();
        keys.into_iter()
            .filter_map(|k| self.spo.get(&k))
            .filter(|t| pattern.matches(t))
            .filter(|t| as_of.map_or(t.is_live(), |at| t.live_at(at)))
            .cloned()
            .collect()
    }

    /// Breadth-first hop distances over live triples between entity nodes.
    pub fn neighbors(&self, entity: &str, max_depth: usize, direction: Direction) -> BTreeMap<String, usize> {
        let start = normalize_term(entity).to_owned();
        let mut dist = BTreeMap::from([(start.clone(), 0usize)]);
        let mut frontier = vec![start];
        for d in 1..=max_depth {
            let mut next = Vec::new();
            for node in &frontier {
                for nb in self.adjacent(node, direction) {
                    if !dist.contains_key(&nb) {
                        dist.insert(nb.clone(), d);
                        next.push(nb);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        dist
    }

    /// Distinct entity nodes adjacent to `node` through live triples.
    pub fn adjacent(&self, node: &str, direction: Direction) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        if matches!(direction, Direction::Out | Direction::Both) {
            for t in self.query(&TriplePattern::new(Some(node), None, None), None, IndexChoice::Spo) {
                if !is_literal(&t.object) && t.object != node {
                    out.insert(t.object);
                }
            }
        }
        if matches!(direction, Direction::In | Direction::Both) {
            for t in self.query(&TriplePattern::new(None, None, Some(node)), None, IndexChoice::Osp) {
                if t.subject != node {
                    out.insert(t.subject);
                }
            }
        }
        out
    }
}
