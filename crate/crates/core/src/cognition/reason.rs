//! Dual-path reasoning. The deductive path forward-chains Horn rules over the
//! live triples (semi-naive, bounded depth) and reads answers off the
//! saturated fact set. The heuristic path suggests the answer of the most
//! similar previously solved goal. Attempt order follows the strategy
//! weights; when both paths answer and disagree, the deductive answer wins
//! and the heuristic is penalised.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::knowledge::triple::{is_literal, normalize_term};
use crate::knowledge::{cosine_similarity, Case, Knowledge, Modality, RecordInput, Triple, TriplePattern};
use crate::scenario::embed::test_embed;

pub const MAX_PREMISES: usize = 5;

/// A ground (subject, predicate, object).
pub type Fact = (String, String, String);

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Var(String),
    Const(String),
}

impl Term {
    pub fn parse(s: &str) -> Self {
        match s.strip_prefix('?') {
            Some(v) => Term::Var(v.to_owned()),
            None => Term::Const(normalize_term(s).to_owned()),
        }
    }

    fn resolve<'a>(&'a self, b: &'a Bindings) -> Option<&'a str> {
        match self {
            Term::Const(c) => Some(c),
            Term::Var(v) => b.get(v).map(String::as_str),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => write!(f, "?{v}"),
            Term::Const(c) => f.write_str(c),
        }
    }
}

pub type Bindings = BTreeMap<String, String>;

/// A triple pattern with `?var` terms. Serialised as `["?x", "isA", "mushroom"]`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[String; 3]", into = "[String; 3]")]
pub struct Pattern {
    pub s: Term,
    pub p: Term,
    pub o: Term,
}

impl From<[String; 3]> for Pattern {
    fn from([s, p, o]: [String; 3]) -> Self {
        Pattern::new(&s, &p, &o)
    }
}

impl From<Pattern> for [String; 3] {
    fn from(p: Pattern) -> Self {
        [p.s.to_string(), p.p.to_string(), p.o.to_string()]
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.s, self.p, self.o)
    }
}

impl Pattern {
    pub fn new(s: &str, p: &str, o: &str) -> Self {
        Self {
            s: Term::parse(s),
            p: Term::parse(p),
            o: Term::parse(o),
        }
    }

    pub fn vars(&self) -> BTreeSet<&str> {
        [&self.s, &self.p, &self.o]
            .into_iter()
            .filter_map(|t| match t {
                Term::Var(v) => Some(v.as_str()),
                Term::Const(_) => None,
            })
            .collect()
    }

    /// Extends `b` so that this pattern equals `f`, if possible.
    pub fn unify(&self, f: &Fact, b: &Bindings) -> Option<Bindings> {
        let mut out = b.clone();
        for (t, v) in [(&self.s, &f.0), (&self.p, &f.1), (&self.o, &f.2)] {
            match t {
                Term::Const(c) if c != v => return None,
                Term::Const(_) => {}
                Term::Var(name) => match out.get(name) {
                    Some(bound) if bound != v => return None,
                    Some(_) => {}
                    None => {
                        out.insert(name.clone(), v.clone());
                    }
                },
            }
        }
        Some(out)
    }

    pub fn instantiate(&self, b: &Bindings) -> Option<Fact> {
        Some((
            self.s.resolve(b)?.to_owned(),
            self.p.resolve(b)?.to_owned(),
            self.o.resolve(b)?.to_owned(),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub id: String,
    pub premises: Vec<Pattern>,
    pub conclusion: Pattern,
    #[serde(default = "one")]
    pub confidence: f64,
}

fn one() -> f64 {
    1.0
}

impl Rule {
    /// Rules need 1..=5 premises, a confidence in (0, 1], and every
    /// conclusion variable bound by some premise.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::InvalidRule(format!("{}: {m}", self.id)));
        if self.premises.is_empty() || self.premises.len() > MAX_PREMISES {
            return bad(format!("needs 1..={MAX_PREMISES} premises"));
        }
        if !(self.confidence > 0.0 && self.confidence <= 1.0) {
            return bad(format!("confidence {} outside (0, 1]", self.confidence));
        }
        let bound: BTreeSet<&str> = self.premises.iter().flat_map(Pattern::vars).collect();
        if let Some(v) = self.conclusion.vars().into_iter().find(|v| !bound.contains(v)) {
            return bad(format!("conclusion variable ?{v} is not bound by a premise"));
        }
        Ok(())
    }
}

/// Parses a rule file: one JSON rule per line; blank lines and `#` comments skipped.
pub fn parse_rules(text: &str) -> Result<Vec<Rule>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let rule: Rule =
            serde_json::from_str(line).map_err(|e| CoreError::InvalidRule(format!("line {}: {e}", n + 1)))?;
        rule.validate()?;
        out.push(rule);
    }
    Ok(out)
}

/// How a fact entered the saturated set.
#[derive(Debug, Clone, PartialEq)]
pub struct FactInfo {
    pub confidence: f64,
    /// Round in which the fact was first derived; 0 for base facts.
    pub depth: usize,
    pub rule: Option<String>,
    pub premises: Vec<Fact>,
}

/// Forward chaining to a fixpoint, or to `max_depth` rounds. Each derived
/// fact keeps its first (shallowest) derivation; among derivations in the
/// same round the most confident wins. Confidence is the rule confidence
/// times the product of premise confidences.
pub fn forward_chain(base: &BTreeMap<Fact, f64>, rules: &[Rule], max_depth: Option<usize>) -> BTreeMap<Fact, FactInfo> {
    let mut all: BTreeMap<Fact, FactInfo> = base
        .iter()
        .map(|(f, &c)| {
            (
                f.clone(),
                FactInfo {
                    confidence: c,
                    depth: 0,
                    rule: None,
                    premises: Vec::new(),
                },
            )
        })
        .collect();
    let mut delta: BTreeSet<Fact> = all.keys().cloned().collect();
    let mut depth = 0;
    while !delta.is_empty() && max_depth.is_none_or(|m| depth < m) {
        depth += 1;
        let mut fresh: BTreeMap<Fact, FactInfo> = BTreeMap::new();
        for rule in rules {
            for pivot in 0..rule.premises.len() {
                let mut matches = Vec::new();
                join(&rule.premises, 0, pivot, &delta, &all, &Bindings::new(), &mut Vec::new(), &mut matches);
                for (b, used) in matches {
                    let Some(fact) = rule.conclusion.instantiate(&b) else { continue };
                    if all.contains_key(&fact) {
                        continue;
                    }
                    let conf = rule.confidence * used.iter().map(|f| all[f].confidence).product::<f64>();
                    let better = fresh.get(&fact).is_none_or(|cur| conf > cur.confidence);
                    if better {
                        fresh.insert(
                            fact,
                            FactInfo {
                                confidence: conf,
                                depth,
                                rule: Some(rule.id.clone()),
                                premises: used,
                            },
                        );
                    }
                }
            }
        }
        delta = fresh.keys().cloned().collect();
        all.extend(fresh);
    }
    all
}

/// Enumerates premise matches where premise `pivot` comes from `delta` and
/// the rest from `all`.
#[allow(clippy::too_many_arguments)]
fn join(
    premises: &[Pattern],
    i: usize,
    pivot: usize,
    delta: &BTreeSet<Fact>,
    all: &BTreeMap<Fact, FactInfo>,
    b: &Bindings,
    used: &mut Vec<Fact>,
    out: &mut Vec<(Bindings, Vec<Fact>)>,
) {
    if i == premises.len() {
        out.push((b.clone(), used.clone()));
        return;
    }
    let mut step = |f: &Fact| {
        if let Some(nb) = premises[i].unify(f, b) {
            used.push(f.clone());
            join(premises, i + 1, pivot, delta, all, &nb, used, out);
            used.pop();
        }
    };
    if i == pivot {
        delta.iter().for_each(&mut step);
    } else {
        all.keys().for_each(&mut step);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Heuristic,
    Deductive,
    None,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Heuristic => "heuristic",
            Strategy::Deductive => "deductive",
            Strategy::None => "none",
        }
    }
}

/// Proof tree for one answer fact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Derivation {
    pub fact: [String; 3],
    pub confidence: f64,
    /// Rule that produced the fact; absent for stored triples.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rule: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub premises: Vec<Derivation>,
}

fn derivation(fact: &Fact, sat: &BTreeMap<Fact, FactInfo>) -> Derivation {
    let info = &sat[fact];
    Derivation {
        fact: [fact.0.clone(), fact.1.clone(), fact.2.clone()],
        confidence: info.confidence,
        rule: info.rule.clone(),
        premises: info.premises.iter().map(|p| derivation(p, sat)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub bindings: Bindings,
    pub confidence: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Derivation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub bindings: Bindings,
    pub confidence: f64,
    /// The solved goal the suggestion came from.
    pub case_goal: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProofResult {
    pub answers: Vec<Answer>,
    pub strategy: Strategy,
    pub attempt_order: Vec<Strategy>,
    /// The heuristic suggestion disagreed with the deductive answers.
    pub conflict_logged: bool,
    /// Derived facts newly written as triples.
    pub derived_asserted: usize,
}

/// Text under which a goal is embedded and stored as a case.
pub fn goal_text(goal: &Pattern) -> String {
    goal.to_string()
}

fn goal_fact_matches(goal: &Pattern, sat: &BTreeMap<Fact, FactInfo>) -> Vec<Answer> {
    let mut by_binding: BTreeMap<Bindings, (f64, &Fact)> = BTreeMap::new();
    for (f, info) in sat {
        let Some(b) = goal.unify(f, &Bindings::new()) else { continue };
        match by_binding.get(&b) {
            Some((c, _)) if *c >= info.confidence => {}
            _ => {
                by_binding.insert(b, (info.confidence, f));
            }
        }
    }
    let mut answers: Vec<Answer> = by_binding
        .into_iter()
        .map(|(bindings, (confidence, f))| Answer {
            bindings,
            confidence,
            trace: Some(derivation(f, sat)),
        })
        .collect();
    answers.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then(a.bindings.cmp(&b.bindings)));
    answers
}

fn collect_derived(d: &Derivation, out: &mut BTreeMap<[String; 3], (f64, String)>) {
    if let Some(rule) = &d.rule {
        out.entry(d.fact.clone()).or_insert((d.confidence, rule.clone()));
        for p in &d.premises {
            collect_derived(p, out);
        }
    }
}

impl Knowledge {
    /// Live triples as ground facts with their confidence.
    pub fn fact_base(&self) -> BTreeMap<Fact, f64> {
        let mut base = BTreeMap::new();
        for t in self.state.read().triples.all().filter(|t| t.is_live()) {
            let c = base
                .entry((t.subject.clone(), t.predicate.clone(), t.object.clone()))
                .or_insert(0.0f64);
            *c = c.max(t.confidence);
        }
        base
    }

    /// Answer of the most similar solved goal, if any is similar at all.
    /// Only cases binding exactly the goal's variables are candidates.
    pub fn heuristic_suggest(&self, goal: &Pattern) -> Result<Option<Suggestion>> {
        let q = test_embed(&goal_text(goal), self.dim())?;
        let vars = goal.vars();
        let st = self.state.read();
        let best = st
            .cases
            .values()
            .filter(|c| c.answer.keys().map(String::as_str).collect::<BTreeSet<_>>() == vars)
            .filter_map(|c| cosine_similarity(&q, &c.embedding).ok().map(|s| (s, c)))
            .max_by(|(sa, a), (sb, b)| sa.total_cmp(sb).then(b.goal.cmp(&a.goal)));
        Ok(best.filter(|(s, _)| *s > 0.0).map(|(s, c)| Suggestion {
            bindings: c.answer.clone(),
            confidence: s,
            case_goal: c.goal.clone(),
        }))
    }

    /// Runs both reasoning paths for `goal` under `rules`.
    pub fn reason(&self, goal: &Pattern, rules: &[Rule], max_depth: Option<usize>) -> Result<ProofResult> {
        self.require_graph()?;
        for r in rules {
            r.validate()?;
        }
        let cfg = self.settings().cognition.clone();
        let weights = self.strategy_weights()?;
        let attempt_order = if weights.heuristic > weights.deductive {
            vec![Strategy::Heuristic, Strategy::Deductive]
        } else {
            vec![Strategy::Deductive, Strategy::Heuristic]
        };

        let suggestion = self.heuristic_suggest(goal)?;
        let sat = forward_chain(&self.fact_base(), rules, Some(max_depth.unwrap_or(cfg.reason_max_depth)));
        let deduced = goal_fact_matches(goal, &sat);

        if deduced.is_empty() {
            let Some(s) = suggestion else {
                return Ok(ProofResult {
                    answers: Vec::new(),
                    strategy: Strategy::None,
                    attempt_order,
                    conflict_logged: false,
                    derived_asserted: 0,
                });
            };
            return Ok(ProofResult {
                answers: vec![Answer {
                    bindings: s.bindings,
                    confidence: s.confidence * cfg.heuristic_only_factor,
                    trace: None,
                }],
                strategy: Strategy::Heuristic,
                attempt_order,
                conflict_logged: false,
                derived_asserted: 0,
            });
        }

        let conflict = suggestion
            .as_ref()
            .is_some_and(|s| !deduced.iter().any(|a| a.bindings == s.bindings));
        if conflict {
            self.reflect(&super::ReflectOutcome {
                task_id: goal_text(goal),
                strategy: Strategy::Heuristic.as_str().to_owned(),
                success: false,
            })?;
        }

        let mut derived = BTreeMap::new();
        for a in &deduced {
            if let Some(t) = &a.trace {
                collect_derived(t, &mut derived);
            }
        }
        let mut asserted = 0;
        for ([s, p, o], (conf, rule)) in derived {
            if is_literal(&s) {
                continue;
            }
            let t = Triple {
                provenance: vec![format!("derived:{rule}")],
                ..Triple::new(s, p, o).with_confidence(conf)
            };
            if self.assert_triple(t)?.created {
                asserted += 1;
            }
        }
        self.remember_case(goal, &deduced[0])?;
        Ok(ProofResult {
            answers: deduced,
            strategy: Strategy::Deductive,
            attempt_order,
            conflict_logged: conflict,
            derived_asserted: asserted,
        })
    }

    /// Stores (or reinforces) the solved goal as a case and as a structured record.
    fn remember_case(&self, goal: &Pattern, answer: &Answer) -> Result<()> {
        let text = goal_text(goal);
        let existing = self.state.read().cases.get(&text).cloned();
        let reinforce = self.settings().cognition.recall_reinforce;
        if let Some(case) = existing.as_ref().filter(|c| c.answer == answer.bindings) {
            if let Some(id) = case.record.filter(|id| self.peek_record(id).is_some_and(|r| !r.is_archived())) {
                self.reinforce(&id, reinforce)?;
                return Ok(());
            }
        }
        let content = crate::json::canonical(&serde_json::json!({
            "goal": text,
            "answer": answer.bindings,
            "confidence": answer.confidence,
        }))?;
        let (id, _) = self.upsert_record(
            RecordInput::new(Modality::Structured, content.into_bytes())
                .with_salience(answer.confidence.clamp(0.0, 1.0))
                .with_provenance(["reasoning"]),
        )?;
        for c in [&goal.s, &goal.o] {
            if let super::Term::Const(e) = c {
                if !is_literal(e) {
                    self.link_record_entity(&id, e)?;
                }
            }
        }
        self.put_case(Case {
            goal: text.clone(),
            answer: answer.bindings.clone(),
            record: Some(id),
            embedding: test_embed(&text, self.dim())?,
        })
    }

    /// Live triples matching a goal pattern with constants only in place of `?vars`.
    pub fn match_goal(&self, goal: &Pattern) -> Result<Vec<Triple>> {
        fn c(t: &Term) -> Option<&str> {
            match t {
                Term::Const(c) => Some(c),
                Term::Var(_) => None,
            }
        }
        self.query_triples(&TriplePattern::new(c(&goal.s), c(&goal.p), c(&goal.o)), None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fact(s: &str, p: &str, o: &str) -> Fact {
        (s.into(), p.into(), o.into())
    }

    fn rule(id: &str, premises: &[[&str; 3]], c: [&str; 3], conf: f64) -> Rule {
        Rule {
            id: id.into(),
            premises: premises.iter().map(|p| Pattern::new(p[0], p[1], p[2])).collect(),
            conclusion: Pattern::new(c[0], c[1], c[2]),
            confidence: conf,
        }
    }

    #[test]
    fn transitive_closure_with_depth() {
        let base: BTreeMap<Fact, f64> = [fact("a", "p", "b"), fact("b", "p", "c"), fact("c", "p", "d")]
            .into_iter()
            .map(|f| (f, 1.0))
            .collect();
        let rules = [rule("t", &[["?x", "p", "?y"], ["?y", "p", "?z"]], ["?x", "p", "?z"], 0.5)];
        let sat = forward_chain(&base, &rules, None);
        assert_eq!(sat.len(), 6);
        assert_eq!(sat[&fact("a", "p", "c")].depth, 1);
        assert_eq!(sat[&fact("a", "p", "c")].confidence, 0.5);
        assert_eq!(sat[&fact("a", "p", "d")].depth, 2);
        let bounded = forward_chain(&base, &rules, Some(1));
        assert_eq!(bounded.len(), 5);
    }

    #[test]
    fn rule_validation() {
        assert!(rule("ok", &[["?x", "p", "?y"]], ["?y", "q", "?x"], 1.0).validate().is_ok());
        assert!(rule("unsafe", &[["?x", "p", "b"]], ["?x", "q", "?z"], 1.0).validate().is_err());
        assert!(rule("conf", &[["?x", "p", "b"]], ["?x", "q", "c"], 0.0).validate().is_err());
        let six = [["?x", "p", "b"]; 6];
        assert!(rule("long", &six, ["?x", "q", "c"], 1.0).validate().is_err());
    }

    #[test]
    fn rule_file_round_trip() {
        let text = "# comment\n{\"id\":\"r1\",\"premises\":[[\"?x\",\"isA\",\"mushroom\"],[\"?x\",\"hasCap\",\"lit:red\"]],\"conclusion\":[\"?x\",\"isToxicRisk\",\"lit:high\"],\"confidence\":0.9}\n\n";
        let rules = parse_rules(text).unwrap();
        assert_eq!(rules.len(), 1);
        assert_eq!(rules[0].premises[1].o, Term::Const("lit:red".into()));
        let back = serde_json::to_string(&rules[0]).unwrap();
        assert!(back.contains("[\"?x\",\"isA\",\"mushroom\"]"));
        assert!(parse_rules("{\"id\":\"bad\"}").is_err());
    }
}
