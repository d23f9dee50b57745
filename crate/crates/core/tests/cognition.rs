//! Cognitive operations against independent oracles.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use colma_core::cognition::reason::{forward_chain, Fact, Pattern, Rule, Term};
use colma_core::cognition::update::{Decision, UpdateProposal};
use colma_core::cognition::Cue;
use colma_core::knowledge::{Direction, Knowledge, Modality, RecordInput, Triple, TriplePattern};
use colma_core::storage::{ManualClock, MICROS_PER_SECOND};
use colma_core::{Engine, EngineConfig, RecordId};

const T0: i64 = 1_700_000_000 * MICROS_PER_SECOND;

struct Env {
    _dir: tempfile::TempDir,
    clock: Arc<ManualClock>,
    engine: Engine,
}

fn env() -> Env {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = EngineConfig::with_dir(dir.path());
    cfg.store.sync_writes = false;
    let clock = Arc::new(ManualClock::new(T0));
    let engine = Engine::open_with_clock(cfg, clock.clone()).unwrap();
    Env { _dir: dir, clock, engine }
}

// ---- reasoning ----

fn random_term(rng: &mut StdRng, vars: &[&str], consts: &[&str], p_var: f64) -> String {
    if rng.random_bool(p_var) {
        format!("?{}", vars[rng.random_range(0..vars.len())])
    } else {
        consts[rng.random_range(0..consts.len())].to_string()
    }
}

fn random_instance(rng: &mut StdRng) -> (BTreeMap<Fact, f64>, Vec<Rule>) {
    let consts = ["a", "b", "c", "d", "e"];
    let preds = ["p", "q", "r", "s"];
    let mut base = BTreeMap::new();
    for _ in 0..rng.random_range(1..=50) {
        let f = (
            consts[rng.random_range(0..5)].to_string(),
            preds[rng.random_range(0..4)].to_string(),
            consts[rng.random_range(0..5)].to_string(),
        );
        base.insert(f, rng.random_range(1..=10) as f64 / 10.0);
    }
    let mut rules = Vec::new();
    for i in 0..rng.random_range(1..=5) {
        let n = rng.random_range(1..=3);
        let premises: Vec<Pattern> = (0..n)
            .map(|_| {
                let s = random_term(rng, &["x", "y", "z"], &consts, 0.8);
                let o = random_term(rng, &["x", "y", "z"], &consts, 0.8);
                Pattern::new(&s, preds[rng.random_range(0..4)], &o)
            })
            .collect();
        let bound: Vec<String> = premises.iter().flat_map(|p| p.vars().into_iter().map(str::to_owned)).collect();
        let pick = |rng: &mut StdRng| -> String {
            if !bound.is_empty() && rng.random_bool(0.85) {
                format!("?{}", bound[rng.random_range(0..bound.len())])
            } else {
                consts[rng.random_range(0..5)].to_string()
            }
        };
        let conclusion = Pattern::new(&pick(rng), preds[rng.random_range(0..4)], &pick(rng));
        let rule = Rule {
            id: format!("r{i}"),
            premises,
            conclusion,
            confidence: rng.random_range(1..=10) as f64 / 10.0,
        };
        rule.validate().unwrap();
        rules.push(rule);
    }
    (base, rules)
}

/// Naive saturation: apply every rule to the whole set until nothing changes.
fn saturate(base: &BTreeSet<Fact>, rules: &[Rule]) -> BTreeSet<Fact> {
    fn matches(ps: &[Pattern], facts: &BTreeSet<Fact>, b: BTreeMap<String, String>, out: &mut Vec<BTreeMap<String, String>>) {
        let Some((first, rest)) = ps.split_first() else {
            out.push(b);
            return;
        };
        for f in facts {
            let mut nb = b.clone();
            let ok = [(&first.s, &f.0), (&first.p, &f.1), (&first.o, &f.2)].into_iter().all(|(t, v)| match t {
                Term::Const(c) => c == v,
                Term::Var(x) => match nb.get(x) {
                    Some(bound) => bound == v,
                    None => {
                        nb.insert(x.clone(), v.clone());
                        true
                    }
                },
            });
            if ok {
                matches(rest, facts, nb, out);
            }
        }
    }
    let mut facts = base.clone();
    loop {
        let mut added = false;
        for r in rules {
            let mut bs = Vec::new();
            matches(&r.premises, &facts, BTreeMap::new(), &mut bs);
            for b in bs {
                let term = |t: &Term| match t {
                    Term::Const(c) => c.clone(),
                    Term::Var(x) => b[x].clone(),
                };
                let f = (term(&r.conclusion.s), term(&r.conclusion.p), term(&r.conclusion.o));
                added |= facts.insert(f);
            }
        }
        if !added {
            return facts;
        }
    }
}

#[test]
fn forward_chaining_equals_naive_saturation() {
    let mut rng = StdRng::seed_from_u64(2024);
    for _ in 0..200 {
        let (base, rules) = random_instance(&mut rng);
        let sat = forward_chain(&base, &rules, None);
        let got: BTreeSet<Fact> = sat.keys().cloned().collect();
        let want = saturate(&base.keys().cloned().collect(), &rules);
        assert_eq!(got, want);
        // Soundness: every derived fact rests on facts derived strictly earlier.
        for (f, info) in &sat {
            if info.depth == 0 {
                assert!(base.contains_key(f));
                continue;
            }
            let rule = rules.iter().find(|r| Some(&r.id) == info.rule.as_ref()).unwrap();
            let prod: f64 = info.premises.iter().map(|p| sat[p].confidence).product();
            assert!((info.confidence - rule.confidence * prod).abs() < 1e-12);
            assert!(info.premises.iter().all(|p| sat[p].depth < info.depth));
        }
    }
}

#[test]
fn mushroom_rule_derives_and_asserts() {
    let env = env();
    let kb = env.engine.namespace("s1").unwrap();
    kb.assert_triple(Triple::new("m1", "isA", "mushroom")).unwrap();
    kb.assert_triple(Triple::new("m1", "hasFeature", "redCap")).unwrap();
    let rule = Rule {
        id: "toxic".into(),
        premises: vec![Pattern::new("?x", "isA", "mushroom"), Pattern::new("?x", "hasFeature", "redCap")],
        conclusion: Pattern::new("?x", "isToxicRisk", "lit:high"),
        confidence: 0.9,
    };
    let goal = Pattern::new("?x", "isToxicRisk", "lit:high");
    let proof = kb.reason(&goal, &[rule], None).unwrap();
    assert_eq!(proof.answers.len(), 1);
    assert_eq!(proof.answers[0].bindings["x"], "m1");
    assert_eq!(proof.derived_asserted, 1);
    let t = kb.query_triples(&TriplePattern::new(Some("m1"), Some("isToxicRisk"), None), None).unwrap();
    assert_eq!(t.len(), 1);
    assert!((t[0].confidence - 0.9).abs() < 1e-12);
    // Empty rule set: answers come only from stored triples.
    let direct = kb.reason(&Pattern::new("m1", "hasFeature", "?f"), &[], None).unwrap();
    assert_eq!(direct.answers.len(), 1);
    // Nothing deduces a smell; the only answer is the discounted analogy to
    // the solved hasFeature goal.
    let guess = kb.reason(&Pattern::new("m1", "smells", "?f"), &[], None).unwrap();
    assert_eq!(guess.strategy, colma_core::cognition::Strategy::Heuristic);
    assert_eq!(guess.answers[0].bindings["f"], "redCap");
    assert!(guess.answers[0].confidence <= 0.5 && guess.answers[0].trace.is_none());
    assert!(kb.reason(&Pattern::new("m1", "smells", "?g"), &[], None).unwrap().answers.is_empty());
}

#[test]
fn heuristic_suggest_matches_exact_knn() {
    let env = env();
    let kb = env.engine.namespace("cases").unwrap();
    let goal = Pattern::new("?p", "solvedWith", "?e");
    assert!(kb.heuristic_suggest(&goal).unwrap().is_none());
    let mut rng = StdRng::seed_from_u64(8);
    for i in 0..20 {
        let s = format!("task{i}");
        kb.assert_triple(Triple::new(&s, "kind", format!("k{}", rng.random_range(0..4)))).unwrap();
        kb.reason(&Pattern::new(&s, "kind", "?k"), &[], None).unwrap();
    }
    let cases = kb.cases();
    assert_eq!(cases.len(), 20);
    for i in [0, 7, 19, 25] {
        let q = Pattern::new(&format!("task{i}"), "kind", "?k");
        let qv = colma_core::scenario::test_embed(&q.to_string(), kb.dim()).unwrap();
        let best = cases
            .iter()
            .map(|c| {
                let e = colma_core::scenario::test_embed(&c.goal, kb.dim()).unwrap();
                (colma_core::knowledge::cosine_similarity(&qv, &e).unwrap(), c)
            })
            .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.goal.cmp(&a.1.goal)))
            .unwrap();
        let s = kb.heuristic_suggest(&q).unwrap().unwrap();
        assert_eq!(s.case_goal, best.1.goal);
        assert!((s.confidence - best.0).abs() < 1e-12);
        if i < 20 {
            assert!((s.confidence - 1.0).abs() < 1e-6);
        }
    }
}

// ---- association ----

fn path_sum_oracle(edges: &BTreeSet<(String, String)>, seeds: &[String], hops: usize, decay: f64) -> BTreeMap<String, f64> {
    // Enumerate every simple path explicitly, breadth-first by length.
    let mut act: BTreeMap<String, f64> = BTreeMap::new();
    for s in seeds {
        *act.entry(s.clone()).or_default() += 1.0;
        let mut paths: Vec<Vec<String>> = vec![vec![s.clone()]];
        for len in 1..=hops {
            let mut next = Vec::new();
            for p in &paths {
                let end = p.last().unwrap();
                for (a, b) in edges {
                    let other = if a == end { b } else if b == end { a } else { continue };
                    if p.contains(other) {
                        continue;
                    }
                    let mut q = p.clone();
                    q.push(other.clone());
                    *act.entry(other.clone()).or_default() += decay.powi(len as i32);
                    next.push(q);
                }
            }
            paths = next;
        }
    }
    act.into_iter().map(|(k, v)| (k, v.min(1.0))).collect()
}

#[test]
fn association_equals_path_sum_oracle() {
    let mut rng = StdRng::seed_from_u64(55);
    for round in 0..20 {
        let env = env();
        let kb = env.engine.namespace("graph").unwrap();
        let n_nodes = rng.random_range(5..25);
        let mut edges = BTreeSet::new();
        for _ in 0..rng.random_range(1..=100) {
            let a = format!("v{}", rng.random_range(0..n_nodes));
            let b = format!("v{}", rng.random_range(0..n_nodes));
            let p = ["r", "s"][rng.random_range(0..2)];
            kb.assert_triple(Triple::new(&a, p, &b)).unwrap();
            if a != b {
                edges.insert(if a < b { (a, b) } else { (b, a) });
            }
        }
        kb.assert_triple(Triple::new("v0", "label", "lit:zero")).unwrap();
        // Retracted edges do not conduct.
        let (ra, rb) = edges.iter().next().cloned().unwrap_or_default();
        let mut removed = false;
        for p in ["r", "s"] {
            for (x, y) in [(&ra, &rb), (&rb, &ra)] {
                removed |= kb.retract_triple(x, p, y, None).unwrap();
            }
        }
        if removed {
            edges.remove(&(ra.clone(), rb.clone()));
        }
        let seeds: Vec<String> = (0..rng.random_range(1..3)).map(|_| format!("v{}", rng.random_range(0..n_nodes))).collect();
        let mut want = path_sum_oracle(&edges, &seeds.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect::<Vec<_>>(), 3, 0.5);
        want.retain(|_, v| *v > 0.0);
        let got = kb.associate(&Cue::entities(seeds.clone()), 10_000).unwrap();
        assert_eq!(got.len(), want.len(), "round {round}");
        for a in &got {
            assert!((a.activation - want[&a.node]).abs() < 1e-9, "round {round} node {}", a.node);
            assert!(a.activation > 0.0 && a.activation <= 1.0);
        }
        assert!(got.windows(2).all(|w| w[0].activation > w[1].activation
            || (w[0].activation == w[1].activation && w[0].node < w[1].node)));
    }
}

#[test]
fn association_examples() {
    let env = env();
    let kb = env.engine.namespace("chain").unwrap();
    kb.assert_triple(Triple::new("a", "next", "b")).unwrap();
    kb.assert_triple(Triple::new("b", "next", "c")).unwrap();
    let got = kb.associate(&Cue::entities(["a"]), 10).unwrap();
    let m: BTreeMap<&str, f64> = got.iter().map(|a| (a.node.as_str(), a.activation)).collect();
    assert_eq!(m, BTreeMap::from([("a", 1.0), ("b", 0.5), ("c", 0.25)]));
    let lone = kb.associate(&Cue::entities(["island"]), 10).unwrap();
    assert_eq!(lone.len(), 1);
    assert_eq!(lone[0].activation, 1.0);
    assert!(kb.associate(&Cue { text_tokens: vec!["x".into()], ..Cue::default() }, 5).is_err());
}

// ---- recall ----

#[test]
fn recall_edge_cases() {
    let env = env();
    let kb = env.engine.namespace("recall").unwrap();
    assert!(kb.recall(&Cue::default(), None, None).is_err());
    let cue = Cue { text_tokens: vec!["anything".into()], slots: vec!["what".into()], ..Cue::default() };
    let r = kb.recall(&cue, None, None).unwrap();
    assert_eq!((r.completeness, r.rounds_used), (0.0, 1));

    let (id, _) = kb
        .upsert_record(RecordInput::new(Modality::Structured, br#"{"what":"picnic"}"#.to_vec()).with_embedding(colma_core::scenario::test_embed("picnic", 64).unwrap()))
        .unwrap();
    let cue = Cue { text_tokens: vec!["picnic".into()], slots: vec!["what".into()], ..Cue::default() };
    let r = kb.recall(&cue, None, None).unwrap();
    assert_eq!(r.completeness, 1.0);
    assert_eq!(r.coherence, 1.0);
    assert_eq!(r.filled_slots["what"].record, id);
    // Recall strengthens what it used.
    assert!(kb.peek_record(&id).unwrap().access_count >= 1);
}

#[test]
fn recall_expands_through_association() {
    let env = env();
    let kb = env.engine.namespace("expand").unwrap();
    let where_ = RecordInput::new(Modality::Structured, br#"{"where":"lake house"}"#.to_vec());
    let (w, _) = kb.upsert_record(where_).unwrap();
    let (who, _) = kb.upsert_record(RecordInput::new(Modality::Structured, br#"{"who":"Marie"}"#.to_vec())).unwrap();
    kb.link_record_entity(&w, "party").unwrap();
    kb.link_record_entity(&who, "party").unwrap();
    // The cue only reaches the first record; the second is one association away.
    let cue = Cue { text_tokens: vec!["lake".into()], slots: vec!["where".into(), "who".into()], ..Cue::default() };
    let r = kb.recall(&cue, Some(1), None).unwrap();
    assert_eq!(r.completeness, 0.5);
    let r = kb.recall(&cue, None, None).unwrap();
    assert_eq!(r.completeness, 1.0);
    assert!(r.rounds_used >= 2);
}

// ---- prediction and reflection ----

#[test]
fn prediction_over_streams() {
    let env = env();
    let kb = env.engine.namespace("pred").unwrap();
    for (i, l) in ["A", "B", "A", "B", "A"].iter().enumerate() {
        kb.append_event("s", l, T0 + i as i64).unwrap();
    }
    let p = kb.predict("s", &["A".into()]).unwrap().unwrap();
    assert_eq!((p.label.as_str(), p.confidence), ("B", 1.0));
    assert!(kb.predict("missing", &["A".into()]).unwrap().is_none());
    kb.append_event("one", "X", T0).unwrap();
    assert!(kb.predict("one", &["X".into()]).unwrap().is_none());
}

#[test]
fn reflection_weights_persist() {
    let env = env();
    let kb = env.engine.namespace("reflect").unwrap();
    let ok = |s: &str, success| colma_core::cognition::ReflectOutcome { task_id: "t".into(), strategy: s.into(), success };
    let w = kb.reflect(&ok("heuristic", true)).unwrap();
    assert!((w.heuristic - 0.6).abs() < 1e-12);
    let w = kb.reflect(&ok("deductive", false)).unwrap();
    assert!((w.deductive - 0.4).abs() < 1e-12);
    assert!(kb.reflect(&ok("guessing", true)).is_err());
    kb.reload().unwrap();
    let w = kb.strategy_weights().unwrap();
    assert!((w.heuristic - 0.6).abs() < 1e-12 && (w.deductive - 0.4).abs() < 1e-12);
}

// ---- continual update ----

/// Straight-line re-implementation of the verification scorer.
fn oracle_decision(kb: &Knowledge, p: &UpdateProposal, old: &Triple) -> (Decision, f64) {
    let s = &p.triple.subject;
    let nodes = kb.neighbors(s, 2, Direction::Both).unwrap();
    let mut touched: BTreeMap<_, Triple> = BTreeMap::new();
    for t in kb.all_triples().into_iter().filter(|t| t.is_live()) {
        if (nodes.contains_key(&t.subject) || nodes.contains_key(&t.object)) && !(t.subject == *s && t.predicate == p.triple.predicate) {
            touched.insert(t.key(), t);
        }
    }
    let evidence: BTreeSet<&String> = p.evidence.iter().collect();
    let mut with = 0;
    let mut shared = 0;
    for t in touched.values() {
        let mut src: BTreeSet<String> = t.provenance.iter().cloned().collect();
        if let Some(r) = t.source_record.and_then(|id| kb.peek_record(&id)) {
            src.extend(r.provenance);
        }
        if src.is_empty() {
            continue;
        }
        with += 1;
        if src.iter().any(|x| evidence.contains(x)) {
            shared += 1;
        }
    }
    let corr = if with == 0 { 0.5 } else { shared as f64 / with as f64 };
    let q = (f64::from(u8::from(p.evidence.iter().all(|e| !e.trim().is_empty())))
        + f64::from(u8::from(p.source_record.is_some_and(|id| kb.peek_record(&id).is_some()))))
        / 2.0;
    let (ev, o) = (p.evidence_confidence, old.confidence);
    let sn = ev * corr;
    let so = o * (1.0 - corr);
    let replace = if sn + so * (1.0 - ev) > 0.0 { sn / (sn + so * (1.0 - ev)) } else { 0.0 };
    let keep = if so + sn * (1.0 - o) > 0.0 { so / (so + sn * (1.0 - o)) } else { 0.0 };
    let coexist = 1.0 - (replace - keep).abs();
    if keep * q >= 0.7 {
        (Decision::Rejected, keep)
    } else if replace * q >= 0.7 {
        (Decision::Replaced, replace)
    } else if coexist * q >= 0.7 {
        (Decision::Coexists, coexist)
    } else {
        (Decision::Rejected, replace.max(keep).max(coexist))
    }
}

#[test]
fn napoleon_is_replaced_with_history() {
    let env = env();
    let kb = env.engine.namespace("history").unwrap();
    let (src, _) = kb.upsert_record(RecordInput::text("a new biography").with_provenance(["biography"])).unwrap();
    kb.assert_triple(Triple::new("Napoleon", "defeatCause", "lit:stubbornness").with_confidence(0.5)).unwrap();
    let before = env.clock.advance(MICROS_PER_SECOND);
    env.clock.advance(MICROS_PER_SECOND);
    let proposal = UpdateProposal {
        triple: Triple::new("Napoleon", "defeatCause", "lit:intelligenceFailure"),
        evidence: vec!["biography".into()],
        evidence_confidence: 0.9,
        source_record: Some(src),
    };
    let out = kb.update_memory(&proposal, None, None, None).unwrap();
    assert_eq!(out.decision, Decision::Replaced);
    assert!((out.consistency - 0.45 / 0.475).abs() < 1e-12);
    assert_eq!(out.new_version.as_ref().unwrap().version, 2);
    let pat = TriplePattern::new(Some("Napoleon"), Some("defeatCause"), None);
    assert_eq!(kb.query_triples(&pat, Some(before)).unwrap()[0].object, "lit:stubbornness");
    assert_eq!(kb.query_triples(&pat, None).unwrap()[0].object, "lit:intelligenceFailure");

    // Same proposal again: reinforcement, no new version.
    let n = kb.all_triples().len();
    let again = kb.update_memory(&proposal, None, None, None).unwrap();
    assert_eq!(again.decision, Decision::Reinforced);
    assert!(again.new_version.is_none());
    assert_eq!(kb.all_triples().len(), n);

    let bad = UpdateProposal { evidence: vec![], ..proposal };
    assert!(kb.update_memory(&bad, None, None, None).is_err());
}

#[test]
fn update_decisions_match_oracle() {
    let mut rng = StdRng::seed_from_u64(4242);
    let sources = ["archive", "diary", "press", "letters"];
    let mut seen = BTreeSet::new();
    for round in 0..150 {
        let env = env();
        let kb = env.engine.namespace("upd").unwrap();
        let mut recs: Vec<RecordId> = Vec::new();
        for i in 0..3 {
            let prov: Vec<&str> = sources.iter().copied().filter(|_| rng.random_bool(0.4)).collect();
            recs.push(kb.upsert_record(RecordInput::text(format!("doc {i}")).with_provenance(prov)).unwrap().0);
        }
        let old_conf = rng.random_range(1..=10) as f64 / 10.0;
        let old = Triple::new("subj", "attr", "lit:old").with_confidence(old_conf);
        kb.assert_triple(old.clone()).unwrap();
        for _ in 0..rng.random_range(0..8) {
            let a = ["subj", "n1", "n2", "n3"][rng.random_range(0..4)];
            let b = ["n1", "n2", "n3", "n4", "lit:v"][rng.random_range(0..5)];
            let mut t = Triple::new(a, ["x", "y"][rng.random_range(0..2)], b);
            if rng.random_bool(0.5) {
                t.provenance = vec![sources[rng.random_range(0..4)].to_string()];
            }
            if rng.random_bool(0.3) {
                t.source_record = Some(recs[rng.random_range(0..3)]);
            }
            kb.assert_triple(t).unwrap();
        }
        env.clock.advance(MICROS_PER_SECOND);
        let proposal = UpdateProposal {
            triple: Triple::new("subj", "attr", "lit:new"),
            evidence: (0..rng.random_range(1..3)).map(|_| sources[rng.random_range(0..4)].to_string()).collect(),
            evidence_confidence: rng.random_range(1..=10) as f64 / 10.0,
            source_record: rng.random_bool(0.7).then(|| recs[0]),
        };
        let stored_old = kb.query_triples(&TriplePattern::new(Some("subj"), Some("attr"), None), None).unwrap()[0].clone();
        let (want, c) = oracle_decision(&kb, &proposal, &stored_old);
        let before = kb.all_triples().len();
        let out = kb.update_memory(&proposal, None, None, None).unwrap();
        assert_eq!(out.decision, want, "round {round}");
        assert!((out.consistency - c).abs() < 1e-12, "round {round}");
        seen.insert(format!("{want:?}"));
        let after = kb.all_triples();
        match want {
            Decision::Rejected => assert_eq!(after.len(), before),
            _ => assert_eq!(after.len(), before + 1),
        }
    }
    assert!(seen.len() >= 2, "fixtures only produced {seen:?}");
}

#[test]
fn validator_rounds_can_flip_a_rejection() {
    let env = env();
    let kb = env.engine.namespace("val").unwrap();
    let (src, _) = kb.upsert_record(RecordInput::text("memo").with_provenance(["memo"])).unwrap();
    kb.assert_triple(Triple::new("x", "is", "lit:a").with_confidence(0.9)).unwrap();
    let p = UpdateProposal {
        triple: Triple::new("x", "is", "lit:b"),
        evidence: vec!["memo".into()],
        evidence_confidence: 0.6,
        source_record: Some(src),
    };
    let without = {
        let env2 = self::env();
        let kb2 = env2.engine.namespace("val").unwrap();
        let (s2, _) = kb2.upsert_record(RecordInput::text("memo").with_provenance(["memo"])).unwrap();
        kb2.assert_triple(Triple::new("x", "is", "lit:a").with_confidence(0.9)).unwrap();
        kb2.update_memory(&UpdateProposal { source_record: Some(s2), ..p.clone() }, None, None, None).unwrap()
    };
    assert_eq!(without.verification_rounds, 1);
    let yes = |_: &UpdateProposal, _: &Triple| 1.0;
    let with = kb.update_memory(&p, None, None, Some(&yes)).unwrap();
    assert!(with.verification_rounds >= 1 && with.verification_rounds <= 3);
    assert!(with.corroboration > without.corroboration);
}
