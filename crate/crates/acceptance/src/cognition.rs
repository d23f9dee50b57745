//! Reasoning, association and continual update.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use colma_core::cognition::reason::{forward_chain, Fact, Pattern, Rule, Term};
use colma_core::cognition::{Cue, Decision, UpdateProposal};
use colma_core::json::canonical;
use colma_core::knowledge::{Modality, RecordInput, Triple, TriplePattern};
use colma_core::storage::{ManualClock, MICROS_PER_SECOND};
use colma_core::{Engine, EngineConfig, RecordId};

use crate::{ensure, ok, Outcome};

const T0: i64 = 1_700_000_000 * MICROS_PER_SECOND;

struct Env {
    _dir: tempfile::TempDir,
    clock: Arc<ManualClock>,
    engine: Engine,
}

fn env() -> Result<Env, String> {
    let dir = ok(tempfile::tempdir(), "tempdir")?;
    let mut cfg = EngineConfig::with_dir(dir.path());
    cfg.store.sync_writes = false;
    let clock = Arc::new(ManualClock::new(T0));
    let engine = ok(Engine::open_with_clock(cfg, clock.clone()), "open")?;
    Ok(Env { _dir: dir, clock, engine })
}

// ---- reasoning ----

const CONSTS: [&str; 5] = ["a", "b", "c", "d", "e"];
const PREDS: [&str; 4] = ["p", "q", "r", "s"];

fn random_term(rng: &mut StdRng, p_var: f64) -> String {
    if rng.random_bool(p_var) {
        format!("?{}", ["x", "y", "z"][rng.random_range(0..3)])
    } else {
        CONSTS[rng.random_range(0..5)].to_string()
    }
}

fn random_instance(rng: &mut StdRng) -> Result<(BTreeMap<Fact, f64>, Vec<Rule>), String> {
    let mut base = BTreeMap::new();
    for _ in 0..rng.random_range(1..=50) {
        let f = (
            CONSTS[rng.random_range(0..5)].to_string(),
            PREDS[rng.random_range(0..4)].to_string(),
            CONSTS[rng.random_range(0..5)].to_string(),
        );
        base.insert(f, rng.random_range(1..=10) as f64 / 10.0);
    }
    let mut rules = Vec::new();
    for i in 0..rng.random_range(1..=5) {
        let premises: Vec<Pattern> = (0..rng.random_range(1..=3))
            .map(|_| {
                let s = random_term(rng, 0.8);
                let o = random_term(rng, 0.8);
                Pattern::new(&s, PREDS[rng.random_range(0..4)], &o)
            })
            .collect();
        let bound: Vec<String> = premises.iter().flat_map(|p| p.vars().into_iter().map(str::to_owned)).collect();
        let pick = |rng: &mut StdRng| {
            if !bound.is_empty() && rng.random_bool(0.85) {
                format!("?{}", bound[rng.random_range(0..bound.len())])
            } else {
                CONSTS[rng.random_range(0..5)].to_string()
            }
        };
        let (s, o) = (pick(rng), pick(rng));
        let rule = Rule {
            id: format!("r{i}"),
            premises,
            conclusion: Pattern::new(&s, PREDS[rng.random_range(0..4)], &o),
            confidence: rng.random_range(1..=10) as f64 / 10.0,
        };
        ok(rule.validate(), "generated rule")?;
        rules.push(rule);
    }
    Ok((base, rules))
}

/// Naive saturation: every rule against the whole set until nothing changes.
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
                added |= facts.insert((term(&r.conclusion.s), term(&r.conclusion.p), term(&r.conclusion.o)));
            }
        }
        if !added {
            return facts;
        }
    }
}

/// 200 random instances (up to 50 base facts, up to 5 rules of up to 3
/// premises). The forward-chaining closure must equal naive saturation, and
/// every derived fact must carry a sound trace. Every tenth instance also goes
/// through `reason` on a fresh namespace, whose answers must be exactly the
/// saturated facts matching the goal.
pub fn reasoning_fixpoint() -> Outcome {
    let mut rng = StdRng::seed_from_u64(2024);
    let (mut derived_total, mut end_to_end) = (0, 0);
    for inst in 0..200 {
        let (base, rules) = random_instance(&mut rng)?;
        let sat = forward_chain(&base, &rules, None);
        let want = saturate(&base.keys().cloned().collect(), &rules);
        let got: BTreeSet<Fact> = sat.keys().cloned().collect();
        ensure!(got == want, "instance {inst}: closure differs ({} vs {} facts)", got.len(), want.len());
        derived_total += want.len() - base.len();
        for (f, info) in &sat {
            if info.depth == 0 {
                ensure!(base.contains_key(f), "instance {inst}: {f:?} at depth 0 is not a base fact");
                continue;
            }
            let Some(rule) = rules.iter().find(|r| Some(&r.id) == info.rule.as_ref()) else {
                return Err(format!("instance {inst}: {f:?} names unknown rule {:?}", info.rule));
            };
            let prod: f64 = info.premises.iter().map(|p| sat[p].confidence).product();
            ensure!((info.confidence - rule.confidence * prod).abs() < 1e-12, "instance {inst}: confidence of {f:?}");
            ensure!(info.premises.iter().all(|p| sat[p].depth < info.depth), "instance {inst}: trace of {f:?} is not well founded");
        }

        if inst % 10 == 0 {
            let env = env()?;
            let kb = ok(env.engine.namespace("reason"), "namespace")?;
            for ((s, p, o), c) in &base {
                ok(kb.assert_triple(Triple::new(s, p, o).with_confidence(*c)), "assert")?;
            }
            let pred = PREDS[rng.random_range(0..4)];
            let proof = ok(kb.reason(&Pattern::new("?x", pred, "?y"), &rules, Some(1000)), "reason")?;
            let got: BTreeSet<(String, String)> =
                proof.answers.iter().map(|a| (a.bindings["x"].clone(), a.bindings["y"].clone())).collect();
            let want: BTreeSet<(String, String)> =
                want.iter().filter(|f| f.1 == pred).map(|f| (f.0.clone(), f.2.clone())).collect();
            ensure!(got == want, "instance {inst}: reason answers {got:?}, saturation {want:?}");
            end_to_end += 1;
        }
    }
    Ok(format!("200 instances equal to naive saturation ({derived_total} derived facts), {end_to_end} checked end to end"))
}

// ---- association ----

/// Enumerates every simple path of up to `hops` edges explicitly.
fn path_sum_oracle(edges: &BTreeSet<(String, String)>, seeds: &BTreeSet<String>, hops: usize, decay: f64) -> BTreeMap<String, f64> {
    let mut act: BTreeMap<String, f64> = BTreeMap::new();
    for s in seeds {
        *act.entry(s.clone()).or_default() += 1.0;
        let mut paths: Vec<Vec<String>> = vec![vec![s.clone()]];
        for len in 1..=hops {
            let mut next = Vec::new();
            for p in &paths {
                let end = &p[p.len() - 1];
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

/// 50 random graphs of up to 100 edges, some retracted. Activations for
/// random seed sets must equal clamped simple-path sums (3 hops, decay 0.5)
/// within 1e-9, in descending order with name tie-breaks.
pub fn association() -> Outcome {
    let mut rng = StdRng::seed_from_u64(55);
    let mut compared = 0;
    for round in 0..50 {
        let env = env()?;
        let kb = ok(env.engine.namespace("graph"), "namespace")?;
        let n_nodes = rng.random_range(5..25);
        let mut edges = BTreeSet::new();
        let mut stored = Vec::new();
        for _ in 0..rng.random_range(1..=100) {
            let a = format!("v{}", rng.random_range(0..n_nodes));
            let b = format!("v{}", rng.random_range(0..n_nodes));
            let p = ["r", "s"][rng.random_range(0..2)];
            ok(kb.assert_triple(Triple::new(&a, p, &b)), "assert")?;
            stored.push((a, p, b));
        }
        // Literal objects are not nodes.
        ok(kb.assert_triple(Triple::new("v0", "label", "lit:zero")), "assert")?;
        for _ in 0..rng.random_range(0..5) {
            let (a, p, b) = &stored[rng.random_range(0..stored.len())];
            ok(kb.retract_triple(a, p, b, None), "retract")?;
        }
        for t in kb.all_triples().into_iter().filter(|t| t.is_live() && t.predicate != "label") {
            if t.subject != t.object {
                let (a, b) = (t.subject.clone(), t.object.clone());
                edges.insert(if a < b { (a, b) } else { (b, a) });
            }
        }
        let seeds: BTreeSet<String> = (0..rng.random_range(1..4)).map(|_| format!("v{}", rng.random_range(0..n_nodes))).collect();
        let want = path_sum_oracle(&edges, &seeds, 3, 0.5);
        let got = ok(kb.associate(&Cue::entities(seeds.clone()), 10_000), "associate")?;
        ensure!(got.len() == want.len(), "round {round}: {} activated nodes, oracle {}", got.len(), want.len());
        for a in &got {
            let Some(w) = want.get(&a.node) else {
                return Err(format!("round {round}: unexpected node {}", a.node));
            };
            ensure!((a.activation - w).abs() < 1e-9, "round {round}: {} has {} want {w}", a.node, a.activation);
        }
        ensure!(
            got.windows(2).all(|w| w[0].activation > w[1].activation
                || (w[0].activation == w[1].activation && w[0].node < w[1].node)),
            "round {round}: activations out of order"
        );
        compared += got.len();
    }
    Ok(format!("50 graphs, {compared} activations within 1e-9 of path sums"))
}

// ---- stability and plasticity ----

const SUBJECTS: usize = 100;
const CONTROLS: usize = 50;

/// One stored belief in the shadow timeline.
struct Belief {
    object: String,
    from: i64,
    to: Option<i64>,
    confidence: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Step {
    Novel,
    Repeat,
    Conflict,
}

fn control_cue(k: usize) -> Cue {
    Cue {
        text_tokens: vec![format!("kw{k}")],
        entities: vec![format!("ctl{k}")],
        slots: vec![format!("control{k}")],
        ..Cue::default()
    }
}

/// 1000 updates: 700 novel beliefs, 200 repeats, 100 conflicting values that
/// corroborated evidence should replace, with record revisions in between.
/// Every decision must match the expected one, every belief interval must be
/// queryable as of its start and end, every logged record version must be
/// retrievable, and 50 unrelated control memories must recall identically
/// before and after.
pub fn stability_plasticity() -> Outcome {
    let env = env()?;
    let kb = ok(env.engine.namespace("continual"), "namespace")?;
    let tick = || env.clock.advance(MICROS_PER_SECOND);
    let mut rng = StdRng::seed_from_u64(606);

    // Controls.
    let mut controls = Vec::new();
    for k in 0..CONTROLS {
        let body = format!(r#"{{"control{k}":"kw{k} value {k}"}}"#);
        let (id, _) = ok(kb.upsert_record(RecordInput::new(Modality::Structured, body.into_bytes())), "control record")?;
        ok(kb.link_record_entity(&id, &format!("ctl{k}")), "link")?;
        ok(kb.assert_triple(Triple::new(format!("ctl{k}"), "colour", format!("lit:c{k}"))), "control triple")?;
        controls.push(id);
        tick();
    }
    let control_triples = |kb: &colma_core::Knowledge| -> Result<Vec<Triple>, String> {
        let mut out = Vec::new();
        for k in 0..CONTROLS {
            out.extend(ok(kb.query_triples(&TriplePattern::new(Some(&format!("ctl{k}")), None, None), None), "query")?);
        }
        Ok(out)
    };
    let mut before = Vec::new();
    for k in 0..CONTROLS {
        let r = ok(kb.recall(&control_cue(k), None, None), "control recall")?;
        ensure!(r.completeness == 1.0 && r.filled_slots[&format!("control{k}")].record == controls[k], "control {k} not recalled");
        before.push(ok(canonical(&r), "json")?);
    }
    let triples_before = control_triples(&kb)?;

    // Sources: one document per subject whose provenance is the subject's source.
    let mut docs: Vec<(RecordId, u32)> = Vec::new();
    let mut versions: Vec<(RecordId, u32, i64, String)> = Vec::new();
    for j in 0..SUBJECTS {
        let now = tick();
        let text = format!("doc {j}");
        let (id, v) = ok(kb.upsert_record(RecordInput::text(&text).with_provenance([format!("src{j}")])), "doc")?;
        docs.push((id, v));
        versions.push((id, v, now, text));
    }

    let mut plan: Vec<Step> = [vec![Step::Novel; 500], vec![Step::Repeat; 200], vec![Step::Conflict; 100]].concat();
    plan.shuffle(&mut rng);
    // An anchor per subject, then one more attribute per subject so every
    // conflict has a neighbourhood to corroborate against.
    let plan: Vec<Step> = [vec![Step::Novel; 2 * SUBJECTS], plan].concat();

    let mut shadow: BTreeMap<(String, String), Vec<Belief>> = BTreeMap::new();
    let mut attrs: Vec<usize> = vec![0; SUBJECTS];
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for (step, kind) in plan.iter().enumerate() {
        let now = tick();
        let (j, p) = match kind {
            _ if step < SUBJECTS => (step, "kind".to_string()),
            Step::Novel => {
                let j = if step < 2 * SUBJECTS { step - SUBJECTS } else { rng.random_range(0..SUBJECTS) };
                attrs[j] += 1;
                (j, format!("attr{}", attrs[j]))
            }
            Step::Repeat | Step::Conflict => {
                let j = rng.random_range(0..SUBJECTS);
                let lo = usize::from(*kind == Step::Conflict);
                let a = rng.random_range(lo..=attrs[j]);
                (j, if a == 0 { "kind".to_string() } else { format!("attr{a}") })
            }
        };
        let s = format!("e{j}");
        let beliefs = shadow.entry((s.clone(), p.clone())).or_default();
        let live = beliefs.iter().position(|b| b.to.is_none());
        let object = match kind {
            Step::Repeat => beliefs[live.ok_or("repeat without a live belief")?].object.clone(),
            _ => format!("lit:v{step}"),
        };
        let ev = rng.random_range(5..=10) as f64 / 10.0;
        let proposal = UpdateProposal {
            triple: Triple::new(&s, &p, &object),
            evidence: vec![format!("src{j}")],
            evidence_confidence: ev,
            source_record: Some(docs[j].0),
        };
        let out = ok(kb.update_memory(&proposal, None, None, None), "update_memory")?;
        let want = match kind {
            Step::Novel => Decision::Coexists,
            Step::Repeat => Decision::Reinforced,
            Step::Conflict => Decision::Replaced,
        };
        ensure!(out.decision == want, "step {step}: {s} {p} {object}: got {:?}, want {want:?}", out.decision);
        *counts.entry(match kind {
            Step::Novel => "novel",
            Step::Repeat => "repeat",
            Step::Conflict => "conflict",
        })
        .or_default() += 1;
        match kind {
            Step::Repeat => {
                let b = &mut beliefs[live.unwrap_or_default()];
                b.confidence = b.confidence.max(ev);
            }
            Step::Novel => {
                ensure!(live.is_none(), "step {step}: novel belief already live");
                beliefs.push(Belief { object, from: now, to: None, confidence: ev });
            }
            Step::Conflict => {
                let i = live.ok_or("conflict without a live belief")?;
                let end = now.max(beliefs[i].from + 1);
                beliefs[i].to = Some(now);
                beliefs.push(Belief { object, from: end, to: None, confidence: ev });
            }
        }

        if step % 10 == 9 {
            let now = tick();
            let j = rng.random_range(0..SUBJECTS);
            let (id, v) = docs[j];
            let text = format!("doc {j} revision {}", v + 1);
            let (_, nv) = ok(kb.upsert_record(RecordInput::text(&text).update_of(id, v)), "revise doc")?;
            ensure!(nv == v + 1, "revision of doc {j} got version {nv}");
            docs[j].1 = nv;
            versions.push((id, nv, now, text));
        }
    }

    // Belief timelines.
    let mut checked = 0;
    for ((s, p), beliefs) in &shadow {
        let pat = TriplePattern::new(Some(s), Some(p), None);
        let mut times: Vec<i64> = Vec::new();
        for b in beliefs {
            times.extend([b.from - 1, b.from]);
            if let Some(to) = b.to {
                times.extend([to - 1, to]);
            }
        }
        for t in times {
            let want: BTreeSet<&str> = beliefs
                .iter()
                .filter(|b| b.from <= t && b.to.is_none_or(|to| to > t))
                .map(|b| b.object.as_str())
                .collect();
            let got_triples = ok(kb.query_triples(&pat, Some(t)), "query as of")?;
            let got: BTreeSet<&str> = got_triples.iter().map(|t| t.object.as_str()).collect();
            ensure!(got == want, "{s} {p} as of {t}: got {got:?}, want {want:?}");
            checked += 1;
        }
        let current = ok(kb.query_triples(&pat, None), "query")?;
        let want: Vec<(&str, f64)> = beliefs.iter().filter(|b| b.to.is_none()).map(|b| (b.object.as_str(), b.confidence)).collect();
        let got: Vec<(&str, f64)> = current.iter().map(|t| (t.object.as_str(), t.confidence)).collect();
        ensure!(got == want, "{s} {p} now: got {got:?}, want {want:?}");
    }
    let stored = kb.all_triples().into_iter().filter(|t| t.subject.starts_with('e')).count();
    let expected: usize = shadow.values().map(Vec::len).sum();
    ensure!(stored == expected, "{stored} stored beliefs, shadow has {expected}");

    // Record versions.
    for (id, v, at, text) in &versions {
        let r = ok(kb.record_version(id, *v), "record_version")?.ok_or(format!("{id} v{v} missing"))?;
        ensure!(r.text() == Some(text.as_str()), "{id} v{v} content {:?}", r.text());
        let r = ok(kb.record_as_of(id, *at), "record_as_of")?.ok_or(format!("{id} as of {at} missing"))?;
        ensure!(r.version == *v, "{id} as of {at} is v{}, want v{v}", r.version);
        if *v > 1 {
            let prev = ok(kb.record_as_of(id, at - 1), "record_as_of")?.ok_or(format!("{id} before {at} missing"))?;
            ensure!(prev.version == v - 1, "{id} just before {at} is v{}", prev.version);
        }
    }

    // Controls.
    ensure!(control_triples(&kb)? == triples_before, "control triples changed");
    for k in 0..CONTROLS {
        let r = ok(kb.recall(&control_cue(k), None, None), "control recall")?;
        ensure!(ok(canonical(&r), "json")? == before[k], "control {k} recall changed");
    }

    Ok(format!(
        "{} novel, {} repeats, {} replacements; {checked} as-of checks, {} record versions, {CONTROLS} controls unchanged",
        counts["novel"],
        counts["repeat"],
        counts["conflict"],
        versions.len()
    ))
}
