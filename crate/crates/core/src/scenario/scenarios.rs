//! The four scripted scenarios. Each runs against a fresh namespace under a
//! manual clock, records every operation as (op, inputs digest, outputs
//! digest) and fails on the first broken expectation. Digests are SHA-256
//! over canonical JSON, so a fixed seed yields byte-identical transcripts.
//!
//! S1 identifies a toxic mushroom, S2 reconstructs a day from weekly
//! routines, S3 solves a geometry problem by rule and reflects on it, S4
//! revises a belief about Napoleon's defeat at Waterloo.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use colma_storage::hash::SplitMix64;
use colma_storage::{ManualClock, MICROS_PER_DAY, MICROS_PER_SECOND};

use super::embed::test_embed;
use crate::cognition::reason::{parse_rules, Pattern};
use crate::cognition::{Cue, Decision, ReflectOutcome, Strategy, UpdateProposal};
use crate::config::EngineConfig;
use crate::coordination::Stimulus;
use crate::engine::Engine;
use crate::error::{CoreError, Result};
use crate::json;
use crate::knowledge::{Case, Knowledge, Modality, RecordInput, Tier, Triple, TriplePattern};

/// Monday 2024-03-04 00:00:00 UTC.
pub const SCENARIO_EPOCH: i64 = 1_709_510_400 * MICROS_PER_SECOND;
const HOUR: i64 = 3600 * MICROS_PER_SECOND;
const MINUTE: i64 = 60 * MICROS_PER_SECOND;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scenario {
    S1,
    S2,
    S3,
    S4,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::S1, Scenario::S2, Scenario::S3, Scenario::S4];
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Scenario {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S1" => Ok(Scenario::S1),
            "S2" => Ok(Scenario::S2),
            "S3" => Ok(Scenario::S3),
            "S4" => Ok(Scenario::S4),
            _ => Err(CoreError::Scenario(format!("unknown scenario {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub op: String,
    pub inputs: String,
    pub outputs: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTranscript {
    pub scenario: Scenario,
    pub seed: u64,
    pub steps: Vec<Step>,
    pub assertions_passed: u32,
    /// Headline results, e.g. the S4 decision or the S2 completeness.
    pub observations: BTreeMap<String, Value>,
}

impl ScenarioTranscript {
    /// JSON Lines: a header, one line per step, and a summary.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        let mut push = |v: Value| -> Result<()> {
            out.push_str(&json::canonical(&v)?);
            out.push('\n');
            Ok(())
        };
        push(json!({"kind": "scenario", "scenario": self.scenario, "seed": self.seed}))?;
        for (i, s) in self.steps.iter().enumerate() {
            push(json!({"kind": "step", "index": i, "op": s.op, "inputs": s.inputs, "outputs": s.outputs}))?;
        }
        push(json!({
            "kind": "summary",
            "assertions_passed": self.assertions_passed,
            "observations": self.observations,
        }))?;
        Ok(out)
    }

    pub fn observation(&self, key: &str) -> Option<&Value> {
        self.observations.get(key)
    }
}

fn digest<T: Serialize + ?Sized>(v: &T) -> Result<String> {
    Ok(hex::encode(Sha256::digest(json::canonical(v)?.as_bytes())))
}

struct Script<'a> {
    kb: &'a Knowledge,
    clock: &'a ManualClock,
    steps: Vec<Step>,
    passed: u32,
    observations: BTreeMap<String, Value>,
}

impl Script<'_> {
    fn step<I: Serialize + ?Sized, O: Serialize + ?Sized>(&mut self, op: &str, inputs: &I, outputs: &O) -> Result<()> {
        self.steps.push(Step {
            op: op.to_owned(),
            inputs: digest(inputs)?,
            outputs: digest(outputs)?,
        });
        Ok(())
    }

    fn check(&mut self, ok: bool, what: &str) -> Result<()> {
        if ok {
            self.passed += 1;
            Ok(())
        } else {
            Err(CoreError::Scenario(what.to_owned()))
        }
    }

    fn observe(&mut self, key: &str, v: impl Serialize) -> Result<()> {
        self.observations.insert(key.to_owned(), serde_json::to_value(v)?);
        Ok(())
    }

    fn advance(&self, micros: i64) -> i64 {
        self.clock.advance(micros)
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>> {
        test_embed(text, self.kb.dim())
    }
}

/// Runs `which` in a throwaway store under a manual clock.
pub fn run_scenario(which: Scenario, seed: u64) -> Result<ScenarioTranscript> {
    let dir = tempfile::tempdir()?;
    let mut config = EngineConfig::with_dir(dir.path());
    config.store.sync_writes = false;
    let clock = Arc::new(ManualClock::new(SCENARIO_EPOCH));
    let engine = Engine::open_with_clock(config, clock.clone())?;
    let out = run_scenario_on(&engine, &clock, "scenario", which, seed);
    engine.close()?;
    out
}

/// Runs `which` in namespace `namespace` of `engine`, whose clock must be
/// `clock`. The namespace must be empty.
pub fn run_scenario_on(
    engine: &Engine,
    clock: &ManualClock,
    namespace: &str,
    which: Scenario,
    seed: u64,
) -> Result<ScenarioTranscript> {
    let kb = engine.namespace(namespace)?;
    if !kb.is_empty() {
        return Err(CoreError::DirtyNamespace(namespace.to_owned()));
    }
    let mut sc = Script {
        kb: &kb,
        clock,
        steps: Vec::new(),
        passed: 0,
        observations: BTreeMap::new(),
    };
    let mut rng = SplitMix64::new(seed);
    match which {
        Scenario::S1 => s1(&mut sc, &mut rng)?,
        Scenario::S2 => s2(&mut sc, &mut rng)?,
        Scenario::S3 => s3(&mut sc, &mut rng)?,
        Scenario::S4 => s4(&mut sc, &mut rng)?,
    }
    Ok(ScenarioTranscript {
        scenario: which,
        seed,
        steps: sc.steps,
        assertions_passed: sc.passed,
        observations: sc.observations,
    })
}

pub const S1_RULES: &str = r#"{"id":"toxic-red-cap","premises":[["?x","isA","mushroom"],["?x","hasFeature","redCap"],["?x","hasFeature","whiteSpots"]],"conclusion":["?x","isToxicRisk","lit:high"],"confidence":0.9}
"#;

/// Toxic mushroom identification: encode the sighting, associate its
/// features, anticipate from past foraging, infer the danger by rule, and
/// commit the characteristics to memory with high salience.
fn s1(sc: &mut Script, rng: &mut SplitMix64) -> Result<()> {
    let kb = sc.kb;
    let earlier = 2 + (rng.next_u64() % 3) as usize;
    for i in 0..earlier {
        let text = format!("a brown mushroom with a flat cap beside the trail, sighting {i}");
        let st = Stimulus {
            embedding: Some(sc.embed(&text)?),
            salience: Some(0.3),
            entities: vec!["brownCap".into()],
            ..Stimulus::text(text)
        };
        let out = kb.encode(st.clone())?;
        sc.step("encode", &st, &out)?;
        sc.advance(10 * MINUTE);
    }

    for (cue, reaction) in [
        ("red_cap_seen", "step_back"),
        ("brown_cap_seen", "collect"),
        ("red_cap_seen", "step_back"),
    ] {
        for label in [cue, reaction] {
            let at = sc.advance(MINUTE);
            let id = kb.append_event("foraging", label, at)?;
            sc.step("append_event", &json!({"stream": "foraging", "label": label, "at": at}), &id)?;
        }
    }

    let rules = parse_rules(S1_RULES)?;
    sc.step("load_rules", S1_RULES, &rules)?;

    sc.advance(HOUR);
    let text = "a mushroom with a bright red cap and white spots under an oak tree";
    let st = Stimulus {
        embedding: Some(sc.embed(text)?),
        salience: Some(0.5),
        entities: vec!["m1".into(), "redCap".into(), "whiteSpots".into(), "oakTree".into()],
        ..Stimulus::text(text)
    };
    let sighting = kb.encode(st.clone())?;
    sc.step("encode", &st, &sighting)?;
    let obs = sighting.record.id;

    for (s, p, o) in [
        ("m1", "isA", "mushroom"),
        ("m1", "hasFeature", "redCap"),
        ("m1", "hasFeature", "whiteSpots"),
        ("m1", "foundNear", "oakTree"),
    ] {
        let t = Triple {
            source_record: Some(obs),
            provenance: vec!["observation:sight".into()],
            ..Triple::new(s, p, o)
        };
        let out = kb.assert_triple(t.clone())?;
        sc.step("assert_triple", &t, &out)?;
    }

    let cue = Cue::entities(["m1"]);
    let assoc = kb.associate(&cue, 10)?;
    sc.step("associate", &cue, &assoc)?;
    let red = assoc.iter().find(|a| a.node == "redCap").map(|a| a.activation);
    sc.check(red.is_some_and(|a| a >= 0.5), "associate: redCap activated by m1")?;
    sc.observe("red_cap_activation", red)?;

    let context = vec!["red_cap_seen".to_string()];
    let pred = kb.predict("foraging", &context)?;
    sc.step("predict", &context, &pred)?;
    sc.check(
        pred.as_ref().is_some_and(|p| p.label == "step_back" && p.confidence == 1.0),
        "predict: a red cap means stepping back",
    )?;
    sc.observe("prediction", &pred)?;

    let goal = Pattern::new("m1", "isToxicRisk", "?risk");
    let proof = kb.reason(&goal, &rules, None)?;
    sc.step("reason", &goal, &proof)?;
    let risk = proof.answers.first().and_then(|a| a.bindings.get("risk").cloned());
    sc.check(proof.strategy == Strategy::Deductive, "reason: deductive path answers")?;
    sc.check(risk.as_deref() == Some("lit:high"), "reason: high toxicity risk")?;
    sc.observe("risk", &risk)?;

    let strengthened = kb.reinforce(&obs, 0.45)?;
    sc.step("reinforce", &json!({"id": obs, "delta": 0.45}), &strengthened)?;
    sc.check(strengthened.salience >= 0.9, "reinforce: sighting is highly salient")?;

    let pattern = TriplePattern::new(Some("m1"), None, None);
    let known = kb.query_triples(&pattern, None)?;
    sc.step("query_triples", &pattern, &known)?;
    let has = |p: &str, o: &str| known.iter().any(|t| t.predicate == p && t.object == o);
    sc.check(
        has("isToxicRisk", "lit:high") && has("hasFeature", "redCap") && has("hasFeature", "whiteSpots"),
        "characteristics committed to memory",
    )?;
    let conf = known.iter().find(|t| t.predicate == "isToxicRisk").map(|t| t.confidence);
    sc.check(conf.is_some_and(|c| (c - 0.9).abs() < 1e-12), "derived triple carries rule confidence")?;
    sc.observe("characteristics", known.len())
}

const WEEKDAYS: [&str; 7] = ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"];
const ROUTINES: [&str; 7] = [
    "weekly team meeting",
    "gym after work",
    "piano lesson",
    "grocery shopping",
    "dinner with colleagues",
    "long run in the park",
    "family lunch",
];

/// Everyday recall: a month of weekly routines plus one special plan on a
/// weekend; the queried date is reconstructed from its routine and the plan.
fn s2(sc: &mut Script, rng: &mut SplitMix64) -> Result<()> {
    let kb = sc.kb;
    let weekends = [5, 6, 12, 13, 19, 20, 26, 27];
    let queried = weekends[(rng.next_u64() % weekends.len() as u64) as usize];
    for day in 0..28i64 {
        let wd = WEEKDAYS[(day % 7) as usize];
        let routine = ROUTINES[(day % 7) as usize];
        let at = SCENARIO_EPOCH + day * MICROS_PER_DAY + 9 * HOUR;
        sc.clock.set(at);
        let content = json::canonical(&json!({"day": wd, "routine": routine}))?;
        let input = RecordInput::new(Modality::Structured, content.into_bytes())
            .with_embedding(sc.embed(&format!("{wd} {routine}"))?)
            .with_salience(0.4)
            .with_provenance(["calendar"])
            .at(at);
        let out = kb.upsert_record(input.clone())?;
        sc.step("put_record", &input, &out)?;
    }
    let day_start = SCENARIO_EPOCH + queried * MICROS_PER_DAY;
    let wd = WEEKDAYS[(queried % 7) as usize];
    let special_at = day_start + 18 * HOUR;
    let content = json::canonical(&json!({"day": wd, "special": "surprise birthday party at the lake house"}))?;
    let input = RecordInput::new(Modality::Structured, content.into_bytes())
        .with_embedding(sc.embed(&format!("{wd} surprise birthday party lake house"))?)
        .with_salience(0.8)
        .with_provenance(["chat-history"])
        .at(special_at);
    let (special, _) = kb.upsert_record(input.clone())?;
    sc.step("put_record", &input, &special)?;

    sc.clock.set(SCENARIO_EPOCH + 35 * MICROS_PER_DAY);
    let cue = Cue {
        text_tokens: vec![wd.into()],
        time_window: Some((day_start, day_start + MICROS_PER_DAY - 1)),
        slots: vec!["routine".into(), "special".into()],
        ..Cue::default()
    };
    let result = kb.recall(&cue, None, None)?;
    sc.step("recall", &cue, &result)?;
    sc.check(result.completeness == 1.0, "recall: every slot filled")?;
    sc.check(
        result.filled_slots.get("special").is_some_and(|f| f.record == special),
        "recall: the special plan comes from the queried date",
    )?;
    let routine_ok = result
        .filled_slots
        .get("routine")
        .and_then(|f| kb.peek_record(&f.record))
        .and_then(|r| r.text().map(|t| t.contains(ROUTINES[(queried % 7) as usize])))
        .unwrap_or(false);
    sc.check(routine_ok, "recall: routine matches the weekday")?;
    sc.check(result.rounds_used >= 1, "recall: at least one round")?;
    sc.observe("queried_day", queried)?;
    sc.observe("completeness", result.completeness)?;
    sc.observe("coherence", result.coherence)?;
    sc.observe("rounds_used", result.rounds_used)
}

pub const S3_RULES: &str = r#"# geometry: pick a formula, then read off its form
{"id":"right-triangle-hypotenuse","premises":[["?p","isA","rightTriangleProblem"],["?p","asks","hypotenuse"]],"conclusion":["?p","usesFormula","pythagoreanTheorem"],"confidence":0.95}
{"id":"formula-form","premises":[["?p","usesFormula","?f"],["?f","expressedAs","?e"]],"conclusion":["?p","solvedWith","?e"],"confidence":0.9}
"#;

/// Problem solving: a remembered shortcut suggests the wrong formula, the
/// rules derive the right one, the conflict penalises the heuristic, and the
/// solved case consolidates into long-term memory.
fn s3(sc: &mut Script, rng: &mut SplitMix64) -> Result<()> {
    let kb = sc.kb;
    let problem = format!("problem{}", rng.next_u64() % 100);
    let rules = parse_rules(S3_RULES)?;
    sc.step("load_rules", S3_RULES, &rules)?;

    for (s, p, o) in [
        (problem.as_str(), "isA", "rightTriangleProblem"),
        (problem.as_str(), "asks", "hypotenuse"),
        ("pythagoreanTheorem", "expressedAs", "lit:c^2=a^2+b^2"),
    ] {
        let t = Triple::new(s, p, o);
        let out = kb.assert_triple(t.clone())?;
        sc.step("assert_triple", &t, &out)?;
        sc.advance(MINUTE);
    }

    // An earlier, hasty solution remembered as a case.
    let hasty_goal = "sketch solvedWith ?e".to_string();
    let hasty = Case {
        goal: hasty_goal.clone(),
        answer: BTreeMap::from([("e".to_string(), "lit:c=a+b".to_string())]),
        record: None,
        embedding: sc.embed(&hasty_goal)?,
    };
    kb.put_case(hasty.clone())?;
    sc.step("put_case", &hasty, &hasty_goal)?;

    let goal = Pattern::new(&problem, "solvedWith", "?e");
    let suggestion = kb.heuristic_suggest(&goal)?;
    sc.step("heuristic_suggest", &goal, &suggestion)?;
    let proof = kb.reason(&goal, &rules, None)?;
    sc.step("reason", &goal, &proof)?;
    let answer = proof.answers.first().and_then(|a| a.bindings.get("e").cloned());
    sc.check(proof.strategy == Strategy::Deductive, "reason: rules answer the goal")?;
    sc.check(answer.as_deref() == Some("lit:c^2=a^2+b^2"), "reason: Pythagorean form")?;
    sc.check(proof.conflict_logged, "reason: heuristic disagreement is logged")?;
    let conf = proof.answers[0].confidence;
    sc.check((conf - 0.95 * 0.9).abs() < 1e-12, "reason: confidence is the rule product")?;

    let outcome = ReflectOutcome {
        task_id: problem.clone(),
        strategy: "deductive".into(),
        success: true,
    };
    let weights = kb.reflect(&outcome)?;
    sc.step("reflect", &outcome, &weights)?;
    sc.check(weights.deductive > weights.heuristic, "reflect: deduction now preferred")?;

    let case_record = kb
        .cases()
        .into_iter()
        .find(|c| c.goal == goal.to_string())
        .and_then(|c| c.record)
        .ok_or_else(|| CoreError::Scenario("solved case was not recorded".into()))?;

    let now = sc.advance(MINUTE);
    let first = kb.consolidate_tick(now)?;
    sc.step("consolidate_tick", &now, &first)?;
    // Solving the same problem again reinforces the stored case.
    sc.advance(30 * MINUTE);
    let again = kb.reason(&goal, &rules, None)?;
    sc.step("reason", &goal, &again)?;
    sc.check(again.attempt_order.first() == Some(&Strategy::Deductive), "reason: deductive path tried first")?;
    let now = sc.advance(30 * MINUTE);
    let second = kb.consolidate_tick(now)?;
    sc.step("consolidate_tick", &now, &second)?;

    let tier = kb.peek_record(&case_record).map(|r| r.tier);
    sc.check(tier == Some(Tier::Long), "solved case consolidated into the long tier")?;
    let derived = kb.query_triples(&TriplePattern::new(Some(&problem), Some("solvedWith"), None), None)?;
    sc.step("query_triples", &goal, &derived)?;
    sc.check(derived.len() == 1, "derived solution asserted as a triple")?;
    sc.observe("answer", &answer)?;
    sc.observe("conflict_logged", proof.conflict_logged)?;
    sc.observe("weights", weights)?;
    sc.observe("case_tier", tier)
}

/// Knowledge updating: a school-lesson belief about Waterloo meets a
/// biography's conflicting account and is replaced, with the old belief
/// still visible at its time.
fn s4(sc: &mut Script, rng: &mut SplitMix64) -> Result<()> {
    let kb = sc.kb;
    let lesson_text = "history lesson: Napoleon was defeated at Waterloo because of his stubbornness";
    let lesson = RecordInput::text(lesson_text)
        .with_embedding(sc.embed(lesson_text)?)
        .with_provenance(["textbook:high-school-history"]);
    let (lesson_id, _) = kb.upsert_record(lesson.clone())?;
    sc.step("put_record", &lesson, &lesson_id)?;

    let context = [
        ("Napoleon", "commanded", "FrenchArmy"),
        ("Napoleon", "foughtAt", "Waterloo"),
        ("Waterloo", "occurredIn", "lit:1815"),
        ("Wellington", "foughtAt", "Waterloo"),
    ];
    let extra = (rng.next_u64() % context.len() as u64) as usize;
    for (s, p, o) in context.iter().take(1 + extra) {
        let t = Triple::new(*s, *p, *o);
        let out = kb.assert_triple(t.clone())?;
        sc.step("assert_triple", &t, &out)?;
    }
    let old = Triple {
        source_record: Some(lesson_id),
        ..Triple::new("Napoleon", "defeatCause", "lit:stubbornness").with_confidence(0.5)
    };
    let seeded = kb.assert_triple(old.clone())?;
    sc.step("assert_triple", &old, &seeded)?;
    let before = sc.advance(HOUR);

    sc.advance(HOUR);
    let bio_text = "biography: intelligence failures shaped Napoleon's decisions at Waterloo";
    let bio = RecordInput::text(bio_text)
        .with_embedding(sc.embed(bio_text)?)
        .with_provenance(["biography:new-napoleon-biography"]);
    let (bio_id, _) = kb.upsert_record(bio.clone())?;
    sc.step("put_record", &bio, &bio_id)?;

    let proposal = UpdateProposal {
        triple: Triple::new("Napoleon", "defeatCause", "lit:intelligenceFailure"),
        evidence: vec!["biography:new-napoleon-biography".into()],
        evidence_confidence: 0.9,
        source_record: Some(bio_id),
    };
    let outcome = kb.update_memory(&proposal, None, None, None)?;
    sc.step("update_memory", &proposal, &outcome)?;
    sc.check(outcome.decision == Decision::Replaced, "update_memory: belief replaced")?;
    sc.check(
        outcome.conflict_with.as_ref().is_some_and(|t| t.object == "lit:stubbornness"),
        "update_memory: conflict identified",
    )?;
    let after = sc.advance(HOUR);

    let pattern = TriplePattern::new(Some("Napoleon"), Some("defeatCause"), None);
    let then = kb.query_triples(&pattern, Some(before))?;
    sc.step("query_triples", &json!({"pattern": pattern, "as_of": before}), &then)?;
    let now = kb.query_triples(&pattern, Some(after))?;
    sc.step("query_triples", &json!({"pattern": pattern, "as_of": after}), &now)?;
    sc.check(
        then.len() == 1 && then[0].object == "lit:stubbornness",
        "old belief visible at its time",
    )?;
    sc.check(
        now.len() == 1 && now[0].object == "lit:intelligenceFailure",
        "new belief visible now",
    )?;
    sc.check(
        now[0].provenance.iter().any(|p| p.starts_with("supersedes:")),
        "new belief links to what it supersedes",
    )?;
    let history = kb
        .all_triples()
        .into_iter()
        .filter(|t| pattern.matches(t))
        .count();
    sc.check(history == 2, "old belief retracted, not deleted")?;
    sc.observe("decision", outcome.decision)?;
    sc.observe("consistency", outcome.consistency)?;
    sc.observe("completeness_q", outcome.completeness_q)
}
