//! Capability matrix: one concrete probe per architectural dimension, run
//! against engines built from the caller's configuration in throwaway
//! directories. A probe that fails or cannot run reports `unsupported`;
//! probes that pass only their core check report `partial`.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use colma_storage::hash::SplitMix64;
use colma_storage::{Clock as _, 
    Cell, Codec, ManualClock, PartitionKey, Ring, RingConfig, SimulatedCluster, Store, MICROS_PER_SECOND,
};

use super::embed::test_embed;
use super::scenarios::SCENARIO_EPOCH;
use crate::cognition::reason::{forward_chain, Pattern, Rule};
use crate::cognition::Cue;
use crate::config::EngineConfig;
use crate::engine::Engine;
use crate::error::{CoreError, Result};
use crate::ids::RecordId;
use crate::json;
use crate::knowledge::{Direction, IndexChoice, KnnMode, Knowledge, Modality, RecordInput, Triple, TriplePattern};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dimension {
    MultiModal,
    Similarity,
    Indexing,
    Sync,
    EntityModel,
    TimeSeries,
    Versioning,
    Distributed,
    Linking,
    Compression,
    OnlineUpdate,
    Reasoning,
}

impl Dimension {
    /// Matrix column order.
    pub const ALL: [Dimension; 12] = [
        Dimension::MultiModal,
        Dimension::Similarity,
        Dimension::Indexing,
        Dimension::Sync,
        Dimension::EntityModel,
        Dimension::TimeSeries,
        Dimension::Versioning,
        Dimension::Distributed,
        Dimension::Linking,
        Dimension::Compression,
        Dimension::OnlineUpdate,
        Dimension::Reasoning,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Dimension::MultiModal => "Multi-modal",
            Dimension::Similarity => "Similarity",
            Dimension::Indexing => "Indexing",
            Dimension::Sync => "Sync",
            Dimension::EntityModel => "Entity Model",
            Dimension::TimeSeries => "Time Series",
            Dimension::Versioning => "Versioning",
            Dimension::Distributed => "Distributed",
            Dimension::Linking => "Linking",
            Dimension::Compression => "Compression",
            Dimension::OnlineUpdate => "Online Update",
            Dimension::Reasoning => "Reasoning",
        }
    }

    fn probe_description(self) -> &'static str {
        match self {
            Dimension::MultiModal => "ingest text, image-descriptor, structured and event records; recall returns all four",
            Dimension::Similarity => "exact kNN equals a brute-force scan; approximate kNN recall@10 >= 0.95",
            Dimension::Indexing => "SPO/POS/OSP triple queries and clustering range scans equal filtered full scans",
            Dimension::Sync => "replica delta exchange in both directions converges to identical scans",
            Dimension::EntityModel => "triple pattern queries and neighbourhoods match the asserted graph",
            Dimension::TimeSeries => "timeline and stream scans return out-of-order writes in time order",
            Dimension::Versioning => "earlier record and triple versions readable by version and as_of",
            Dimension::Distributed => "ring growth moves about 1/n of partitions; cluster replicas converge",
            Dimension::Linking => "record-entity links round-trip in both directions",
            Dimension::Compression => "prefix+varint segments round-trip and are smaller than uncompressed ones",
            Dimension::OnlineUpdate => "upserts under concurrent readers never expose a version going backwards",
            Dimension::Reasoning => "rule chaining answers equal a saturation fixpoint",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Support {
    Supported,
    Partial,
    Unsupported,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionResult {
    pub dimension: String,
    pub status: Support,
    pub probe: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapabilityReport {
    /// In matrix column order.
    pub dimensions: Vec<DimensionResult>,
    pub footnotes: Vec<String>,
}

impl CapabilityReport {
    pub fn status(&self, name: &str) -> Option<Support> {
        self.dimensions.iter().find(|d| d.dimension == name).map(|d| d.status)
    }

    pub fn supported_count(&self) -> usize {
        self.dimensions.iter().filter(|d| d.status == Support::Supported).count()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(json::canonical(self)?)
    }
}

pub const FOOTNOTES: [&str; 4] = [
    "Versioning: the fused KG + VectorDB + MLP row of the reference matrix marks this P; every record and triple version here stays readable by explicit version and as_of, so the probe reports supported.",
    "Indexing: the fused KG + VectorDB row marks this P; triple indexes, the vector index and clustering range scans are each checked against full scans.",
    "Sync is interpreted as replica delta convergence (anti-entropy); the matrix gives the column no further definition.",
    "Parametric (MLP) storage is out of scope; no dimension depends on it.",
];

/// Runs every probe with `config`'s engine settings. The store directory in
/// `config` is never touched.
pub fn eval_capabilities(config: &EngineConfig) -> CapabilityReport {
    let dimensions = Dimension::ALL
        .into_iter()
        .map(|d| {
            let (status, detail) = match probe(d, config) {
                Ok(Outcome::Pass) => (Support::Supported, None),
                Ok(Outcome::Partial(why)) => (Support::Partial, Some(why)),
                Ok(Outcome::Fail(why)) => (Support::Unsupported, Some(why)),
                Err(e) => (Support::Unsupported, Some(e.to_string())),
            };
            DimensionResult {
                dimension: d.name().to_owned(),
                status,
                probe: d.probe_description().to_owned(),
                detail,
            }
        })
        .collect();
    CapabilityReport {
        dimensions,
        footnotes: FOOTNOTES.iter().map(|s| s.to_string()).collect(),
    }
}

enum Outcome {
    Pass,
    Partial(String),
    Fail(String),
}

fn expect(ok: bool, why: &str) -> Outcome {
    if ok {
        Outcome::Pass
    } else {
        Outcome::Fail(why.to_owned())
    }
}

struct Sandbox {
    _dir: tempfile::TempDir,
    clock: Arc<ManualClock>,
    engine: Engine,
}

impl Sandbox {
    fn new(config: &EngineConfig) -> Result<Self> {
        let dir = tempfile::tempdir()?;
        let mut cfg = config.clone();
        cfg.store.dir = dir.path().to_path_buf();
        cfg.store.sync_writes = false;
        let clock = Arc::new(ManualClock::new(SCENARIO_EPOCH));
        let engine = Engine::open_with_clock(cfg, clock.clone())?;
        Ok(Self { _dir: dir, clock, engine })
    }

    fn ns(&self, dim: usize) -> Result<Arc<Knowledge>> {
        self.engine.create_namespace("probe", dim)
    }

    fn tick(&self) -> i64 {
        self.clock.advance(MICROS_PER_SECOND)
    }
}

fn probe(d: Dimension, config: &EngineConfig) -> Result<Outcome> {
    match d {
        Dimension::MultiModal => multi_modal(config),
        Dimension::Similarity => similarity(config),
        Dimension::Indexing => indexing(config),
        Dimension::Sync => sync(config),
        Dimension::EntityModel => entity_model(config),
        Dimension::TimeSeries => time_series(config),
        Dimension::Versioning => versioning(config),
        Dimension::Distributed => distributed(config),
        Dimension::Linking => linking(config),
        Dimension::Compression => compression(config),
        Dimension::OnlineUpdate => online_update(config),
        Dimension::Reasoning => reasoning(config),
    }
}

fn multi_modal(config: &EngineConfig) -> Result<Outcome> {
    let sb = Sandbox::new(config)?;
    let kb = sb.ns(64)?;
    let items = [
        (Modality::Text, "red cap mushroom seen in the forest"),
        (Modality::ImageDescriptor, "photo: red cap mushroom with white spots"),
        (Modality::Structured, r#"{"cap":"red","kind":"mushroom"}"#),
        (Modality::Event, r#"{"label":"mushroom_photographed","stream":"walk"}"#),
    ];
    for (m, content) in items {
        sb.tick();
        let input = RecordInput::new(m, content.as_bytes().to_vec()).with_embedding(test_embed(content, 64)?);
        kb.upsert_record(input)?;
    }
    let cue = Cue {
        text_tokens: vec!["mushroom".into()],
        embedding: Some(test_embed("red cap mushroom", 64)?),
        ..Cue::default()
    };
    let result = kb.recall(&cue, None, None)?;
    let modalities: BTreeSet<Modality> = result
        .fragments
        .iter()
        .filter_map(|id| kb.peek_record(id))
        .map(|r| r.modality)
        .collect();
    Ok(match modalities.len() {
        4 => Outcome::Pass,
        n if n >= 2 => Outcome::Partial(format!("recall returned {n} of 4 modalities")),
        n => Outcome::Fail(format!("recall returned {n} of 4 modalities")),
    })
}

fn random_unit(rng: &mut SplitMix64, dim: usize) -> Vec<f32> {
    let v: Vec<f64> = (0..dim).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| (x / n) as f32).collect()
}

fn brute_force(points: &[(RecordId, Vec<f32>)], q: &[f32], k: usize) -> Vec<RecordId> {
    let dot = |a: &[f32], b: &[f32]| -> f64 {
        let ab: f64 = a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
        let na: f64 = a.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        ab / (na * nb)
    };
    let mut scored: Vec<(f64, RecordId)> = points.iter().map(|(id, v)| (dot(q, v), *id)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, id)| id).collect()
}

fn similarity(config: &EngineConfig) -> Result<Outcome> {
    let sb = Sandbox::new(config)?;
    let dim = 16;
    let kb = sb.ns(dim)?;
    let mut rng = SplitMix64::new(7);
    let mut points = Vec::new();
    for i in 0..400 {
        let v = random_unit(&mut rng, dim);
        let (id, _) = kb.upsert_record(RecordInput::text(format!("point {i}")).with_embedding(v.clone()))?;
        points.push((id, v));
    }
    let mut hits = 0;
    let queries = 25;
    for _ in 0..queries {
        let q = random_unit(&mut rng, dim);
        let truth = brute_force(&points, &q, 10);
        let exact: Vec<RecordId> = kb.knn(&q, 10, KnnMode::Exact)?.into_iter().map(|h| h.id).collect();
        if exact != truth {
            return Ok(Outcome::Fail("exact kNN differs from brute force".into()));
        }
        let approx: BTreeSet<RecordId> = kb.knn(&q, 10, KnnMode::Approx)?.into_iter().map(|h| h.id).collect();
        hits += truth.iter().filter(|id| approx.contains(id)).count();
    }
    let recall = hits as f64 / (queries * 10) as f64;
    Ok(if recall >= 0.95 {
        Outcome::Pass
    } else {
        Outcome::Partial(format!("approximate recall@10 {recall:.3}"))
    })
}

fn small_graph(kb: &Knowledge, sb: &Sandbox, seed: u64, n: usize) -> Result<Vec<Triple>> {
    let mut rng = SplitMix64::new(seed);
    let nodes = ["a", "b", "c", "d", "e", "f", "g"];
    let preds = ["knows", "likes", "near"];
    let mut out = Vec::new();
    for _ in 0..n {
        let s = nodes[(rng.next_u64() % 7) as usize];
        let p = preds[(rng.next_u64() % 3) as usize];
        let o = nodes[(rng.next_u64() % 7) as usize];
        sb.tick();
        let t = Triple::new(s, p, o);
        if kb.assert_triple(t.clone())?.created {
            out.push(t);
        }
    }
    Ok(out)
}

fn indexing(config: &EngineConfig) -> Result<Outcome> {
    let sb = Sandbox::new(config)?;
    let kb = sb.ns(8)?;
    // Storage side: clustering range scans against a filtered full scan.
    let part = PartitionKey::new("probe", "series")?;
    let mut rng = SplitMix64::new(3);
    for _ in 0..200 {
        let key = (rng.next_u64() % 1000).to_be_bytes().to_vec();
        sb.engine.store().put(&part, Cell::new(key, "v", b"x".to_vec(), sb.tick()))?;
    }
    let (lo, hi) = (200u64.to_be_bytes(), 700u64.to_be_bytes());
    let ranged = sb.engine.store().range_scan(&part, (std::ops::Bound::Included(&lo[..]), std::ops::Bound::Excluded(&hi[..])), None);
    let scanned: Vec<Cell> = sb
        .engine
        .store()
        .scan_all(None)
        .into_iter()
        .filter(|(p, c)| *p == part && c.clustering.as_slice() >= &lo[..] && c.clustering.as_slice() < &hi[..])
        .map(|(_, c)| c)
        .collect();
    if ranged != scanned {
        return Ok(Outcome::Fail("range scan differs from full scan".into()));
    }
    if !kb.graph_enabled() {
        return Ok(Outcome::Partial("graph layer disabled; only clustering indexes checked".into()));
    }
    small_graph(&kb, &sb, 11, 60)?;
    let all = kb.all_triples();
    for s in [None, Some("a"), Some("c")] {
        for p in [None, Some("knows")] {
            for o in [None, Some("b")] {
                let pat = TriplePattern::new(s, p, o);
                let mut want: Vec<Triple> = all.iter().filter(|t| t.is_live() && pat.matches(t)).cloned().collect();
                want.sort_by_key(|a| a.key());
                for via in [IndexChoice::Auto, IndexChoice::Spo, IndexChoice::Pos, IndexChoice::Osp] {
                    let mut got = kb.query_triples_via(&pat, None, via)?;
                    got.sort_by_key(|a| a.key());
                    if got != want {
                        return Ok(Outcome::Fail(format!("{via:?} index differs from scan")));
                    }
                }
            }
        }
    }
    Ok(Outcome::Pass)
}

fn namespace_scan(store: &Store, ns: &str) -> Vec<(PartitionKey, Cell)> {
    store.scan_all(None).into_iter().filter(|(p, _)| p.namespace() == ns).collect()
}

fn sync(config: &EngineConfig) -> Result<Outcome> {
    let a = Sandbox::new(config)?;
    let b = Sandbox::new(config)?;
    let ka = a.ns(8)?;
    for i in 0..20 {
        a.tick();
        ka.upsert_record(RecordInput::text(format!("note {i}")))?;
    }
    if ka.graph_enabled() {
        ka.assert_triple(Triple::new("x", "near", "y"))?;
    }
    let delta = a.engine.sync_delta("probe", 0)?;
    let mark_b = b.engine.store().seqno();
    b.engine.apply_delta(&delta)?;
    let kb = b.engine.namespace("probe")?;
    b.clock.set(a.clock.now_micros() + MICROS_PER_SECOND);
    kb.upsert_record(RecordInput::text("written on the second replica"))?;
    let back = b.engine.sync_delta("probe", mark_b)?;
    a.engine.apply_delta(&back)?;
    // Re-sending everything is harmless.
    b.engine.apply_delta(&a.engine.sync_delta("probe", 0)?)?;
    let same = namespace_scan(a.engine.store(), "probe") == namespace_scan(b.engine.store(), "probe");
    Ok(expect(
        same && ka.record_count() == 21 && kb.record_count() == 21,
        "replicas diverged after delta exchange",
    ))
}



fn entity_model(config: &EngineConfig) -> Result<Outcome> {
    let sb = Sandbox::new(config)?;
    let kb = sb.ns(8)?;
    for (s, p, o) in [
        ("napoleon", "commanded", "frenchArmy"),
        ("napoleon", "foughtAt", "waterloo"),
        ("wellington", "foughtAt", "waterloo"),
        ("waterloo", "locatedIn", "belgium"),
        ("napoleon", "bornIn", "lit:1769"),
    ] {
        sb.tick();
        kb.assert_triple(Triple::new(s, p, o))?;
    }
    let fought: BTreeSet<String> = kb
        .query_triples(&TriplePattern::new(None, Some("foughtAt"), Some("waterloo")), None)?
        .into_iter()
        .map(|t| t.subject)
        .collect();
    let hood = kb.neighbors("napoleon", 2, Direction::Both)?;
    let want: BTreeMap<String, usize> = [("napoleon", 0), ("frenchArmy", 1), ("waterloo", 1), ("wellington", 2), ("belgium", 2)]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v))
        .collect();
    Ok(expect(
        fought == BTreeSet::from(["napoleon".to_string(), "wellington".to_string()]) && hood == want,
        "entity queries disagree with the asserted graph",
    ))
}

fn time_series(config: &EngineConfig) -> Result<Outcome> {
    let sb = Sandbox::new(config)?;
    let kb = sb.ns(8)?;
    let mut rng = SplitMix64::new(5);
    let mut stamps: Vec<i64> = Vec::new();
    for i in 0..50 {
        let at = SCENARIO_EPOCH - (rng.next_u64() % 10_000) as i64 * MICROS_PER_SECOND;
        stamps.push(at);
        kb.upsert_record(RecordInput::text(format!("reading {i}")).at(at))?;
        kb.append_event("sensor", &format!("e{}", i % 3), at)?;
    }
    stamps.sort_unstable();
    let (lo, hi) = (stamps[10], stamps[40]);
    let ids = kb.timeline(lo, hi)?;
    let created: Vec<i64> = ids
        .iter()
        .filter_map(|id| kb.peek_record(id))
        .filter(|r| r.modality == Modality::Text)
        .map(|r| r.created_at)
        .collect();
    let want: Vec<i64> = stamps.iter().copied().filter(|t| (lo..=hi).contains(t)).collect();
    let events = kb.stream_events("sensor")?.unwrap_or_default();
    let ordered = events.windows(2).all(|w| w[0].0 <= w[1].0) && events.len() == 50;
    Ok(expect(created == want && ordered, "time-ordered scans out of order"))
}

fn versioning(config: &EngineConfig) -> Result<Outcome> {
    let sb = Sandbox::new(config)?;
    let kb = sb.ns(8)?;
    let (id, v1) = kb.upsert_record(RecordInput::text("first draft"))?;
    let t1 = sb.tick();
    sb.tick();
    kb.upsert_record(RecordInput::text("second draft").update_of(id, v1))?;
    let old = kb.record_as_of(&id, t1)?.and_then(|r| r.text().map(str::to_owned));
    let by_version = kb.record_version(&id, 1)?.and_then(|r| r.text().map(str::to_owned));
    let current = kb.peek_record(&id).and_then(|r| r.text().map(str::to_owned));
    let mut ok = old.as_deref() == Some("first draft")
        && by_version.as_deref() == Some("first draft")
        && current.as_deref() == Some("second draft");
    if kb.graph_enabled() {
        kb.assert_triple(Triple::new("sky", "hasColor", "lit:blue"))?;
        let before = sb.tick();
        sb.tick();
        kb.retract_triple("sky", "hasColor", "lit:blue", None)?;
        let pat = TriplePattern::new(Some("sky"), None, None);
        ok &= kb.query_triples(&pat, Some(before))?.len() == 1 && kb.query_triples(&pat, None)?.is_empty();
    }
    Ok(expect(ok, "historical versions not readable"))
}

fn distributed(config: &EngineConfig) -> Result<Outcome> {
    let small = Ring::new(RingConfig {
        node_count: 4,
        ..RingConfig::default()
    })?;
    let large = Ring::new(RingConfig {
        node_count: 5,
        ..RingConfig::default()
    })?;
    let n = 5000;
    let mut moved = 0;
    for i in 0..n {
        let p = PartitionKey::new("probe", &format!("p{i}"))?;
        if small.primary(&p) != large.primary(&p) {
            moved += 1;
        }
    }
    let frac = moved as f64 / n as f64;
    if (frac - 0.2).abs() > 0.05 {
        return Ok(Outcome::Fail(format!("adding a fifth node moved {frac:.3} of partitions")));
    }
    let dir = tempfile::tempdir()?;
    let mut template = config.store.clone();
    template.sync_writes = false;
    let clock = Arc::new(ManualClock::new(SCENARIO_EPOCH));
    let ring = RingConfig {
        node_count: 3,
        vnodes_per_node: 16,
        replication_factor: 3,
    };
    let cluster = SimulatedCluster::open(dir.path(), ring, &template, clock.clone())?;
    let mut parts = Vec::new();
    for i in 0..30 {
        let p = PartitionKey::new("probe", &format!("p{i}"))?;
        cluster.put(&p, Cell::new(b"k".to_vec(), "v", vec![i as u8], clock.advance(1)))?;
        parts.push(p);
    }
    cluster.anti_entropy()?;
    let converged = parts.iter().all(|p| {
        let vals: Vec<Option<Cell>> = (0..3).map(|n| cluster.get(n, p, b"k", "v")).collect();
        vals[0].is_some() && vals.iter().all(|v| *v == vals[0])
    });
    cluster.close()?;
    Ok(expect(converged, "cluster replicas diverged"))
}

fn linking(config: &EngineConfig) -> Result<Outcome> {
    let sb = Sandbox::new(config)?;
    let kb = sb.ns(8)?;
    let (id, _) = kb.upsert_record(RecordInput::text("Napoleon at Waterloo"))?;
    for e in ["napoleon", "waterloo"] {
        kb.link_record_entity(&id, e)?;
    }
    let back: BTreeSet<String> = kb.entities_of_record(&id)?.into_iter().collect();
    let ok = kb.records_of_entity("napoleon")? == vec![id]
        && back == BTreeSet::from(["napoleon".to_string(), "waterloo".to_string()]);
    Ok(expect(ok, "links did not round-trip"))
}

fn compression(config: &EngineConfig) -> Result<Outcome> {
    let write = |codec: Codec| -> Result<(u64, Vec<(PartitionKey, Cell)>)> {
        let dir = tempfile::tempdir()?;
        let mut cfg = config.store.clone();
        cfg.dir = dir.path().to_path_buf();
        cfg.codec = codec;
        cfg.sync_writes = false;
        let clock = Arc::new(ManualClock::new(SCENARIO_EPOCH));
        let store = Store::open_with_clock(cfg.clone(), clock.clone())?;
        let part = PartitionKey::new("probe", "readings")?;
        for i in 0..500u32 {
            let key = format!("sensor-0042/2024-03-04T{:02}:{:02}", i / 60, i % 60);
            store.put(&part, Cell::new(key.into_bytes(), "celsius", (i % 7).to_be_bytes().to_vec(), clock.advance(1)))?;
        }
        store.flush()?;
        let size: u64 = store
            .segments()
            .iter()
            .map(|m| std::fs::metadata(store.segment_path(m.id)).map(|md| md.len()).unwrap_or(0))
            .sum();
        store.close()?;
        let reopened = Store::open_with_clock(cfg, clock)?;
        let scan = reopened.scan_all(None);
        reopened.close()?;
        Ok((size, scan))
    };
    let (packed, a) = write(Codec::PrefixVarint)?;
    let (plain, b) = write(Codec::None)?;
    if a != b || a.len() != 500 {
        return Ok(Outcome::Fail("codec round trip lost data".into()));
    }
    Ok(if packed < plain {
        Outcome::Pass
    } else {
        Outcome::Partial(format!("compressed {packed} bytes vs {plain} uncompressed"))
    })
}

fn online_update(config: &EngineConfig) -> Result<Outcome> {
    let sb = Sandbox::new(config)?;
    let kb = sb.ns(8)?;
    let (id, _) = kb.upsert_record(RecordInput::text("revision 0").with_embedding(test_embed("revision 0", 8)?))?;
    let stop = std::sync::atomic::AtomicBool::new(false);
    let regressions = std::sync::atomic::AtomicUsize::new(0);
    let outcome: Result<()> = std::thread::scope(|s| {
        for _ in 0..3 {
            s.spawn(|| {
                let mut last = 0;
                while !stop.load(std::sync::atomic::Ordering::Relaxed) {
                    let v = kb.peek_record(&id).map_or(0, |r| r.version);
                    let knn_ok = kb.knn(&test_embed("revision", 8).unwrap_or_default(), 1, KnnMode::Exact).is_ok();
                    if v < last || !knn_ok {
                        regressions.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    }
                    last = v;
                }
            });
        }
        let mut version = 1;
        let res = (|| {
            for i in 1..=100 {
                sb.tick();
                let text = format!("revision {i}");
                let input = RecordInput::text(text.clone())
                    .with_embedding(test_embed(&text, 8)?)
                    .update_of(id, version);
                version = kb.upsert_record(input)?.1;
            }
            Ok(())
        })();
        stop.store(true, std::sync::atomic::Ordering::Relaxed);
        res
    });
    outcome?;
    let final_version = kb.peek_record(&id).map(|r| r.version);
    Ok(expect(
        regressions.into_inner() == 0 && final_version == Some(101),
        "readers observed an inconsistent record",
    ))
}

fn reasoning(config: &EngineConfig) -> Result<Outcome> {
    let sb = Sandbox::new(config)?;
    let kb = sb.ns(8)?;
    small_graph(&kb, &sb, 19, 25)?;
    let rules = vec![
        Rule {
            id: "transitive-knows".into(),
            premises: vec![Pattern::new("?x", "knows", "?y"), Pattern::new("?y", "knows", "?z")],
            conclusion: Pattern::new("?x", "knows", "?z"),
            confidence: 0.9,
        },
        Rule {
            id: "likes-near".into(),
            premises: vec![Pattern::new("?x", "likes", "?y"), Pattern::new("?y", "near", "?z")],
            conclusion: Pattern::new("?x", "visits", "?z"),
            confidence: 0.8,
        },
    ];
    let fix = forward_chain(&kb.fact_base(), &rules, None);
    let goal = Pattern::new("?a", "visits", "?b");
    let want: BTreeSet<(String, String)> = fix
        .keys()
        .filter(|f| f.1 == "visits")
        .map(|f| (f.0.clone(), f.2.clone()))
        .collect();
    let proof = kb.reason(&goal, &rules, Some(usize::MAX))?;
    let got: BTreeSet<(String, String)> = proof
        .answers
        .iter()
        .filter_map(|a| Some((a.bindings.get("a")?.clone(), a.bindings.get("b")?.clone())))
        .collect();
    if want.is_empty() {
        return Err(CoreError::Scenario("reasoning probe fixture derives nothing".into()));
    }
    Ok(expect(got == want, "reasoning answers differ from the fixpoint"))
}
