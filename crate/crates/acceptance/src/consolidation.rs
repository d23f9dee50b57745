//! Tier decisions of consolidation and forgetting against a direct
//! evaluation of the retention score.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use colma_core::coordination::RetentionPolicy;
use colma_core::knowledge::{RecordInput, Tier};
use colma_core::storage::{ManualClock, MICROS_PER_DAY};
use colma_core::{Engine, EngineConfig, RecordId};

use crate::{ensure, ok, Outcome};

const T0: i64 = 1_700_000_000_000_000;
const RECORDS: usize = 1000;

#[derive(Clone, Debug)]
struct Shadow {
    tier: Tier,
    salience: f64,
    count: u64,
    last_access: i64,
}

fn oracle_score(p: &RetentionPolicy, s: &Shadow, now: i64) -> f64 {
    let lambda = match s.tier {
        Tier::Short => p.lambda_short,
        Tier::Medium => p.lambda_medium,
        _ => p.lambda_long,
    };
    let days = ((now - s.last_access) as f64 / MICROS_PER_DAY as f64).max(0.0);
    p.w_recency * (-lambda * days).exp() + p.w_frequency * (1.0 - (-(s.count as f64) / 5.0).exp()) + p.w_salience * s.salience
}

/// A 1000-record trace of writes, reads and reinforcements with a tick every
/// 25 records (a fifth of them forget-only). Promotions and archivals must
/// equal the records whose oracle score crosses the thresholds, a repeated
/// tick must do nothing, and final tiers, counts and salience must match.
/// Then 10k sampled inputs check the score is monotone in each argument.
pub fn oracle() -> Outcome {
    let dir = ok(tempfile::tempdir(), "tempdir")?;
    let mut cfg = EngineConfig::with_dir(dir.path());
    cfg.store.sync_writes = false;
    let policy = cfg.policy;
    let clock = Arc::new(ManualClock::new(T0));
    let engine = ok(Engine::open_with_clock(cfg, clock.clone()), "open")?;
    let kb = ok(engine.namespace("trace"), "namespace")?;
    let mut rng = StdRng::seed_from_u64(77);
    let mut shadow: BTreeMap<RecordId, Shadow> = BTreeMap::new();
    let mut ids = Vec::new();
    let (mut promoted, mut archived, mut ticks) = (0, 0, 0);
    for i in 0..RECORDS {
        let now = clock.advance(rng.random_range(1..3_600_000_000));
        let sal = f64::from(rng.random_range(0..=100u8)) / 100.0;
        let (id, _) = ok(kb.upsert_record(RecordInput::text(format!("memory {i}")).with_salience(sal)), "upsert")?;
        shadow.insert(id, Shadow { tier: Tier::Short, salience: sal, count: 0, last_access: now });
        ids.push(id);
        for _ in 0..rng.random_range(0..4) {
            let id = ids[rng.random_range(0..ids.len())];
            let Some(s) = shadow.get_mut(&id) else { continue };
            if rng.random_bool(0.7) {
                let got = ok(kb.get_record(&id, None), "get")?;
                ensure!(got.is_some() == (s.tier != Tier::Archived), "record {id} visibility disagrees with tier {:?}", s.tier);
                if got.is_some() {
                    s.count += 1;
                    s.last_access = s.last_access.max(now);
                }
            } else if s.tier != Tier::Archived {
                let d = rng.random_range(-0.3..0.3);
                ok(kb.reinforce(&id, d), "reinforce")?;
                s.salience = (s.salience + d).clamp(0.0, 1.0);
                s.count += 1;
                s.last_access = s.last_access.max(now);
            }
        }
        if i % 25 != 24 {
            continue;
        }
        let now = clock.advance(rng.random_range(0..3 * MICROS_PER_DAY));
        let forget_only = rng.random_bool(0.2);
        let mut want_promoted = Vec::new();
        let mut want_archived = Vec::new();
        for (id, s) in &shadow {
            if s.tier == Tier::Archived {
                continue;
            }
            let r = oracle_score(&policy, s, now);
            if r >= policy.promote_threshold && matches!(s.tier, Tier::Short | Tier::Medium) {
                if !forget_only {
                    let to = if s.tier == Tier::Short { Tier::Medium } else { Tier::Long };
                    want_promoted.push((*id, s.tier, to));
                }
            } else if r < policy.archive_threshold {
                want_archived.push(*id);
            }
        }
        ticks += 1;
        if forget_only {
            let mut got = ok(kb.forget_tick(now), "forget_tick")?;
            got.sort();
            ensure!(got == want_archived, "forget tick after record {i}: archived {} want {}", got.len(), want_archived.len());
            ensure!(ok(kb.forget_tick(now), "forget_tick")?.is_empty(), "repeated forget tick changed tiers");
        } else {
            let report = ok(kb.consolidate_tick(now), "consolidate_tick")?;
            let mut got_p = report.promoted.clone();
            got_p.sort();
            let mut got_a = report.archived.clone();
            got_a.sort();
            ensure!(got_p == want_promoted, "tick after record {i}: promoted {got_p:?} want {want_promoted:?}");
            ensure!(got_a == want_archived, "tick after record {i}: archived {got_a:?} want {want_archived:?}");
            ensure!(ok(kb.consolidate_tick(now), "consolidate_tick")?.is_empty(), "repeated tick changed tiers");
        }
        promoted += want_promoted.len();
        archived += want_archived.len();
        for (id, _, to) in &want_promoted {
            if let Some(s) = shadow.get_mut(id) {
                s.tier = *to;
            }
        }
        for id in &want_archived {
            if let Some(s) = shadow.get_mut(id) {
                s.tier = Tier::Archived;
            }
        }
    }
    for (id, s) in &shadow {
        let r = kb.peek_record(id).ok_or(format!("record {id} vanished"))?;
        ensure!(r.tier == s.tier, "record {id}: tier {:?} want {:?}", r.tier, s.tier);
        ensure!(r.access_count == s.count, "record {id}: access count {} want {}", r.access_count, s.count);
        ensure!((r.salience - s.salience).abs() < 1e-12, "record {id}: salience {} want {}", r.salience, s.salience);
    }
    ensure!(promoted > 0 && archived > 0, "trace exercised too little: {promoted} promotions, {archived} archivals");

    let samples = monotonicity(&policy)?;
    Ok(format!("{ticks} ticks over {RECORDS} records, {promoted} promotions and {archived} archivals as predicted; {samples} monotonicity samples"))
}

fn monotonicity(p: &RetentionPolicy) -> Result<usize, String> {
    let mut rng = StdRng::seed_from_u64(78);
    let n = 10_000;
    for _ in 0..n {
        let dt = rng.random_range(0.0..400.0);
        let ddt = rng.random_range(0.0..50.0);
        let count = rng.random_range(0..200u64);
        let dn = rng.random_range(0..20u64);
        let sal = rng.random_range(0.0..=1.0);
        let dsal = rng.random_range(0.0..=1.0);
        for tier in [Tier::Short, Tier::Medium, Tier::Long] {
            let r = p.score(tier, dt, count, sal);
            ensure!((0.0..=1.0).contains(&r), "score {r} outside [0, 1]");
            ensure!(p.score(tier, dt + ddt, count, sal) <= r, "score rose with age at dt={dt}");
            ensure!(p.score(tier, dt, count + dn, sal) >= r, "score fell with accesses at n={count}");
            ensure!(p.score(tier, dt, count, (sal + dsal).min(1.0)) >= r, "score fell with salience at {sal}");
        }
        ensure!(p.score(Tier::Long, dt, count, sal) >= p.score(Tier::Medium, dt, count, sal), "long decays faster than medium");
        ensure!(p.score(Tier::Medium, dt, count, sal) >= p.score(Tier::Short, dt, count, sal), "medium decays faster than short");
    }
    Ok(n)
}
