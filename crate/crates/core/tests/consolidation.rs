//! Tier decisions against a straight re-implementation of the retention rule.

use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use colma_core::coordination::RetentionPolicy;
use colma_core::knowledge::{RecordInput, Tier};
use colma_core::storage::{ManualClock, MICROS_PER_DAY};
use colma_core::{Engine, EngineConfig, RecordId};

const T0: i64 = 1_700_000_000_000_000;

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

fn run_trace(seed: u64, n: usize) {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = EngineConfig::with_dir(dir.path());
    cfg.store.sync_writes = false;
    let policy = cfg.policy;
    let clock = Arc::new(ManualClock::new(T0));
    let engine = Engine::open_with_clock(cfg, clock.clone()).unwrap();
    let kb = engine.namespace("trace").unwrap();
    let mut rng = StdRng::seed_from_u64(seed);
    let mut shadow: BTreeMap<RecordId, Shadow> = BTreeMap::new();
    let mut ids = Vec::new();
    for i in 0..n {
        let mut now = clock.advance(rng.random_range(1..3_600_000_000));
        let sal = (rng.random_range(0..=100) as f64) / 100.0;
        let (id, _) = kb.upsert_record(RecordInput::text(format!("memory {i}")).with_salience(sal)).unwrap();
        shadow.insert(id, Shadow { tier: Tier::Short, salience: sal, count: 0, last_access: now });
        ids.push(id);
        // Random accesses and reinforcements against earlier records.
        for _ in 0..rng.random_range(0..3) {
            let id = ids[rng.random_range(0..ids.len())];
            let s = shadow.get_mut(&id).unwrap();
            if rng.random_bool(0.7) {
                let got = kb.get_record(&id, None).unwrap();
                assert_eq!(got.is_some(), s.tier != Tier::Archived);
                if got.is_some() {
                    s.count += 1;
                    s.last_access = s.last_access.max(now);
                }
            } else if s.tier != Tier::Archived {
                let d = rng.random_range(-0.3..0.3);
                kb.reinforce(&id, d).unwrap();
                s.salience = (s.salience + d).clamp(0.0, 1.0);
                s.count += 1;
                s.last_access = s.last_access.max(now);
            }
        }
        if i % 50 == 49 {
            now = clock.advance(rng.random_range(0..3 * MICROS_PER_DAY));
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
            if forget_only {
                let mut got = kb.forget_tick(now).unwrap();
                got.sort();
                assert_eq!(got, want_archived);
            } else {
                let report = kb.consolidate_tick(now).unwrap();
                let mut got_p = report.promoted.clone();
                got_p.sort();
                let mut got_a = report.archived.clone();
                got_a.sort();
                assert_eq!(got_p, want_promoted, "seed {seed} record {i}");
                assert_eq!(got_a, want_archived);
                // A second tick at the same instant is a no-op.
                assert!(kb.consolidate_tick(now).unwrap().is_empty());
            }
            for (id, _, to) in &want_promoted {
                shadow.get_mut(id).unwrap().tier = *to;
            }
            for id in &want_archived {
                shadow.get_mut(id).unwrap().tier = Tier::Archived;
            }
        }
    }
    for (id, s) in &shadow {
        let r = kb.peek_record(id).unwrap();
        assert_eq!(r.tier, s.tier);
        assert_eq!(r.access_count, s.count);
        assert!((r.salience - s.salience).abs() < 1e-12);
    }
}

#[test]
fn tick_decisions_match_oracle() {
    for seed in 0..3 {
        run_trace(seed, 400);
    }
}

proptest! {
    #[test]
    fn retention_score_is_monotone(dt in 0.0f64..400.0, ddt in 0.0f64..50.0, n in 0u64..200, dn in 0u64..20, sal in 0.0f64..=1.0, dsal in 0.0f64..=1.0) {
        let p = RetentionPolicy::default();
        for tier in [Tier::Short, Tier::Medium, Tier::Long] {
            let r = p.score(tier, dt, n, sal);
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert!(p.score(tier, dt + ddt, n, sal) <= r);
            prop_assert!(p.score(tier, dt, n + dn, sal) >= r);
            prop_assert!(p.score(tier, dt, n, (sal + dsal).min(1.0)) >= r);
        }
        // Longer-lived tiers decay no faster.
        prop_assert!(p.score(Tier::Long, dt, n, sal) >= p.score(Tier::Medium, dt, n, sal));
        prop_assert!(p.score(Tier::Medium, dt, n, sal) >= p.score(Tier::Short, dt, n, sal));
    }
}
