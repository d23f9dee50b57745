//! Vector search: exact mode against brute force, approximate mode recall.

use std::collections::HashMap;
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use colma_core::storage::ManualClock;
use colma_core::{Engine, EngineConfig, KnnMode, RecordInput};

use crate::{ensure, ok, Outcome};

const N: usize = 10_000;
const DUPLICATES: usize = 500;
const DIM: usize = 64;
const QUERIES: usize = 100;
const K: usize = 10;

fn unit(rng: &mut StdRng) -> Vec<f32> {
    let v: Vec<f32> = (0..DIM).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        dot += f64::from(*x) * f64::from(*y);
        na += f64::from(*x) * f64::from(*x);
        nb += f64::from(*y) * f64::from(*y);
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// 10k unit vectors in 64 dimensions, 500 of them exact copies of others so
/// that ties occur. Half the 100 queries are fresh random directions, half
/// are stored vectors (whose copies tie at the top). Exact mode must equal a
/// brute-force top-10 ordered by score, then id; approximate mode must reach
/// recall@10 of at least 0.95, where any hit scoring as high as the true
/// 10th neighbour counts.
pub fn knn() -> Outcome {
    let dir = ok(tempfile::tempdir(), "tempdir")?;
    let mut cfg = EngineConfig::with_dir(dir.path());
    cfg.store.sync_writes = false;
    cfg.default_dim = DIM;
    let engine = ok(Engine::open_with_clock(cfg, Arc::new(ManualClock::new(0))), "open")?;
    let kb = ok(engine.namespace("vectors"), "namespace")?;
    let mut rng = StdRng::seed_from_u64(31);
    let mut stored: Vec<(String, Vec<f32>)> = Vec::with_capacity(N);
    for i in 0..N {
        let v = if i >= N - DUPLICATES {
            stored[rng.random_range(0..N - DUPLICATES)].1.clone()
        } else {
            unit(&mut rng)
        };
        let (id, _) = ok(kb.upsert_record(RecordInput::text(format!("v{i}")).with_embedding(v.clone())), "upsert")?;
        stored.push((id.to_hex(), v));
    }

    let by_id: HashMap<&str, &[f32]> = stored.iter().map(|(id, v)| (id.as_str(), v.as_slice())).collect();
    // Hits on fresh and on stored-vector queries.
    let mut hits = [0usize; 2];
    let mut tied_queries = 0usize;
    for q in 0..QUERIES {
        let query = if q % 2 == 0 { unit(&mut rng) } else { stored[rng.random_range(0..N)].1.clone() };
        let mut brute: Vec<(f64, &str)> = stored.iter().map(|(id, v)| (cosine(&query, v), id.as_str())).collect();
        brute.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
        brute.truncate(K);
        if brute.windows(2).any(|w| w[0].0 == w[1].0) {
            tied_queries += 1;
        }

        let exact = ok(kb.knn(&query, K, KnnMode::Exact), "exact knn")?;
        ensure!(exact.len() == K, "query {q}: exact returned {} hits", exact.len());
        for (rank, (got, want)) in exact.iter().zip(&brute).enumerate() {
            ensure!(got.id.to_hex() == want.1, "query {q} rank {rank}: exact mode returned {} instead of {}", got.id, want.1);
            ensure!((got.score - want.0).abs() <= 1e-9, "query {q} rank {rank}: score {} vs {}", got.score, want.0);
        }

        let approx = ok(kb.knn(&query, K, KnnMode::Approx), "approx knn")?;
        let kth = brute[K - 1].0;
        hits[q % 2] += approx.iter().filter(|h| cosine(&query, by_id[h.id.to_hex().as_str()]) >= kth - 1e-12).count();
    }
    let recall = (hits[0] + hits[1]) as f64 / (QUERIES * K) as f64;
    let half = (QUERIES / 2 * K) as f64;
    let (fresh, known) = (hits[0] as f64 / half, hits[1] as f64 / half);
    ensure!(recall >= 0.95, "approximate recall@10 {recall:.4} < 0.95 (fresh queries {fresh:.3}, stored {known:.3})");
    Ok(format!(
        "exact top-10 identical on {QUERIES} queries ({tied_queries} with ties); approx recall@10 {recall:.4} (fresh queries {fresh:.3}, stored {known:.3})"
    ))
}
