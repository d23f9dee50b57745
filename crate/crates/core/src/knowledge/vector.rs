//! Vector similarity: exact brute-force kNN and a layered small-world graph
//! (HNSW) for approximate search. Scores are cosine similarities computed in
//! f64; results sort by descending score, then ascending id.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use colma_storage::hash::SplitMix64;

use crate::error::{CoreError, Result};
use crate::ids::RecordId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredId {
    pub id: RecordId,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KnnMode {
    #[default]
    Exact,
    Approx,
}

pub fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CoreError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(CoreError::UndefinedDirection);
    }
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Descending score, ties by ascending id bytes.
pub fn rank(mut hits: Vec<ScoredId>) -> Vec<ScoredId> {
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    hits
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HnswParams {
    /// Links per node on upper layers.
    pub m: usize,
    /// Links per node on the bottom layer.
    pub m0: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self {
            m: 16,
            m0: 32,
            ef_construction: 200,
            ef_search: 64,
            seed: 0x5eed,
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Near(f32, u32);

impl Eq for Near {}
impl PartialOrd for Near {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Near {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Layered small-world graph over unit-normalised vectors, distance 1 - dot.
#[derive(Debug, Clone)]
pub struct Hnsw {
    params: HnswParams,
    vectors: Vec<Vec<f32>>,
    /// `links[node][layer]`
    links: Vec<Vec<Vec<u32>>>,
    deleted: Vec<bool>,
    entry: Option<u32>,
    max_layer: usize,
    rng: SplitMix64,
}

fn normalized(v: &[f32]) -> Vec<f32> {
    let n = norm(v);
    v.iter().map(|&x| (f64::from(x) / n) as f32).collect()
}

impl Hnsw {
    pub fn new(params: HnswParams) -> Self {
        Self {
            params,
            vectors: Vec::new(),
            links: Vec::new(),
            deleted: Vec::new(),
            entry: None,
            max_layer: 0,
            rng: SplitMix64::new(params.seed),
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    fn dist(&self, q: &[f32], node: u32) -> f32 {
        let v = &self.vectors[node as usize];
        1.0 - q.iter().zip(v).map(|(a, b)| a * b).sum::<f32>()
    }

    fn random_level(&mut self) -> usize {
        let ml = 1.0 / (self.params.m.max(2) as f64).ln();
        let u = 1.0 - self.rng.next_f64();
        ((-u.ln() * ml).floor() as usize).min(16)
    }

    fn search_layer(&self, q: &[f32], entry: &[u32], ef: usize, layer: usize) -> Vec<Near> {
        let mut visited: HashSet<u32> = entry.iter().copied().collect();
        let mut candidates: BinaryHeap<std::cmp::Reverse<Near>> = BinaryHeap::new();
        let mut found: BinaryHeap<Near> = BinaryHeap::new();
        for &e in entry {
            let n = Near(self.dist(q, e), e);
            candidates.push(std::cmp::Reverse(n));
            found.push(n);
        }
        while let Some(std::cmp::Reverse(c)) = candidates.pop() {
            if found.len() >= ef && found.peek().is_some_and(|f| c.0 > f.0) {
                break;
            }
            for &nb in &self.links[c.1 as usize][layer] {
                if !visited.insert(nb) {
                    continue;
                }
                let d = self.dist(q, nb);
                if found.len() < ef || found.peek().is_some_and(|f| d < f.0) {
                    candidates.push(std::cmp::Reverse(Near(d, nb)));
                    found.push(Near(d, nb));
                    if found.len() > ef {
                        found.pop();
                    }
                }
            }
        }
        found.into_sorted_vec()
    }

    /// Neighbour selection that prefers candidates closer to the base than
    /// to any already selected neighbour, topped up with the nearest pruned ones.
    fn select(&self, candidates: &[Near], m: usize) -> Vec<u32> {
        let mut chosen: Vec<Near> = Vec::with_capacity(m);
        let mut pruned = Vec::new();
        for &c in candidates {
            if chosen.len() >= m {
                break;
            }
            let v = &self.vectors[c.1 as usize];
            if chosen.iter().all(|r| self.dist(v, r.1) > c.0) {
                chosen.push(c);
            } else {
                pruned.push(c);
            }
        }
        for p in pruned {
            if chosen.len() >= m {
                break;
            }
            chosen.push(p);
        }
        chosen.into_iter().map(|n| n.1).collect()
    }

    /// Inserts a vector and returns its slot. The vector must have non-zero norm.
    pub fn insert(&mut self, v: &[f32]) -> u32 {
        let q = normalized(v);
        let id = self.vectors.len() as u32;
        let level = self.random_level();
        self.vectors.push(q.clone());
        self.links.push(vec![Vec::new(); level + 1]);
        self.deleted.push(false);
        let Some(mut ep) = self.entry else {
            self.entry = Some(id);
            self.max_layer = level;
            return id;
        };
        for layer in (level + 1..=self.max_layer).rev() {
            ep = self.search_layer(&q, &[ep], 1, layer)[0].1;
        }
        let mut eps = vec![ep];
        for layer in (0..=level.min(self.max_layer)).rev() {
            let w = self.search_layer(&q, &eps, self.params.ef_construction, layer);
            let cap = if layer == 0 { self.params.m0 } else { self.params.m };
            // New nodes take the full degree of the layer, 2M at the bottom.
            let neighbours = self.select(&w, cap);
            self.links[id as usize][layer] = neighbours.clone();
            for nb in neighbours {
                let list = &mut self.links[nb as usize][layer];
                list.push(id);
                if list.len() > cap {
                    let base = self.vectors[nb as usize].clone();
                    let mut cands: Vec<Near> = self.links[nb as usize][layer]
                        .iter()
                        .map(|&x| Near(self.dist(&base, x), x))
                        .collect();
                    cands.sort();
                    self.links[nb as usize][layer] = self.select(&cands, cap);
                }
            }
            eps = w.iter().map(|n| n.1).collect();
        }
        if level > self.max_layer {
            self.max_layer = level;
            self.entry = Some(id);
        }
        id
    }

    /// Marks a slot as removed. It stays in the graph for routing.
    pub fn remove(&mut self, slot: u32) {
        if let Some(d) = self.deleted.get_mut(slot as usize) {
            *d = true;
        }
    }

    /// Up to `k` live slots near `v`, nearest first. Upper layers are
    /// descended with an `ef`-wide beam, not a single greedy point.
    pub fn search(&self, v: &[f32], k: usize, ef: usize) -> Vec<u32> {
        let Some(ep) = self.entry else {
            return Vec::new();
        };
        let q = normalized(v);
        let ef = ef.max(k);
        let mut eps = vec![ep];
        for layer in (1..=self.max_layer).rev() {
            eps = self.search_layer(&q, &eps, ef, layer).into_iter().map(|n| n.1).collect();
        }
        self.search_layer(&q, &eps, ef, 0)
            .into_iter()
            .filter(|n| !self.deleted[n.1 as usize])
            .take(k)
            .map(|n| n.1)
            .collect()
    }
}

/// Current embeddings of retrievable records, searchable exactly or through HNSW.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    dim: usize,
    params: HnswParams,
    vectors: BTreeMap<RecordId, Vec<f32>>,
    graph: Hnsw,
    slot_of: HashMap<RecordId, u32>,
    id_of: Vec<RecordId>,
}

impl VectorIndex {
    pub fn new(dim: usize, params: HnswParams) -> Self {
        Self {
            dim,
            params,
            vectors: BTreeMap::new(),
            graph: Hnsw::new(params),
            slot_of: HashMap::new(),
            id_of: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, id: &RecordId) -> Option<&[f32]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    /// Adds or replaces the embedding of `id`.
    pub fn upsert(&mut self, id: RecordId, v: Vec<f32>) {
        self.remove(&id);
        if norm(&v) == 0.0 {
            // A zero vector has no direction; keep it for exact reads only.
            self.vectors.insert(id, v);
            return;
        }
        let slot = self.graph.insert(&v);
        self.slot_of.insert(id, slot);
        self.id_of.push(id);
        self.vectors.insert(id, v);
    }

    pub fn remove(&mut self, id: &RecordId) {
        if self.vectors.remove(id).is_some() {
            if let Some(slot) = self.slot_of.remove(id) {
                self.graph.remove(slot);
            }
        }
    }

    fn check_query(&self, q: &[f32]) -> Result<()> {
        if q.len() != self.dim {
            return Err(CoreError::DimensionMismatch {
                expected: self.dim,
                got: q.len(),
            });
        }
        if norm(q) == 0.0 {
            return Err(CoreError::UndefinedDirection);
        }
        Ok(())
    }

    pub fn knn(&self, q: &[f32], k: usize, mode: KnnMode) -> Result<Vec<ScoredId>> {
        self.check_query(q)?;
        if k == 0 {
            return Ok(Vec::new());
        }
        let hits: Vec<ScoredId> = match mode {
            KnnMode::Exact => self
                .vectors
                .iter()
                .filter_map(|(id, v)| cosine_similarity(q, v).ok().map(|score| ScoredId { id: *id, score }))
                .collect(),
            KnnMode::Approx => self
                .graph
                .search(q, k, self.params.ef_search)
                .into_iter()
                .map(|slot| {
                    let id = self.id_of[slot as usize];
                    ScoredId {
                        id,
                        score: cosine_similarity(q, &self.vectors[&id]).unwrap_or(0.0),
                    }
                })
                .collect(),
        };
        let mut ranked = rank(hits);
        ranked.truncate(k);
        Ok(ranked)
    }
}
