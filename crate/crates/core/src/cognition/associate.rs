//! Spreading activation. Seeds start at 1.0; every simple path of at most
//! `max_hops` edges from a seed adds `hop_decay^length` to its end node, over
//! the undirected graph of live triples between entity nodes (literals are
//! not nodes). Sums are clamped to 1.0. With a cue embedding, vector
//! neighbours add `cosine · knn_weight` under their `rec:<id>` node.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::Cue;
use crate::error::{CoreError, Result};
use crate::knowledge::{Direction, KnnMode, Knowledge, TripleStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Activation {
    /// Entity name or `rec:<id>`.
    pub node: String,
    pub activation: f64,
}

/// Path-sum activation from `seeds` over `adjacent`, before clamping.
pub fn path_sums(
    seeds: &[String],
    max_hops: usize,
    decay: f64,
    adjacent: &mut dyn FnMut(&str) -> BTreeSet<String>,
) -> BTreeMap<String, f64> {
    fn walk(
        node: &str,
        depth: usize,
        weight: f64,
        max_hops: usize,
        decay: f64,
        on_path: &mut Vec<String>,
        adjacent: &mut dyn FnMut(&str) -> BTreeSet<String>,
        acc: &mut BTreeMap<String, f64>,
    ) {
        if depth == max_hops {
            return;
        }
        for nb in adjacent(node) {
            if on_path.contains(&nb) {
                continue;
            }
            let w = weight * decay;
            *acc.entry(nb.clone()).or_default() += w;
            on_path.push(nb.clone());
            walk(&nb, depth + 1, w, max_hops, decay, on_path, adjacent, acc);
            on_path.pop();
        }
    }
    let mut acc = BTreeMap::new();
    for s in seeds {
        *acc.entry(s.clone()).or_default() += 1.0;
        let mut on_path = vec![s.clone()];
        walk(s, 0, 1.0, max_hops, decay, &mut on_path, adjacent, &mut acc);
    }
    acc
}

impl Knowledge {
    pub fn associate(&self, cue: &Cue, k: usize) -> Result<Vec<Activation>> {
        if cue.entities.is_empty() && cue.embedding.is_none() {
            return Err(CoreError::InvalidCue("association needs entities or an embedding".into()));
        }
        let cfg = &self.settings().cognition;
        let seeds: Vec<String> = cue
            .entities
            .iter()
            .map(|e| crate::knowledge::triple::normalize_term(e).to_owned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut act = if self.graph_enabled() {
            let st = self.state.read();
            let triples: &TripleStore = &st.triples;
            let mut adj = |n: &str| triples.adjacent(n, Direction::Both);
            path_sums(&seeds, cfg.max_hops, cfg.hop_decay, &mut adj)
        } else {
            seeds.iter().map(|s| (s.clone(), 1.0)).collect()
        };
        if let Some(q) = &cue.embedding {
            for hit in self.knn(q, k.max(1), KnnMode::Exact)? {
                if hit.score > 0.0 {
                    *act.entry(hit.id.node()).or_default() += hit.score * cfg.knn_weight;
                }
            }
        }
        let mut out: Vec<Activation> = act
            .into_iter()
            .filter(|(_, a)| *a > 0.0)
            .map(|(node, a)| Activation {
                node,
                activation: a.min(1.0),
            })
            .collect();
        out.sort_by(|a, b| b.activation.total_cmp(&a.activation).then(a.node.cmp(&b.node)));
        out.truncate(k);
        Ok(out)
    }
}
