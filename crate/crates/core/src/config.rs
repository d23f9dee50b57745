//! Engine configuration. Every field has a default, so a config file only
//! needs the keys it changes.

use serde::{Deserialize, Serialize};

use colma_storage::StoreConfig;

use crate::coordination::RetentionPolicy;
use crate::error::{CoreError, Result};
use crate::knowledge::vector::HnswParams;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CognitionConfig {
    /// Activation multiplier per graph hop.
    pub hop_decay: f64,
    pub max_hops: usize,
    /// Weight applied to cosine scores of vector neighbours in association.
    pub knn_weight: f64,
    /// Fragments fetched by vector similarity in each recall round.
    pub recall_k: usize,
    pub recall_max_rounds: usize,
    pub recall_accept: f64,
    /// Salience added to every fragment a recall returns.
    pub recall_reinforce: f64,
    pub reason_max_depth: usize,
    /// Confidence multiplier for answers only the heuristic path produced.
    pub heuristic_only_factor: f64,
    pub ema_alpha: f64,
    pub update_max_rounds: usize,
    pub update_accept: f64,
    /// Salience added to source records when an update is reinforced.
    pub update_reinforce: f64,
}

impl Default for CognitionConfig {
    fn default() -> Self {
        Self {
            hop_decay: 0.5,
            max_hops: 3,
            knn_weight: 0.8,
            recall_k: 16,
            recall_max_rounds: 5,
            recall_accept: 0.7,
            recall_reinforce: 0.05,
            reason_max_depth: 4,
            heuristic_only_factor: 0.5,
            ema_alpha: 0.2,
            update_max_rounds: 3,
            update_accept: 0.7,
            update_reinforce: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub store: StoreConfig,
    /// Embedding dimension for namespaces created without an explicit one.
    pub default_dim: usize,
    pub policy: RetentionPolicy,
    pub cognition: CognitionConfig,
    pub hnsw: HnswParams,
    /// With the graph layer off, triple, link and reasoning operations fail
    /// with [`crate::CoreError::Disabled`].
    pub graph_enabled: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            store: StoreConfig::default(),
            default_dim: 64,
            policy: RetentionPolicy::default(),
            cognition: CognitionConfig::default(),
            hnsw: HnswParams::default(),
            graph_enabled: true,
        }
    }
}

impl EngineConfig {
    /// Rejects settings the engine cannot run with.
    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        let bad = |m: &str| Err(CoreError::InvalidConfig(m.to_owned()));
        if self.default_dim == 0 {
            return bad("default_dim must be positive");
        }
        if self.hnsw.m < 2 || self.hnsw.m0 < self.hnsw.m || self.hnsw.ef_construction == 0 || self.hnsw.ef_search == 0 {
            return bad("hnsw: need m >= 2, m0 >= m and positive ef values");
        }
        let c = &self.cognition;
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if !unit(c.hop_decay) || !unit(c.ema_alpha) || !unit(c.heuristic_only_factor) {
            return bad("cognition: hop_decay, ema_alpha and heuristic_only_factor must lie in (0, 1]");
        }
        if !unit(c.recall_accept) || !unit(c.update_accept) {
            return bad("cognition: acceptance thresholds must lie in (0, 1]");
        }
        if c.recall_max_rounds == 0 || c.update_max_rounds == 0 || c.reason_max_depth == 0 {
            return bad("cognition: round and depth limits must be positive");
        }
        Ok(())
    }

    pub fn with_dir(dir: impl Into<std::path::PathBuf>) -> Self {
        Self {
            store: StoreConfig::new(dir),
            ..Self::default()
        }
    }
}
