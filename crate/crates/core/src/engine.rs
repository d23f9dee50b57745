//! The assembled engine: one store shared by any number of namespaces.

use std::collections::BTreeMap;
use std::sync::Arc;

use parking_lot::RwLock;

use colma_storage::{Clock, MutationBatch, Store, SystemClock};

use crate::config::EngineConfig;
use crate::error::Result;
use crate::knowledge::{validate_namespace, Knowledge};

pub struct Engine {
    store: Store,
    config: Arc<EngineConfig>,
    namespaces: RwLock<BTreeMap<String, Arc<Knowledge>>>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("dir", &self.store.dir()).finish()
    }
}

impl Engine {
    pub fn open(config: EngineConfig) -> Result<Self> {
        Self::open_with_clock(config, Arc::new(SystemClock))
    }

    pub fn open_with_clock(config: EngineConfig, clock: Arc<dyn Clock>) -> Result<Self> {
        config.validate()?;
        let store = Store::open_with_clock(config.store.clone(), clock)?;
        Ok(Self {
            store,
            config: Arc::new(config),
            namespaces: RwLock::new(BTreeMap::new()),
        })
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn now(&self) -> i64 {
        self.store.now()
    }

    /// Handle for namespace `name`, loading or creating it as needed.
    pub fn namespace(&self, name: &str) -> Result<Arc<Knowledge>> {
        if let Some(kb) = self.namespaces.read().get(name) {
            return Ok(kb.clone());
        }
        validate_namespace(name)?;
        let mut map = self.namespaces.write();
        if let Some(kb) = map.get(name) {
            return Ok(kb.clone());
        }
        let kb = Arc::new(Knowledge::load(self.store.clone(), self.config.clone(), name, None)?);
        map.insert(name.to_owned(), kb.clone());
        Ok(kb)
    }

    /// Creates a namespace with an explicit embedding dimension.
    pub fn create_namespace(&self, name: &str, dim: usize) -> Result<Arc<Knowledge>> {
        let mut map = self.namespaces.write();
        if let Some(kb) = map.get(name) {
            if kb.dim() != dim {
                return Err(crate::CoreError::DimensionMismatch {
                    expected: kb.dim(),
                    got: dim,
                });
            }
            return Ok(kb.clone());
        }
        let kb = Arc::new(Knowledge::load(self.store.clone(), self.config.clone(), name, Some(dim))?);
        map.insert(name.to_owned(), kb.clone());
        Ok(kb)
    }

    /// Namespaces with persisted data, ascending.
    pub fn namespaces(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .store
            .partitions()
            .iter()
            .map(|p| p.namespace().to_owned())
            .collect();
        names.dedup();
        names
    }

    /// Replication delta for one namespace.
    pub fn sync_delta(&self, namespace: &str, since: u64) -> Result<MutationBatch> {
        validate_namespace(namespace)?;
        Ok(self.store.sync_delta_namespace(namespace, since))
    }

    /// Applies a delta and refreshes the in-memory state of every namespace
    /// it touched. Returns the new local max seqno.
    pub fn apply_delta(&self, batch: &MutationBatch) -> Result<u64> {
        let seq = self.store.apply_delta(batch)?;
        let mut touched: Vec<&str> = batch.mutations.iter().map(|m| m.partition.namespace()).collect();
        touched.sort_unstable();
        touched.dedup();
        for ns in touched {
            self.namespace(ns)?.reload()?;
        }
        Ok(seq)
    }

    pub fn close(&self) -> Result<()> {
        Ok(self.store.close()?)
    }
}
