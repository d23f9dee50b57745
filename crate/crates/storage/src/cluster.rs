//! In-process cluster of stores placed by a [`Ring`], used to exercise
//! replication and anti-entropy without a network.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::Mutex;

use crate::cell::{Cell, MutationBatch};
use crate::clock::Clock;
use crate::error::Result;
use crate::key::PartitionKey;
use crate::ring::{NodeId, Ring, RingConfig};
use crate::store::{Store, StoreConfig};

pub struct SimulatedCluster {
    ring: Ring,
    nodes: Vec<Store>,
    /// Highest seqno of `source` already shipped to `target`, per partition.
    watermarks: Mutex<BTreeMap<(NodeId, NodeId, PartitionKey), u64>>,
    root: PathBuf,
}

impl SimulatedCluster {
    /// Opens one store per node under `root/node-<id>`.
    pub fn open(root: &Path, ring: RingConfig, template: &StoreConfig, clock: Arc<dyn Clock>) -> Result<Self> {
        let ring = Ring::new(ring)?;
        let mut nodes = Vec::new();
        for id in 0..ring.config().node_count {
            let cfg = StoreConfig {
                dir: root.join(format!("node-{id}")),
                ..template.clone()
            };
            nodes.push(Store::open_with_clock(cfg, clock.clone())?);
        }
        Ok(Self {
            ring,
            nodes,
            watermarks: Mutex::new(BTreeMap::new()),
            root: root.to_path_buf(),
        })
    }

    pub fn ring(&self) -> &Ring {
        &self.ring
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn node(&self, id: NodeId) -> &Store {
        &self.nodes[id as usize]
    }

    pub fn replicas(&self, partition: &PartitionKey) -> Vec<NodeId> {
        self.ring.locate(partition)
    }

    /// Writes to the partition's primary only; replicas catch up on the next
    /// anti-entropy pass.
    pub fn put(&self, partition: &PartitionKey, cell: Cell) -> Result<NodeId> {
        let primary = self.ring.primary(partition);
        self.node(primary).put(partition, cell)?;
        Ok(primary)
    }

    pub fn get(&self, node: NodeId, partition: &PartitionKey, clustering: &[u8], column: &str) -> Option<Cell> {
        self.node(node).get(partition, clustering, column, None)
    }

    /// Pushes every replica's unseen mutations to every other replica of
    /// each partition. Returns the number of mutations shipped.
    pub fn anti_entropy(&self) -> Result<usize> {
        let mut partitions = std::collections::BTreeSet::new();
        for n in &self.nodes {
            partitions.extend(n.partitions());
        }
        let mut shipped = 0;
        for p in partitions {
            let owners = self.ring.locate(&p);
            for &src in &owners {
                for &dst in &owners {
                    if src == dst {
                        continue;
                    }
                    let key = (src, dst, p.clone());
                    let since = self.watermarks.lock().get(&key).copied().unwrap_or(0);
                    let batch: MutationBatch = self.node(src).sync_delta(&p, since);
                    if let Some(max) = batch.max_seqno() {
                        self.node(dst).apply_delta(&batch)?;
                        shipped += batch.len();
                        self.watermarks.lock().insert(key, max);
                    }
                }
            }
        }
        Ok(shipped)
    }

    pub fn close(&self) -> Result<()> {
        for n in &self.nodes {
            n.close()?;
        }
        Ok(())
    }
}
