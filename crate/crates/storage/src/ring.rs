//! Consistent-hash placement of partitions onto nodes.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StorageError};
use crate::hash::stable_hash64;
use crate::key::PartitionKey;

pub type NodeId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RingConfig {
    pub node_count: u32,
    pub vnodes_per_node: u32,
    pub replication_factor: u32,
}

impl Default for RingConfig {
    fn default() -> Self {
        Self {
            node_count: 1,
            vnodes_per_node: 64,
            replication_factor: 1,
        }
    }
}

impl RingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.node_count == 0 {
            return Err(StorageError::InvalidRing("node_count must be positive".into()));
        }
        if self.vnodes_per_node == 0 {
            return Err(StorageError::InvalidRing("vnodes_per_node must be positive".into()));
        }
        if self.replication_factor == 0 || self.replication_factor > self.node_count {
            return Err(StorageError::InvalidRing(format!(
                "replication_factor {} must be in 1..={}",
                self.replication_factor, self.node_count
            )));
        }
        Ok(())
    }
}

/// Stable hash of (node, vnode). Node 0's tokens are these values directly;
/// later nodes use it to jitter where they split an existing range.
pub fn vnode_hash(node: NodeId, vnode: u32) -> u64 {
    let mut buf = [0u8; 8];
    buf[..4].copy_from_slice(&node.to_le_bytes());
    buf[4..].copy_from_slice(&vnode.to_le_bytes());
    stable_hash64(&buf)
}

pub fn partition_token(partition: &PartitionKey) -> u64 {
    stable_hash64(partition.as_bytes())
}

const RING: u128 = 1 << 64;

/// Sorted token ring. Placement is a pure function of the config, so every
/// process computes the same owners.
///
/// Tokens are allocated node by node. Node 0 places its vnodes at
/// `vnode_hash(0, v)`. Each later node `k` places vnode `v` by cutting a slice
/// off the largest range of the currently richest node, sized so that `k`
/// converges on a 1/(k+1) share, with the cut point jittered by
/// `vnode_hash(k, v)`. A ring of n nodes is therefore the ring of n-1 nodes
/// plus node n-1's tokens: dropping the highest node only moves the keys it
/// owned, and ownership stays within a few percent of even.
#[derive(Debug, Clone)]
pub struct Ring {
    config: RingConfig,
    tokens: Vec<(u64, NodeId)>,
}

/// Length of the range ending at `tokens[i]` (exclusive start, inclusive end).
fn range_len(tokens: &[(u64, NodeId)], i: usize) -> u128 {
    let t = u128::from(tokens[i].0);
    if i == 0 {
        t + RING - u128::from(tokens[tokens.len() - 1].0)
    } else {
        t - u128::from(tokens[i - 1].0)
    }
}

fn allocate(config: &RingConfig) -> Vec<(u64, NodeId)> {
    let vnodes = config.vnodes_per_node;
    let mut tokens: Vec<(u64, NodeId)> = (0..vnodes).map(|v| (vnode_hash(0, v), 0)).collect();
    tokens.sort_unstable();
    tokens.dedup_by_key(|t| t.0);
    let mut owned = vec![0u128; config.node_count as usize];
    owned[0] = RING;
    for node in 1..config.node_count {
        let target = RING / u128::from(node + 1);
        for v in 0..vnodes {
            let rich = (0..node as usize)
                .max_by(|&a, &b| owned[a].cmp(&owned[b]).then(b.cmp(&a)))
                .unwrap_or(0);
            let Some((idx, len)) = (0..tokens.len())
                .filter(|&i| tokens[i].1 as usize == rich)
                .map(|i| (i, range_len(&tokens, i)))
                .filter(|&(_, len)| len >= 2)
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            else {
                continue;
            };
            let need = (target.saturating_sub(owned[node as usize]) / u128::from(vnodes - v)).max(1);
            let base = need.min(len - 1);
            let jitter = u128::from(vnode_hash(node, v) % 101);
            let steal = (base * (900 + jitter) / 1000).clamp(1, len - 1);
            let start = if idx == 0 {
                u128::from(tokens[tokens.len() - 1].0)
            } else {
                u128::from(tokens[idx - 1].0)
            };
            let token = ((start + steal) % RING) as u64;
            owned[rich] -= steal;
            owned[node as usize] += steal;
            let at = tokens.partition_point(|t| t.0 < token);
            tokens.insert(at, (token, node));
        }
    }
    tokens
}

impl Ring {
    pub fn new(config: RingConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            tokens: allocate(&config),
            config,
        })
    }

    pub fn config(&self) -> &RingConfig {
        &self.config
    }

    /// Replica set for a token: the first `replication_factor` distinct nodes
    /// met walking clockwise from the token. The first is the primary.
    pub fn locate_token(&self, token: u64) -> Vec<NodeId> {
        let rf = self.config.replication_factor as usize;
        let start = self.tokens.partition_point(|(t, _)| *t < token);
        let mut out = Vec::with_capacity(rf);
        for i in 0..self.tokens.len() {
            let (_, node) = self.tokens[(start + i) % self.tokens.len()];
            if !out.contains(&node) {
                out.push(node);
                if out.len() == rf {
                    break;
                }
            }
        }
        out
    }

    pub fn locate(&self, partition: &PartitionKey) -> Vec<NodeId> {
        self.locate_token(partition_token(partition))
    }

    pub fn primary(&self, partition: &PartitionKey) -> NodeId {
        self.locate(partition)[0]
    }
}

/// One-shot placement without keeping a ring around.
pub fn ring_locate(partition: &PartitionKey, config: &RingConfig) -> Result<Vec<NodeId>> {
    Ok(Ring::new(*config)?.locate(partition))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: u32, rf: u32) -> RingConfig {
        RingConfig {
            node_count: n,
            vnodes_per_node: 64,
            replication_factor: rf,
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(Ring::new(cfg(0, 1)).is_err());
        assert!(Ring::new(cfg(3, 4)).is_err());
        assert!(Ring::new(cfg(3, 0)).is_err());
        assert!(Ring::new(RingConfig { vnodes_per_node: 0, ..cfg(3, 1) }).is_err());
    }

    #[test]
    fn distinct_replicas_and_determinism() {
        let ring = Ring::new(cfg(5, 3)).unwrap();
        for i in 0..500 {
            let p = PartitionKey::new("ns", &format!("e{i}")).unwrap();
            let owners = ring.locate(&p);
            assert_eq!(owners.len(), 3);
            let mut d = owners.clone();
            d.sort();
            d.dedup();
            assert_eq!(d.len(), 3);
            assert_eq!(owners, ring_locate(&p, &cfg(5, 3)).unwrap());
        }
    }

    #[test]
    fn larger_ring_extends_smaller_one() {
        let small = Ring::new(cfg(4, 1)).unwrap();
        let big = Ring::new(cfg(5, 1)).unwrap();
        let kept: Vec<_> = big.tokens.iter().filter(|t| t.1 < 4).copied().collect();
        assert_eq!(kept, small.tokens);
    }

    #[test]
    fn ownership_is_near_even() {
        for n in 2..=12 {
            let ring = Ring::new(cfg(n, 1)).unwrap();
            let mut owned = vec![0u128; n as usize];
            for i in 0..ring.tokens.len() {
                owned[ring.tokens[i].1 as usize] += range_len(&ring.tokens, i);
            }
            assert_eq!(owned.iter().sum::<u128>(), RING);
            let max = *owned.iter().max().unwrap() as f64;
            let min = *owned.iter().min().unwrap() as f64;
            assert!(max / min < 1.1, "{n}: {}", max / min);
        }
    }

    #[test]
    fn wraps_past_highest_token() {
        let ring = Ring::new(cfg(3, 2)).unwrap();
        assert_eq!(ring.locate_token(u64::MAX).len(), 2);
        assert_eq!(ring.locate_token(u64::MAX)[0], ring.locate_token(0)[0]);
    }
}
