//! Ring placement and replica convergence through delta sync.

use std::collections::HashMap;
use std::sync::Arc;

use colma_storage::{
    Cell, ManualClock, MutationBatch, PartitionKey, Ring, RingConfig, SimulatedCluster, Store, StoreConfig,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn ring(n: u32, rf: u32) -> Ring {
    Ring::new(RingConfig {
        node_count: n,
        vnodes_per_node: 64,
        replication_factor: rf,
    })
    .unwrap()
}

fn keys(n: usize, seed: u64) -> Vec<PartitionKey> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..n)
        .map(|_| PartitionKey::new("ns", &format!("{:016x}", rng.random::<u64>())).unwrap())
        .collect()
}

#[test]
fn balance_with_64_vnodes() {
    for n in [3, 5, 8] {
        let r = ring(n, 1);
        let mut counts: HashMap<u32, usize> = HashMap::new();
        for k in keys(100_000, u64::from(n)) {
            *counts.entry(r.primary(&k)).or_default() += 1;
        }
        let max = *counts.values().max().unwrap() as f64;
        let min = *counts.values().min().unwrap() as f64;
        assert_eq!(counts.len(), n as usize);
        assert!(max / min <= 1.3, "{n} nodes: ratio {}", max / min);
    }
}

#[test]
fn removing_a_node_moves_about_one_nth() {
    for n in [4, 5, 10] {
        let before = ring(n, 1);
        let after = ring(n - 1, 1);
        let ks = keys(10_000, 99);
        let moved = ks.iter().filter(|k| before.primary(k) != after.primary(k)).count();
        let frac = moved as f64 / ks.len() as f64;
        assert!((frac - 1.0 / f64::from(n)).abs() <= 0.05, "{n} nodes: moved {frac}");
    }
}

#[test]
fn cluster_anti_entropy_converges_replicas() {
    let root = tempfile::tempdir().unwrap();
    let mut template = StoreConfig::default();
    template.sync_writes = false;
    let cluster = SimulatedCluster::open(
        root.path(),
        RingConfig {
            node_count: 4,
            vnodes_per_node: 16,
            replication_factor: 3,
        },
        &template,
        Arc::new(ManualClock::new(0)),
    )
    .unwrap();
    let ks = keys(30, 5);
    for (i, k) in ks.iter().enumerate() {
        cluster.put(k, Cell::new(b"row".to_vec(), "c", vec![i as u8], 1)).unwrap();
    }
    assert!(cluster.anti_entropy().unwrap() > 0);
    assert_eq!(cluster.anti_entropy().unwrap(), 0);
    for (i, k) in ks.iter().enumerate() {
        for node in cluster.replicas(k) {
            assert_eq!(cluster.get(node, k, b"row", "c").unwrap().value, vec![i as u8]);
        }
    }
}

#[test]
fn shuffled_duplicated_deltas_converge() {
    let p = PartitionKey::new("ns", "e").unwrap();
    let src_dir = tempfile::tempdir().unwrap();
    let src = Store::open_with_clock(StoreConfig::new(src_dir.path()), Arc::new(ManualClock::new(0))).unwrap();
    let mut rng = StdRng::seed_from_u64(3);
    for _ in 0..200 {
        let cell = if rng.random_bool(0.2) {
            Cell::tombstone(vec![rng.random_range(0..10)], "c", rng.random_range(0..20))
        } else {
            Cell::new(vec![rng.random_range(0..10)], "c", vec![rng.random()], rng.random_range(0..20))
        };
        src.put(&p, cell).unwrap();
    }
    let delta = src.sync_delta(&p, 0);
    let mut scans = Vec::new();
    for r in 0..3 {
        let dir = tempfile::tempdir().unwrap();
        let replica = Store::open_with_clock(StoreConfig::new(dir.path()), Arc::new(ManualClock::new(0))).unwrap();
        let mut muts = delta.mutations.clone();
        muts.extend(delta.mutations.iter().take(50 * r).cloned());
        for i in (1..muts.len()).rev() {
            muts.swap(i, rng.random_range(0..=i));
        }
        for chunk in muts.chunks(17) {
            replica.apply_delta(&MutationBatch { mutations: chunk.to_vec() }).unwrap();
        }
        scans.push(replica.scan_all(None));
    }
    assert_eq!(scans[0], src.scan_all(None));
    assert_eq!(scans[0], scans[1]);
    assert_eq!(scans[1], scans[2]);
}
