mod common;

use std::collections::BTreeSet;

use common::Setup;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use swarmledger_core::ledger::dump::dump_bytes;
use swarmledger_core::ledger::MiningPolicy;
use swarmledger_core::netsim::{Event, LatencyModel, LoadConfig, World};

fn load(per: u32, period: u64) -> Option<LoadConfig> {
    Some(LoadConfig {
        txs_per_period: per,
        period,
        amount: 1,
        start: 1,
        stop: None,
    })
}

fn pow(zero_bits: u8, attempts: u32) -> Option<MiningPolicy> {
    Some(MiningPolicy::Pow { zero_bits, attempts })
}

fn dumps(w: &World) -> Vec<Vec<u8>> {
    w.nodes().iter().map(|n| dump_bytes(n.root())).collect()
}

#[test]
fn idle_world_only_advances_the_clock() {
    let mut w = Setup::default().build();
    w.set_mining_enabled(false);
    let head = w.node(0).root().head();
    w.step(100);
    assert_eq!(w.tick(), 100);
    assert_eq!(w.node(0).root().head(), head);
    assert!(w.events().is_empty());
}

#[test]
fn uniform_latency_fits_distribution() {
    let model = LatencyModel::Uniform { lo: 1, hi: 5 };
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let draws = 10_000;
    let mut bins = [0u32; 5];
    for _ in 0..draws {
        let d = model.draw(0, 1, &mut rng);
        assert!((1..=5).contains(&d));
        bins[(d - 1) as usize] += 1;
    }
    let expected = draws as f64 / 5.0;
    let chi2: f64 = bins.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    // 4 degrees of freedom, p = 0.001.
    assert!(chi2 < 18.47, "chi2 = {chi2}, bins = {bins:?}");
}

#[test]
fn uniform_broadcast_delivery_window() {
    let mut w = Setup {
        latency: LatencyModel::Uniform { lo: 1, hi: 5 },
        load: load(3, 1),
        ..Default::default()
    }
    .build();
    w.step(200);
    for e in w.events() {
        if let Event::Delivered { tick, send_tick, .. } = e {
            assert!((send_tick + 1..=send_tick + 5).contains(tick));
        }
    }
}

#[test]
fn round_robin_converges_and_is_deterministic() {
    let run = || {
        let mut w = Setup {
            load: load(2, 3),
            ..Default::default()
        }
        .build();
        w.step(300);
        assert!(w.settle(500));
        w
    };
    let a = run();
    let b = run();
    let heads: BTreeSet<_> = a.nodes().iter().map(|n| n.root().head()).collect();
    assert_eq!(heads.len(), 1);
    assert!(a.node(0).root().head_height() >= 30);
    assert!(a.conserved() && a.replay_ok());
    assert_eq!(dumps(&a), dumps(&b));
    assert_eq!(
        serde_json::to_string(a.events()).unwrap(),
        serde_json::to_string(b.events()).unwrap()
    );
}

#[test]
fn different_seeds_diverge() {
    let run = |seed| {
        let mut w = Setup {
            seed,
            policy: pow(4, 2),
            load: load(1, 2),
            ..Default::default()
        }
        .build();
        w.step(200);
        dumps(&w)
    };
    assert_ne!(run(1), run(2));
}

#[test]
fn pow_with_uniform_latency_converges() {
    let mut w = Setup {
        policy: pow(6, 8),
        latency: LatencyModel::Uniform { lo: 1, hi: 6 },
        load: load(2, 5),
        ..Default::default()
    }
    .build();
    w.step(600);
    assert!(w.settle(2_000));
    assert!(w.conserved() && w.replay_ok());
    let root = w.node(0).root();
    root.validate_chain().unwrap();
    for block in root.canonical_blocks().skip(1) {
        assert!(MiningPolicy::meets_target(&block.digest(), 6));
    }
}

#[test]
fn partition_then_heal_orphans_one_side() {
    let mut w = Setup {
        policy: pow(5, 4),
        load: load(1, 4),
        ..Default::default()
    }
    .build();
    w.add_partition(vec![vec![0, 1], vec![2, 3, 4]], 50, 250).unwrap();
    w.step(400);
    assert!(w.settle(3_000));
    assert!(w.conserved() && w.replay_ok());

    let heads: BTreeSet<_> = w.nodes().iter().map(|n| n.root().head()).collect();
    assert_eq!(heads.len(), 1);
    let total_orphans: usize = w.nodes().iter().map(|n| n.root().orphans().len()).sum();
    assert!(total_orphans >= 1);
    assert!(w.events().iter().any(|e| matches!(e, Event::Reorg { .. })));

    // Transactions from abandoned blocks are canonical again or still pending.
    for n in w.nodes() {
        let root = n.root();
        for d in root.orphans() {
            for tx in &root.block(d).unwrap().txs {
                let id = tx.txid();
                assert!(root.tx_height(&id).is_some() || root.in_mempool(&id), "lost {id}");
            }
        }
        let replay = root.replay_canonical().unwrap();
        assert_eq!(&replay, root.accounts());
    }
}

#[test]
fn equal_branches_keep_first_seen_until_extended() {
    let mut w = Setup {
        nodes: 4,
        policy: pow(0, 1),
        ..Default::default()
    }
    .build();
    let root = w.root_id();
    for i in [1, 3] {
        w.set_mining(i, root, false);
    }
    // Nodes 0 and 2 each mine height 1 in isolation.
    w.add_partition(vec![vec![0, 1], vec![2, 3]], 1, 15).unwrap();
    w.step(14);
    let a1 = w.node(0).root().head();
    let b1 = w.node(2).root().head();
    assert_ne!(a1, b1);

    w.set_mining(2, root, false);
    w.step(19);
    for (i, expect) in [(0, a1), (1, a1), (2, b1), (3, b1)] {
        assert_eq!(w.node(i).root().head(), expect, "node {i}");
        assert_eq!(w.node(i).root().orphans().len(), 1);
    }

    // Node 0 extends its branch; everyone follows.
    w.step(25);
    let a2 = w.node(0).root().head();
    assert_eq!(w.node(0).root().head_height(), 2);
    for n in w.nodes() {
        assert_eq!(n.root().head(), a2);
        assert!(n.root().orphans().contains(&b1));
    }
}
