#![allow(dead_code)]

use swarmledger_core::crypto::{generate_keypair, KeyPair};
use swarmledger_core::ledger::{ChainId, ChainParams, MiningPolicy, Output};
use swarmledger_core::netsim::{node_keys, LatencyModel, LoadConfig, World, WorldConfig};

pub const FUNDS: u64 = 1_000_000;

pub fn key(i: u8) -> KeyPair {
    generate_keypair(&[i; 32])
}

pub fn params(chain: u32, policy: MiningPolicy, funded: &[&KeyPair], interval: u64, cap: u32) -> ChainParams {
    ChainParams {
        chain_id: ChainId(chain),
        block_interval: interval,
        max_tx_per_block: cap,
        mining_policy: policy,
        confirmation_depth: 1,
        genesis_allocation: funded.iter().map(|k| Output::new(k.address(), FUNDS)).collect(),
        parent: None,
    }
}

pub fn round_robin(keys: &[&KeyPair]) -> MiningPolicy {
    MiningPolicy::RoundRobin {
        miners: keys.iter().map(|k| k.address()).collect(),
    }
}

pub struct Setup {
    pub seed: u64,
    pub nodes: usize,
    pub policy: Option<MiningPolicy>,
    pub interval: u64,
    pub cap: u32,
    pub latency: LatencyModel,
    pub load: Option<LoadConfig>,
}

impl Default for Setup {
    fn default() -> Self {
        Self {
            seed: 7,
            nodes: 5,
            policy: None,
            interval: 10,
            cap: 50,
            latency: LatencyModel::Fixed { ticks: 2 },
            load: None,
        }
    }
}

impl Setup {
    pub fn build(self) -> World {
        let keys = node_keys(self.seed, self.nodes);
        let refs: Vec<&KeyPair> = keys.iter().collect();
        let policy = self.policy.unwrap_or_else(|| round_robin(&refs));
        let root = params(1, policy, &refs, self.interval, self.cap);
        World::new(WorldConfig {
            seed: self.seed,
            keys,
            root,
            latency: self.latency,
            load: self.load,
            check_replay: true,
        })
        .expect("valid world")
    }
}
