//! Per-run metrics, computed from the observer's (node 0) view.

use serde::{Deserialize, Serialize};
use swarmledger_core::ledger::ChainState;
use swarmledger_core::netsim::World;

/// Blocks per throughput window.
pub const WINDOW_BLOCKS: u64 = 10;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    /// Ticks from first gossip to depth-k confirmation, one per canonical
    /// root-chain transaction, ordered by txid.
    pub samples: Vec<u64>,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub p95: Option<u64>,
}

impl LatencyStats {
    pub fn from_samples(samples: Vec<u64>) -> Self {
        let mut sorted = samples.clone();
        sorted.sort_unstable();
        Self {
            mean: mean(&sorted),
            median: median(&sorted),
            p95: percentile(&sorted, 95),
            samples,
        }
    }
}

pub fn mean(v: &[u64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64)
}

/// Median of an ascending slice; the midpoint of the two middle values for even lengths.
pub fn median(sorted: &[u64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2] as f64),
        _ => Some((sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0),
    }
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[u64], p: u64) -> Option<u64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (p as usize * sorted.len()).div_ceil(100).max(1);
    Some(sorted[rank - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub first_height: u64,
    pub last_height: u64,
    pub txs: u64,
    /// Timestamp span from the block before `first_height` to `last_height`.
    pub ticks: u64,
    pub tx_per_tick: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub window_blocks: u64,
    pub windows: Vec<Window>,
    pub total_txs: u64,
    /// Canonical transactions per tick over the whole chain.
    pub overall: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Orphans {
    pub count: u64,
    pub canonical_blocks: u64,
    /// Orphans over all non-genesis blocks seen.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub scenario: Option<String>,
    pub seed: u64,
    /// Digest of the configuration with the seed cleared.
    pub experiment: String,
    pub final_tick: u64,
    pub confirmation_depth: u32,
    pub latency: LatencyStats,
    pub throughput: Throughput,
    pub orphans: Orphans,
    /// Encoded size of every block each node stores, summed over its chains.
    pub ledger_bytes: Vec<u64>,
    pub conserved: bool,
    pub converged: bool,
    pub replay_ok: bool,
    /// `success`, `negative` or `error`.
    pub status: String,
    pub reason: Option<String>,
    pub outcome: Option<serde_json::Value>,
}

/// Latency samples for canonical transactions of `view` with at least `k` confirmations.
pub fn latency_samples(world: &World, view: &ChainState, k: u64) -> Vec<u64> {
    let mut out = Vec::new();
    for (txid, &sent) in world.submitted() {
        let Some(h) = view.tx_height(txid) else { continue };
        let Some(d) = view.canonical_digest(h + k - 1) else { continue };
        let confirmed = view.stored(&d).expect("canonical block is stored").received_tick;
        out.push(confirmed.saturating_sub(sent));
    }
    out
}

pub fn throughput(view: &ChainState) -> Throughput {
    let blocks: Vec<_> = view.canonical_blocks().collect();
    let head = blocks.len() as u64 - 1;
    let mut windows = Vec::new();
    let mut first = 1;
    while first <= head {
        let last = (first + WINDOW_BLOCKS - 1).min(head);
        let txs: u64 = (first..=last).map(|h| blocks[h as usize].txs.len() as u64).sum();
        let ticks = blocks[last as usize].header.timestamp - blocks[first as usize - 1].header.timestamp;
        windows.push(Window {
            first_height: first,
            last_height: last,
            txs,
            ticks,
            tx_per_tick: if ticks == 0 { 0.0 } else { txs as f64 / ticks as f64 },
        });
        first = last + 1;
    }
    let total_txs = windows.iter().map(|w| w.txs).sum();
    let span = blocks[head as usize].header.timestamp - blocks[0].header.timestamp;
    Throughput {
        window_blocks: WINDOW_BLOCKS,
        windows,
        total_txs,
        overall: if span == 0 { 0.0 } else { total_txs as f64 / span as f64 },
    }
}

pub fn orphans(view: &ChainState) -> Orphans {
    let count = view.orphans().len() as u64;
    let canonical_blocks = view.head_height();
    let seen = count + canonical_blocks;
    Orphans {
        count,
        canonical_blocks,
        rate: if seen == 0 { 0.0 } else { count as f64 / seen as f64 },
    }
}

pub fn ledger_bytes(world: &World) -> Vec<u64> {
    world
        .nodes()
        .iter()
        .map(|n| n.chains().iter().map(|(_, c)| c.ledger_bytes()).sum())
        .collect()
}
