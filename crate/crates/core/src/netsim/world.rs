use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Decode, Decoder, Encode, Encoder};
use crate::crypto::{self, Address, Digest256, KeyPair};
use crate::ledger::{
    BlockError, ChainId, ChainParams, ChainSet, ChainState, Output, Rejection, SharedBlock, Transaction, TxKind,
    UnsignedTx,
};
use crate::ledger::block::Block;
use crate::ledger::params::ParamsError;

use super::latency::{LatencyError, LatencyModel};
use super::message::{Message, MessageKind, NodeId};
use super::network::{Network, PartitionError};

/// Blocks carried by one inventory response.
pub const INVENTORY_BATCH: usize = 32;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("a world needs at least one node")]
    NoNodes,
    #[error(transparent)]
    Latency(#[from] LatencyError),
    #[error(transparent)]
    Params(#[from] ParamsError),
}

/// Background transfer traffic on the root chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadConfig {
    /// Transactions submitted at each load tick.
    pub txs_per_period: u32,
    /// Ticks between load ticks.
    pub period: u64,
    #[serde(default = "default_amount")]
    pub amount: u64,
    #[serde(default)]
    pub start: u64,
    /// First tick without load; `None` runs until [`World::settle`].
    #[serde(default)]
    pub stop: Option<u64>,
}

fn default_amount() -> u64 {
    1
}

pub struct WorldConfig {
    pub seed: u64,
    pub keys: Vec<KeyPair>,
    pub root: ChainParams,
    pub latency: LatencyModel,
    pub load: Option<LoadConfig>,
    /// Compare every chain against a from-genesis replay after each block (slow).
    pub check_replay: bool,
}

/// Deterministic node keys for a run.
pub fn node_keys(seed: u64, n: usize) -> Vec<KeyPair> {
    (0..n)
        .map(|i| {
            let d = crypto::hash_parts(&[b"swarmledger/node", &seed.to_be_bytes(), &(i as u64).to_be_bytes()]);
            crypto::generate_keypair(&d.0)
        })
        .collect()
}

/// One line of the event log.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    TxSubmitted {
        tick: u64,
        node: usize,
        chain: ChainId,
        txid: Digest256,
    },
    TxRejected {
        tick: u64,
        node: usize,
        chain: ChainId,
        txid: Digest256,
        reason: Rejection,
    },
    Delivered {
        tick: u64,
        kind: MessageKind,
        from: usize,
        to: usize,
        send_tick: u64,
        item: Digest256,
    },
    Dropped {
        tick: u64,
        kind: MessageKind,
        from: usize,
        to: usize,
    },
    BlockMined {
        tick: u64,
        node: usize,
        chain: ChainId,
        height: u64,
        digest: Digest256,
        txs: usize,
    },
    BlockRejected {
        tick: u64,
        node: usize,
        chain: ChainId,
        digest: Digest256,
        reason: String,
    },
    Reorg {
        tick: u64,
        node: usize,
        chain: ChainId,
        depth: u64,
        head: Digest256,
        orphaned: Vec<Digest256>,
    },
    ChainCreated {
        tick: u64,
        node: usize,
        chain: ChainId,
        parent: ChainId,
    },
    ConservationViolated {
        tick: u64,
        node: usize,
    },
    PartitionHealed {
        tick: u64,
    },
    ScenarioStep {
        tick: u64,
        step: String,
        detail: serde_json::Value,
    },
}

pub struct Node {
    id: NodeId,
    keys: KeyPair,
    chains: ChainSet,
    seen: HashSet<Digest256>,
    mining: BTreeSet<ChainId>,
    issued: BTreeMap<(ChainId, Address), u64>,
    parked: Vec<(SharedBlock, usize)>,
}

impl Node {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn keys(&self) -> &KeyPair {
        &self.keys
    }

    pub fn address(&self) -> Address {
        self.id.address
    }

    pub fn chains(&self) -> &ChainSet {
        &self.chains
    }

    pub fn root(&self) -> &ChainState {
        self.chains.root()
    }

    pub fn chain(&self, id: ChainId) -> Option<&ChainState> {
        self.chains.get(id)
    }

    pub fn is_mining(&self, chain: ChainId) -> bool {
        self.mining.contains(&chain)
    }
}

struct SidechainPlan {
    parent: ChainId,
    params: ChainParams,
    peg_out: Transaction,
}

/// The whole simulation: nodes, the message layer and the clock.
pub struct World {
    tick: u64,
    nodes: Vec<Node>,
    net: Network,
    load: Option<LoadConfig>,
    load_enabled: bool,
    mining_enabled: bool,
    load_rng: ChaCha8Rng,
    mining_rng: ChaCha8Rng,
    scenario_rng: ChaCha8Rng,
    plans: Vec<SidechainPlan>,
    events: Vec<Event>,
    submitted: BTreeMap<Digest256, u64>,
    conserved: bool,
    replay_ok: bool,
    check_replay: bool,
}

fn stream(seed: u64, label: &[u8]) -> ChaCha8Rng {
    let d = crypto::hash_parts(&[b"swarmledger/rng", label, &seed.to_be_bytes()]);
    ChaCha8Rng::from_seed(d.0)
}

fn body_digest(body: &[u8]) -> Digest256 {
    crypto::hash(body)
}

fn inventory_request(chain: ChainId, digest: Digest256) -> Vec<u8> {
    let mut enc = Encoder::default();
    enc.put(&chain).put(&digest);
    enc.into_bytes()
}

fn inventory_response(chain: ChainId, blocks: &[Block]) -> Vec<u8> {
    let mut enc = Encoder::default();
    enc.put(&chain).list(blocks);
    enc.into_bytes()
}

/// Up to `INVENTORY_BATCH` blocks ending at `tip`, oldest first.
fn segment(state: &ChainState, tip: Digest256) -> Vec<Block> {
    let mut out = Vec::new();
    let mut cur = state.block(&tip).cloned();
    while let Some(b) = cur {
        let parent = b.header.parent;
        let height = b.height();
        out.push((*b).clone());
        if out.len() == INVENTORY_BATCH || height == 0 {
            break;
        }
        cur = state.block(&parent).cloned();
    }
    out.reverse();
    out
}

impl World {
    pub fn new(cfg: WorldConfig) -> Result<Self, WorldError> {
        if cfg.keys.is_empty() {
            return Err(WorldError::NoNodes);
        }
        cfg.latency.validate(cfg.keys.len())?;
        let root = ChainState::new(cfg.root.clone())?;
        let root_id = cfg.root.chain_id;
        let ids: Vec<NodeId> = cfg
            .keys
            .iter()
            .enumerate()
            .map(|(index, k)| NodeId {
                index,
                address: k.address(),
            })
            .collect();
        let nodes = cfg
            .keys
            .into_iter()
            .zip(&ids)
            .map(|(keys, id)| Node {
                id: *id,
                keys,
                chains: ChainSet::new(root.clone()),
                seen: HashSet::new(),
                mining: BTreeSet::from([root_id]),
                issued: BTreeMap::new(),
                parked: Vec::new(),
            })
            .collect();
        let net_seed = u64::from_be_bytes(crypto::hash_parts(&[b"swarmledger/net", &cfg.seed.to_be_bytes()]).0[..8].try_into().expect("8 bytes"));
        Ok(Self {
            tick: 0,
            nodes,
            net: Network::new(ids, cfg.latency, net_seed),
            load: cfg.load,
            load_enabled: true,
            mining_enabled: true,
            load_rng: stream(cfg.seed, b"load"),
            mining_rng: stream(cfg.seed, b"mining"),
            scenario_rng: stream(cfg.seed, b"scenario"),
            plans: Vec::new(),
            events: Vec::new(),
            submitted: BTreeMap::new(),
            conserved: true,
            replay_ok: true,
            check_replay: cfg.check_replay,
        })
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &Node {
        &self.nodes[i]
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn root_id(&self) -> ChainId {
        self.nodes[0].chains.root_id()
    }

    pub fn chain(&self, node: usize, id: ChainId) -> Option<&ChainState> {
        self.nodes[node].chains.get(id)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// First tick at which each locally submitted transaction entered the network.
    pub fn submitted(&self) -> &BTreeMap<Digest256, u64> {
        &self.submitted
    }

    /// Whether every node's chains conserved the root supply after every block so far.
    pub fn conserved(&self) -> bool {
        self.conserved
    }

    /// Whether every replay check (if enabled) matched.
    pub fn replay_ok(&self) -> bool {
        self.replay_ok
    }

    /// Randomness reserved for scenario logic, independent of network and mining draws.
    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.scenario_rng
    }

    pub fn set_mining(&mut self, node: usize, chain: ChainId, on: bool) {
        let set = &mut self.nodes[node].mining;
        if on {
            set.insert(chain);
        } else {
            set.remove(&chain);
        }
    }

    pub fn set_load(&mut self, on: bool) {
        self.load_enabled = on;
    }

    pub fn add_partition(&mut self, groups: Vec<Vec<usize>>, from: u64, to: u64) -> Result<(), PartitionError> {
        self.net.add_partition(groups, from, to)
    }

    /// Every node opens the sidechain once `peg_out` is confirmed on its view of `parent`.
    pub fn plan_sidechain(&mut self, parent: ChainId, params: ChainParams, peg_out: Transaction) {
        self.plans.push(SidechainPlan { parent, params, peg_out });
        for i in 0..self.nodes.len() {
            self.after_change(i);
        }
    }

    pub fn log_step(&mut self, step: &str, detail: serde_json::Value) {
        self.events.push(Event::ScenarioStep {
            tick: self.tick,
            step: step.to_string(),
            detail,
        });
    }

    /// Next unused nonce for `addr` on `chain` as seen by `node`.
    pub fn next_nonce(&self, node: usize, chain: ChainId, addr: Address) -> u64 {
        let n = &self.nodes[node];
        let applied = n.chains.get(chain).map_or(0, |c| c.nonce(&addr));
        let issued = n.issued.get(&(chain, addr)).copied().unwrap_or(0);
        applied.max(issued) + 1
    }

    /// Builds, signs and submits a single-signature transaction from `node`'s own key.
    pub fn send(
        &mut self,
        node: usize,
        chain: ChainId,
        kind: TxKind,
        outputs: Vec<Output>,
        payload: Vec<u8>,
    ) -> Result<Transaction, Rejection> {
        let keys = self.nodes[node].keys.clone();
        let tx = UnsignedTx {
            chain_id: chain,
            kind,
            sender: keys.address(),
            nonce: self.next_nonce(node, chain, keys.address()),
            outputs,
            payload,
        }
        .sign(&keys);
        self.submit(node, tx.clone())?;
        Ok(tx)
    }

    /// Enters `tx` into `node`'s mempool and gossips it.
    pub fn submit(&mut self, node: usize, tx: Transaction) -> Result<bool, Rejection> {
        let chain = tx.chain_id();
        let txid = tx.txid();
        let tick = self.tick;
        let n = &mut self.nodes[node];
        let Some(state) = n.chains.get_mut(chain) else {
            return Err(Rejection::WrongChain);
        };
        match state.submit(tx.clone()) {
            Ok(fresh) => {
                let key = (chain, tx.sender());
                let issued = n.issued.entry(key).or_insert(0);
                *issued = (*issued).max(tx.nonce());
                if fresh {
                    self.submitted.entry(txid).or_insert(tick);
                    self.events.push(Event::TxSubmitted { tick, node, chain, txid });
                    let body = Arc::new(tx.encode());
                    self.nodes[node].seen.insert(body_digest(&body));
                    self.gossip(node, MessageKind::TxGossip, body);
                }
                Ok(fresh)
            }
            Err(reason) => {
                self.events.push(Event::TxRejected {
                    tick,
                    node,
                    chain,
                    txid,
                    reason,
                });
                Err(reason)
            }
        }
    }

    fn gossip(&mut self, from: usize, kind: MessageKind, body: Arc<Vec<u8>>) {
        let tick = self.tick;
        let out = self.net.broadcast(from, kind, body, tick);
        for to in out.dropped {
            self.events.push(Event::Dropped {
                tick,
                kind,
                from,
                to: to.index,
            });
        }
    }

    fn send_to(&mut self, from: usize, to: usize, kind: MessageKind, body: Vec<u8>) {
        let tick = self.tick;
        if self.net.send(from, to, kind, Arc::new(body), tick).is_none() {
            self.events.push(Event::Dropped { tick, kind, from, to });
        }
    }

    /// Advances the clock to `until`, processing every tick on the way.
    pub fn step(&mut self, until: u64) {
        while self.tick < until {
            self.tick += 1;
            self.process_tick();
        }
    }

    /// Steps one tick at a time until `done` holds or `limit` ticks pass.
    pub fn run_until(&mut self, limit: u64, mut done: impl FnMut(&World) -> bool) -> bool {
        let deadline = self.tick + limit;
        while !done(self) {
            if self.tick >= deadline {
                return false;
            }
            self.step(self.tick + 1);
        }
        true
    }

    /// Runs without load until every node agrees on every chain's head and
    /// nothing is in flight, then idles two block intervals without mining.
    /// Returns whether the network converged.
    pub fn settle(&mut self, limit: u64) -> bool {
        self.load_enabled = false;
        self.run_until(limit, |w| w.net.in_flight() == 0 && w.heads_agree());
        self.mining_enabled = false;
        let idle = 2 * self.max_interval();
        self.step(self.tick + idle);
        self.net.in_flight() == 0 && self.heads_agree()
    }

    pub fn set_mining_enabled(&mut self, on: bool) {
        self.mining_enabled = on;
    }

    fn max_interval(&self) -> u64 {
        self.nodes
            .iter()
            .flat_map(|n| n.chains.iter().map(|(_, c)| c.params().block_interval))
            .max()
            .unwrap_or(1)
    }

    /// True when all nodes hold the same chains with the same heads.
    pub fn heads_agree(&self) -> bool {
        let heads = |n: &Node| -> Vec<(ChainId, Digest256)> { n.chains.iter().map(|(id, c)| (*id, c.head())).collect() };
        let first = heads(&self.nodes[0]);
        self.nodes[1..].iter().all(|n| heads(n) == first)
    }

    fn process_tick(&mut self) {
        let tick = self.tick;
        if self.net.heals_at(tick) {
            self.heal();
        }
        while let Some(msg) = self.net.pop_due(tick) {
            self.deliver(msg);
        }
        if self.load_enabled {
            self.generate_load();
        }
        if self.mining_enabled {
            self.mine_all();
        }
    }

    fn heal(&mut self) {
        let tick = self.tick;
        self.events.push(Event::PartitionHealed { tick });
        for i in 0..self.nodes.len() {
            let mut bodies = Vec::new();
            for (id, state) in self.nodes[i].chains.iter() {
                bodies.push((MessageKind::InventoryResponse, inventory_response(*id, &segment(state, state.head()))));
                for tx in state.mempool() {
                    bodies.push((MessageKind::TxGossip, tx.encode()));
                }
            }
            for (kind, body) in bodies {
                self.gossip(i, kind, Arc::new(body));
            }
        }
    }

    fn generate_load(&mut self) {
        let Some(load) = self.load.clone() else { return };
        let tick = self.tick;
        let n = self.nodes.len();
        if n < 2 || tick < load.start || load.stop.is_some_and(|s| tick >= s) || load.period == 0 {
            return;
        }
        if (tick - load.start) % load.period != 0 {
            return;
        }
        let root = self.root_id();
        for _ in 0..load.txs_per_period {
            let from = self.load_rng.gen_range(0..n);
            let mut to = self.load_rng.gen_range(0..n - 1);
            if to >= from {
                to += 1;
            }
            let dest = self.nodes[to].address();
            // Rejections are logged by `submit`.
            let _ = self.send(from, root, TxKind::Transfer, vec![Output::new(dest, load.amount)], Vec::new());
        }
    }

    fn mine_all(&mut self) {
        let tick = self.tick;
        let mut chain_ids: BTreeSet<ChainId> = BTreeSet::new();
        for n in &self.nodes {
            chain_ids.extend(n.chains.iter().map(|(id, _)| *id));
        }
        for chain in chain_ids {
            for i in 0..self.nodes.len() {
                if !self.nodes[i].mining.contains(&chain) {
                    continue;
                }
                let node = &mut self.nodes[i];
                let Some(state) = node.chains.get_mut(chain) else { continue };
                let Some(block) = state.mine_block(tick, &node.keys, &mut self.mining_rng) else {
                    continue;
                };
                let block = Arc::new(block);
                self.events.push(Event::BlockMined {
                    tick,
                    node: i,
                    chain,
                    height: block.height(),
                    digest: block.digest(),
                    txs: block.txs.len(),
                });
                let body = Arc::new(block.encode());
                self.nodes[i].seen.insert(body_digest(&body));
                self.connect_block(i, block, None, Some(body));
            }
        }
    }

    fn deliver(&mut self, msg: Message) {
        let to = msg.recipient.index;
        let from = msg.sender.index;
        let item = match msg.kind {
            MessageKind::TxGossip => self.on_tx(to, &msg.body),
            MessageKind::BlockGossip => self.on_block(to, from, &msg.body),
            MessageKind::InventoryRequest => self.on_request(to, from, &msg.body),
            MessageKind::InventoryResponse => self.on_response(to, from, &msg.body),
        };
        self.events.push(Event::Delivered {
            tick: self.tick,
            kind: msg.kind,
            from,
            to,
            send_tick: msg.send_tick,
            item: item.unwrap_or_else(|| body_digest(&msg.body)),
        });
    }

    fn on_tx(&mut self, node: usize, body: &Arc<Vec<u8>>) -> Option<Digest256> {
        let tx = Transaction::decode(body).ok()?;
        let id = tx.txid();
        if !self.nodes[node].seen.insert(body_digest(body)) {
            return Some(id);
        }
        let state = self.nodes[node].chains.get_mut(tx.chain_id())?;
        if let Ok(true) = state.submit(tx) {
            self.gossip(node, MessageKind::TxGossip, body.clone());
        }
        Some(id)
    }

    fn on_block(&mut self, node: usize, from: usize, body: &Arc<Vec<u8>>) -> Option<Digest256> {
        let block = Block::decode(body).ok()?;
        let digest = block.digest();
        if !self.nodes[node].seen.insert(body_digest(body)) {
            return Some(digest);
        }
        self.connect_block(node, Arc::new(block), Some(from), Some(body.clone()));
        Some(digest)
    }

    fn on_request(&mut self, node: usize, from: usize, body: &[u8]) -> Option<Digest256> {
        let mut dec = Decoder::new(body);
        let chain: ChainId = dec.get().ok()?;
        let digest: Digest256 = dec.get().ok()?;
        let state = self.nodes[node].chains.get(chain)?;
        if state.contains_block(&digest) {
            let reply = inventory_response(chain, &segment(state, digest));
            self.send_to(node, from, MessageKind::InventoryResponse, reply);
        }
        Some(digest)
    }

    fn on_response(&mut self, node: usize, from: usize, body: &[u8]) -> Option<Digest256> {
        let mut dec = Decoder::new(body);
        let _chain: ChainId = dec.get().ok()?;
        let blocks: Vec<Block> = dec.list("inventory").ok()?;
        let last = blocks.last().map(|b| b.digest());
        for (i, block) in blocks.into_iter().enumerate() {
            let block = Arc::new(block);
            self.nodes[node].seen.insert(body_digest(&block.encode()));
            let request_from = (i == 0).then_some(from);
            self.connect_block(node, block, request_from, None);
        }
        last
    }

    /// Applies a block at `node`, asks `request_from` for a missing parent and
    /// forwards `forward` if the block connected.
    fn connect_block(
        &mut self,
        node: usize,
        block: SharedBlock,
        request_from: Option<usize>,
        forward: Option<Arc<Vec<u8>>>,
    ) {
        let tick = self.tick;
        let chain = block.header.chain_id;
        let digest = block.digest();
        let n = &mut self.nodes[node];
        let Some(state) = n.chains.get_mut(chain) else {
            n.parked.push((block, request_from.unwrap_or(node)));
            return;
        };
        match state.apply_block(block, tick) {
            Ok(outcome) => {
                if let (Some(parent), Some(peer)) = (outcome.missing_parent, request_from) {
                    self.send_to(node, peer, MessageKind::InventoryRequest, inventory_request(chain, parent));
                }
                if outcome.reorg_depth > 0 {
                    let state = self.nodes[node].chains.get(chain).expect("held");
                    self.events.push(Event::Reorg {
                        tick,
                        node,
                        chain,
                        depth: outcome.reorg_depth,
                        head: state.head(),
                        orphaned: outcome.orphaned.clone(),
                    });
                    let returned: Vec<Vec<u8>> = outcome
                        .returned_to_mempool
                        .iter()
                        .filter_map(|id| state.mempool().find(|t| t.txid() == *id))
                        .map(|t| t.encode())
                        .collect();
                    for body in returned {
                        let body = Arc::new(body);
                        self.nodes[node].seen.insert(body_digest(&body));
                        self.gossip(node, MessageKind::TxGossip, body);
                    }
                }
                if !outcome.connected.is_empty() {
                    if let Some(body) = forward {
                        self.gossip(node, MessageKind::BlockGossip, body);
                    }
                    self.after_change(node);
                }
            }
            Err(e) => {
                if e != BlockError::KnownInvalid {
                    self.events.push(Event::BlockRejected {
                        tick,
                        node,
                        chain,
                        digest,
                        reason: e.to_string(),
                    });
                }
            }
        }
    }

    /// Housekeeping after `node`'s chains changed: open planned sidechains,
    /// resync peg credits and check conservation.
    fn after_change(&mut self, node: usize) {
        let tick = self.tick;
        let mut created = Vec::new();
        for plan in &self.plans {
            let n = &mut self.nodes[node];
            if n.chains.contains(plan.params.chain_id) {
                continue;
            }
            let Some(parent) = n.chains.get(plan.parent) else { continue };
            let depth = parent.params().confirmation_depth as u64;
            if parent.confirmations(&plan.peg_out.txid()) < depth {
                continue;
            }
            if n.chains.create_sidechain(plan.parent, plan.params.clone(), &plan.peg_out).is_ok() {
                created.push((plan.params.chain_id, plan.parent));
            }
        }
        for (chain, parent) in created {
            self.events.push(Event::ChainCreated {
                tick,
                node,
                chain,
                parent,
            });
            let parked = std::mem::take(&mut self.nodes[node].parked);
            let (ready, rest): (Vec<_>, Vec<_>) = parked.into_iter().partition(|(b, _)| b.header.chain_id == chain);
            self.nodes[node].parked = rest;
            for (block, from) in ready {
                self.connect_block(node, block, Some(from), None);
            }
        }

        let n = &mut self.nodes[node];
        let synced = n.chains.sync_pegs();
        if synced.is_err() || !n.chains.is_conserved() {
            if self.conserved {
                self.events.push(Event::ConservationViolated { tick, node });
            }
            self.conserved = false;
        }
        if self.check_replay {
            let ok = self.nodes[node]
                .chains
                .iter()
                .all(|(_, c)| c.replay_canonical().is_ok_and(|a| &a == c.accounts()));
            self.replay_ok &= ok;
        }
    }
}
