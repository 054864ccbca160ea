use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use indexmap::IndexMap;
use rand::RngCore;
use thiserror::Error;

use crate::codec::Encode;
use crate::crypto::{self, Address, Digest256, KeyPair};
use crate::ledger::accounts::{precheck, Accounts, Authorization, CheckMode, Rejection};
use crate::ledger::block::{tx_root, Block, BlockHeader, SharedBlock};
use crate::ledger::params::{ChainParams, MiningPolicy, ParamsError};
use crate::ledger::tx::{Output, Transaction};

/// Out-of-order blocks are held for this many block intervals before being dropped.
pub const PENDING_TTL_INTERVALS: u64 = 10;

/// Part of a block that failed validation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FaultField {
    #[error("record could not be decoded")]
    Decode,
    #[error("genesis block does not match its parameters")]
    Genesis,
    #[error("chain id")]
    ChainId,
    #[error("height")]
    Height,
    #[error("parent digest")]
    Parent,
    #[error("timestamp")]
    Timestamp,
    #[error("too many transactions")]
    Capacity,
    #[error("tx_root mismatch")]
    TxRoot,
    #[error("mining policy proof")]
    Policy,
    #[error("miner seal")]
    Seal,
    #[error("transaction {index}: {reason}")]
    Transaction { index: usize, reason: Rejection },
}

/// First failure found while replaying a chain.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("chain invalid at height {height}: {field}")]
pub struct ChainFault {
    pub height: u64,
    pub field: FaultField,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BlockError {
    #[error("block previously found invalid")]
    KnownInvalid,
    #[error("invalid block: {0}")]
    Invalid(FaultField),
}

/// What happened when a block was offered to [`ChainState::apply_block`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ApplyOutcome {
    /// Blocks newly stored, including buffered descendants released by this one.
    pub connected: Vec<Digest256>,
    /// Set when the block was buffered because this parent is unknown.
    pub missing_parent: Option<Digest256>,
    /// Blocks that left the canonical chain or arrived on a losing branch.
    pub orphaned: Vec<Digest256>,
    pub head_changed: bool,
    /// Number of canonical blocks rolled back, 0 for plain extensions.
    pub reorg_depth: u64,
    pub returned_to_mempool: Vec<Digest256>,
}

impl ApplyOutcome {
    fn merge(&mut self, other: ApplyOutcome) {
        self.connected.extend(other.connected);
        self.orphaned.extend(other.orphaned);
        self.head_changed |= other.head_changed;
        self.reorg_depth = self.reorg_depth.max(other.reorg_depth);
        self.returned_to_mempool.extend(other.returned_to_mempool);
    }
}

#[derive(Debug, Clone)]
pub struct StoredBlock {
    pub block: SharedBlock,
    pub received_tick: u64,
}

/// Header-level checks of `block` against its parent.
pub fn check_header(
    params: &ChainParams,
    parent: &BlockHeader,
    parent_digest: &Digest256,
    block: &Block,
) -> Result<(), FaultField> {
    let h = &block.header;
    if h.chain_id != params.chain_id {
        return Err(FaultField::ChainId);
    }
    if h.parent != *parent_digest {
        return Err(FaultField::Parent);
    }
    if h.height != parent.height + 1 {
        return Err(FaultField::Height);
    }
    if h.timestamp < parent.timestamp.saturating_add(params.block_interval) {
        return Err(FaultField::Timestamp);
    }
    if block.txs.len() > params.max_tx_per_block as usize {
        return Err(FaultField::Capacity);
    }
    if h.tx_root != tx_root(&block.txs) {
        return Err(FaultField::TxRoot);
    }
    let digest = h.digest();
    let policy_ok = match &params.mining_policy {
        MiningPolicy::Pow { zero_bits, .. } => {
            h.policy_proof.len() == 8 && MiningPolicy::meets_target(&digest, *zero_bits)
        }
        policy => h.policy_proof.is_empty() && policy.scheduled_miner(h.height) == Some(h.miner),
    };
    if !policy_ok {
        return Err(FaultField::Policy);
    }
    match &block.seal {
        Some(sig) if crypto::derive_address(&sig.signer) == h.miner && crypto::verify(&sig.signer, &digest.0, sig) => {
            Ok(())
        }
        _ => Err(FaultField::Seal),
    }
}

fn check_genesis(params: &ChainParams, block: &Block) -> Result<(), FaultField> {
    if *block == Block::genesis(params) {
        Ok(())
    } else {
        Err(FaultField::Genesis)
    }
}

fn apply_txs(
    accounts: &mut Accounts,
    block: &Block,
    mut auth: impl FnMut(&Transaction) -> Result<Authorization, Rejection>,
) -> Result<(), FaultField> {
    let height = block.height();
    for (index, tx) in block.txs.iter().enumerate() {
        let checked = auth(tx).and_then(|a| accounts.check_with(tx, &a, height, CheckMode::Block));
        match checked {
            Ok(()) => accounts.apply_checked(tx, height),
            Err(reason) => return Err(FaultField::Transaction { index, reason }),
        }
    }
    Ok(())
}

/// Replays `blocks` (genesis first) with every header, seal, link and
/// transaction re-checked. Returns the resulting account state.
pub fn validate_blocks(
    params: &ChainParams,
    imports: &[Output],
    blocks: &[Block],
) -> Result<Accounts, ChainFault> {
    let Some(genesis) = blocks.first() else {
        return Err(ChainFault {
            height: 0,
            field: FaultField::Genesis,
        });
    };
    check_genesis(params, genesis).map_err(|field| ChainFault { height: 0, field })?;
    let mut accounts = Accounts::genesis(params, imports);
    let mut parent = genesis;
    let mut parent_digest = genesis.digest();
    for block in &blocks[1..] {
        let fault = |field| ChainFault {
            height: parent.height() + 1,
            field,
        };
        check_header(params, &parent.header, &parent_digest, block).map_err(fault)?;
        apply_txs(&mut accounts, block, |tx| precheck(params, tx)).map_err(fault)?;
        parent = block;
        parent_digest = block.digest();
    }
    Ok(accounts)
}

/// One node's view of one chain.
#[derive(Debug, Clone)]
pub struct ChainState {
    params: ChainParams,
    blocks: HashMap<Digest256, StoredBlock>,
    canonical: Vec<Digest256>,
    tx_index: HashMap<Digest256, u64>,
    orphans: BTreeSet<Digest256>,
    invalid: HashSet<Digest256>,
    accounts: Accounts,
    imports: BTreeMap<Digest256, Vec<Output>>,
    mempool: IndexMap<Digest256, Transaction>,
    pending: Vec<StoredBlock>,
    auth_cache: HashMap<Digest256, Result<Authorization, Rejection>>,
}

impl ChainState {
    pub fn new(params: ChainParams) -> Result<Self, ParamsError> {
        params.check()?;
        let genesis = Arc::new(Block::genesis(&params));
        let digest = genesis.digest();
        let accounts = Accounts::genesis(&params, []);
        let mut blocks = HashMap::new();
        blocks.insert(
            digest,
            StoredBlock {
                block: genesis,
                received_tick: 0,
            },
        );
        Ok(Self {
            params,
            blocks,
            canonical: vec![digest],
            tx_index: HashMap::new(),
            orphans: BTreeSet::new(),
            invalid: HashSet::new(),
            accounts,
            imports: BTreeMap::new(),
            mempool: IndexMap::new(),
            pending: Vec::new(),
            auth_cache: HashMap::new(),
        })
    }

    pub fn params(&self) -> &ChainParams {
        &self.params
    }

    pub fn genesis_digest(&self) -> Digest256 {
        self.canonical[0]
    }

    pub fn head(&self) -> Digest256 {
        *self.canonical.last().expect("genesis")
    }

    pub fn head_height(&self) -> u64 {
        (self.canonical.len() - 1) as u64
    }

    pub fn head_block(&self) -> &SharedBlock {
        &self.blocks[&self.head()].block
    }

    pub fn block(&self, digest: &Digest256) -> Option<&SharedBlock> {
        self.blocks.get(digest).map(|s| &s.block)
    }

    pub fn stored(&self, digest: &Digest256) -> Option<&StoredBlock> {
        self.blocks.get(digest)
    }

    pub fn contains_block(&self, digest: &Digest256) -> bool {
        self.blocks.contains_key(digest)
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// All stored blocks in a deterministic order (height, then digest).
    pub fn all_blocks(&self) -> Vec<&SharedBlock> {
        let mut v: Vec<_> = self.blocks.values().map(|s| &s.block).collect();
        v.sort_by_key(|b| (b.height(), b.digest()));
        v
    }

    pub fn canonical_digest(&self, height: u64) -> Option<Digest256> {
        self.canonical.get(height as usize).copied()
    }

    pub fn is_canonical(&self, digest: &Digest256) -> bool {
        self.blocks
            .get(digest)
            .is_some_and(|s| self.canonical.get(s.block.height() as usize) == Some(digest))
    }

    /// Canonical blocks from genesis to head.
    pub fn canonical_blocks(&self) -> impl Iterator<Item = &SharedBlock> + '_ {
        self.canonical.iter().map(|d| &self.blocks[d].block)
    }

    pub fn orphans(&self) -> &BTreeSet<Digest256> {
        &self.orphans
    }

    pub fn accounts(&self) -> &Accounts {
        &self.accounts
    }

    pub fn balance(&self, addr: &Address) -> u64 {
        self.accounts.balance(addr)
    }

    pub fn nonce(&self, addr: &Address) -> u64 {
        self.accounts.nonce(addr)
    }

    pub fn imports(&self) -> &BTreeMap<Digest256, Vec<Output>> {
        &self.imports
    }

    pub fn mempool(&self) -> impl Iterator<Item = &Transaction> + '_ {
        self.mempool.values()
    }

    pub fn mempool_len(&self) -> usize {
        self.mempool.len()
    }

    pub fn in_mempool(&self, txid: &Digest256) -> bool {
        self.mempool.contains_key(txid)
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Height of the canonical block containing `txid`.
    pub fn tx_height(&self, txid: &Digest256) -> Option<u64> {
        self.tx_index.get(txid).copied()
    }

    pub fn canonical_tx(&self, txid: &Digest256) -> Option<(&SharedBlock, &Transaction)> {
        let h = self.tx_height(txid)?;
        let block = &self.blocks[&self.canonical[h as usize]].block;
        block.txs.iter().find(|t| t.txid() == *txid).map(|t| (block, t))
    }

    /// 0 if the transaction is not canonical, else `head_height - containing_height + 1`.
    pub fn confirmations(&self, txid: &Digest256) -> u64 {
        match self.tx_height(txid) {
            Some(h) => self.head_height() - h + 1,
            None => 0,
        }
    }

    /// Total encoded size of every stored block.
    pub fn ledger_bytes(&self) -> u64 {
        self.blocks.values().map(|s| s.block.encoded_len() as u64).sum()
    }

    fn authorize(&mut self, tx: &Transaction) -> Result<Authorization, Rejection> {
        let key = tx.witness_digest();
        if let Some(hit) = self.auth_cache.get(&key) {
            return hit.clone();
        }
        let result = precheck(&self.params, tx);
        self.auth_cache.insert(key, result.clone());
        result
    }

    /// Would `tx` be valid as the next transaction on top of the canonical head?
    pub fn validate_transaction(&self, tx: &Transaction) -> Result<(), Rejection> {
        self.accounts.check(&self.params, tx, self.head_height() + 1)
    }

    /// Admits a transaction to the mempool. Future nonces are accepted and
    /// wait for their predecessors. Returns `Ok(false)` for transactions
    /// already pending or confirmed.
    pub fn submit(&mut self, tx: Transaction) -> Result<bool, Rejection> {
        let id = tx.txid();
        if self.mempool.contains_key(&id) || self.tx_index.contains_key(&id) {
            return Ok(false);
        }
        let auth = self.authorize(&tx)?;
        self.accounts
            .check_with(&tx, &auth, self.head_height() + 1, CheckMode::Mempool)?;
        self.mempool.insert(id, tx);
        Ok(true)
    }

    /// Attempts to produce the next block at `tick`. Returns `None` when
    /// `tick` is not a mining opportunity, the policy does not authorize
    /// `miner`, or the bounded proof-of-work search fails.
    pub fn mine_block<R: RngCore>(&mut self, tick: u64, miner: &KeyPair, rng: &mut R) -> Option<Block> {
        let interval = self.params.block_interval;
        if tick == 0 || tick % interval != 0 {
            return None;
        }
        let parent = self.head_block().clone();
        if tick < parent.header.timestamp + interval {
            return None;
        }
        let height = parent.height() + 1;
        let me = miner.address();
        if let Some(slot) = self.params.mining_policy.scheduled_miner(height) {
            if slot != me {
                return None;
            }
        }

        let txs = self.pack(height);
        let mut header = BlockHeader {
            chain_id: self.params.chain_id,
            height,
            parent: parent.digest(),
            tx_root: tx_root(&txs),
            miner: me,
            timestamp: tick,
            policy_proof: Vec::new(),
        };
        if let MiningPolicy::Pow { zero_bits, attempts } = self.params.mining_policy {
            let found = (0..attempts).any(|_| {
                header.policy_proof = rng.next_u64().to_be_bytes().to_vec();
                MiningPolicy::meets_target(&header.digest(), zero_bits)
            });
            if !found {
                return None;
            }
        }
        Some(Block::sealed(header, txs, miner))
    }

    /// Selects mempool transactions in arrival order that apply cleanly on the head.
    fn pack(&mut self, height: u64) -> Vec<Transaction> {
        let cap = self.params.max_tx_per_block as usize;
        let mut scratch = self.accounts.clone();
        let mut chosen: Vec<Transaction> = Vec::new();
        let mut taken: HashSet<Digest256> = HashSet::new();
        let candidates: Vec<Transaction> = self.mempool.values().cloned().collect();
        // A second pass picks up nonce successors that arrived before their predecessor.
        for _ in 0..2 {
            let mut progress = false;
            for tx in &candidates {
                if chosen.len() >= cap {
                    break;
                }
                if taken.contains(&tx.txid()) {
                    continue;
                }
                let Ok(auth) = self.authorize(tx) else { continue };
                if scratch.check_with(tx, &auth, height, CheckMode::Block).is_ok() {
                    scratch.apply_checked(tx, height);
                    taken.insert(tx.txid());
                    chosen.push(tx.clone());
                    progress = true;
                }
            }
            if !progress || chosen.len() >= cap {
                break;
            }
        }
        chosen
    }

    /// Offers a block. Unknown-parent blocks are buffered; header-invalid
    /// and transaction-invalid blocks are rejected and remembered.
    pub fn apply_block(&mut self, block: SharedBlock, tick: u64) -> Result<ApplyOutcome, BlockError> {
        self.expire_pending(tick);
        let digest = block.digest();
        if self.blocks.contains_key(&digest) {
            return Ok(ApplyOutcome::default());
        }
        if self.invalid.contains(&digest) {
            return Err(BlockError::KnownInvalid);
        }
        if block.header.chain_id != self.params.chain_id {
            return Err(BlockError::Invalid(FaultField::ChainId));
        }
        let parent = block.header.parent;
        if !self.blocks.contains_key(&parent) {
            if self.invalid.contains(&parent) {
                self.invalid.insert(digest);
                return Err(BlockError::KnownInvalid);
            }
            if !self.pending.iter().any(|p| p.block.digest() == digest) {
                self.pending.push(StoredBlock {
                    block,
                    received_tick: tick,
                });
            }
            return Ok(ApplyOutcome {
                missing_parent: Some(parent),
                ..Default::default()
            });
        }

        let mut outcome = self.connect(block, tick)?;
        let mut ready = vec![digest];
        while let Some(d) = ready.pop() {
            let (children, rest): (Vec<_>, Vec<_>) =
                std::mem::take(&mut self.pending).into_iter().partition(|p| p.block.header.parent == d);
            self.pending = rest;
            for child in children {
                let cd = child.block.digest();
                if let Ok(o) = self.connect(child.block, tick) {
                    outcome.merge(o);
                    ready.push(cd);
                }
            }
        }
        Ok(outcome)
    }

    /// Drops buffered blocks older than the pending TTL. Returns their digests.
    pub fn expire_pending(&mut self, tick: u64) -> Vec<Digest256> {
        let ttl = PENDING_TTL_INTERVALS * self.params.block_interval;
        let mut dropped = Vec::new();
        self.pending.retain(|p| {
            let keep = p.received_tick + ttl >= tick;
            if !keep {
                dropped.push(p.block.digest());
            }
            keep
        });
        dropped
    }

    fn connect(&mut self, block: SharedBlock, tick: u64) -> Result<ApplyOutcome, BlockError> {
        let digest = block.digest();
        let parent_digest = block.header.parent;
        let parent = self.blocks[&parent_digest].block.clone();
        if let Err(field) = check_header(&self.params, &parent.header, &parent_digest, &block) {
            self.invalid.insert(digest);
            return Err(BlockError::Invalid(field));
        }

        if parent_digest == self.head() {
            let mut next = self.accounts.clone();
            if let Err(field) = apply_txs(&mut next, &block, |tx| self.authorize(tx)) {
                self.invalid.insert(digest);
                return Err(BlockError::Invalid(field));
            }
            self.accounts = next;
            for tx in &block.txs {
                self.tx_index.insert(tx.txid(), block.height());
                self.mempool.shift_remove(&tx.txid());
            }
            self.canonical.push(digest);
            self.store(block, tick);
            self.evict_stale();
            return Ok(ApplyOutcome {
                connected: vec![digest],
                head_changed: true,
                ..Default::default()
            });
        }

        let height = block.height();
        self.store(block, tick);
        if height <= self.head_height() {
            // Equal or shorter branch: first-seen head stays.
            self.orphans.insert(digest);
            return Ok(ApplyOutcome {
                connected: vec![digest],
                orphaned: vec![digest],
                ..Default::default()
            });
        }
        match self.reorganize(digest) {
            Ok(mut outcome) => {
                outcome.connected.insert(0, digest);
                Ok(outcome)
            }
            Err(e) => Err(e),
        }
    }

    fn store(&mut self, block: SharedBlock, tick: u64) {
        self.blocks.insert(
            block.digest(),
            StoredBlock {
                block,
                received_tick: tick,
            },
        );
    }

    /// Path of digests from genesis to `tip`.
    fn branch_to(&self, tip: Digest256) -> Vec<Digest256> {
        let mut path = Vec::new();
        let mut cur = tip;
        loop {
            path.push(cur);
            let b = &self.blocks[&cur].block;
            if b.height() == 0 {
                break;
            }
            cur = b.header.parent;
        }
        path.reverse();
        path
    }

    fn replay(&mut self, branch: &[Digest256]) -> Result<Accounts, (usize, FaultField)> {
        let params = self.params.clone();
        let imports: Vec<Output> = self.imports.values().flatten().copied().collect();
        let mut accounts = Accounts::genesis(&params, &imports);
        for (i, d) in branch.iter().enumerate().skip(1) {
            let block = self.blocks[d].block.clone();
            apply_txs(&mut accounts, &block, |tx| self.authorize(tx)).map_err(|f| (i, f))?;
        }
        Ok(accounts)
    }

    fn reorganize(&mut self, tip: Digest256) -> Result<ApplyOutcome, BlockError> {
        let branch = self.branch_to(tip);
        let accounts = match self.replay(&branch) {
            Ok(a) => a,
            Err((bad, field)) => {
                self.discard_subtree(branch[bad]);
                return Err(BlockError::Invalid(field));
            }
        };
        let fork = branch
            .iter()
            .zip(&self.canonical)
            .take_while(|(a, b)| a == b)
            .count();
        let abandoned: Vec<Digest256> = self.canonical[fork..].to_vec();
        self.canonical = branch;
        self.accounts = accounts;
        self.tx_index.clear();
        for (h, d) in self.canonical.iter().enumerate() {
            for tx in &self.blocks[d].block.txs {
                self.tx_index.insert(tx.txid(), h as u64);
            }
        }
        for d in &self.canonical[fork..] {
            self.orphans.remove(d);
        }
        self.orphans.extend(abandoned.iter().copied());

        let adopted: Vec<Digest256> = self.canonical[fork..].to_vec();
        for d in &adopted {
            for tx in self.blocks[d].block.txs.clone() {
                self.mempool.shift_remove(&tx.txid());
            }
        }
        let mut returned = Vec::new();
        for d in &abandoned {
            for tx in self.blocks[d].block.txs.clone() {
                let id = tx.txid();
                if matches!(self.submit(tx), Ok(true)) {
                    returned.push(id);
                }
            }
        }
        self.evict_stale();
        Ok(ApplyOutcome {
            orphaned: abandoned.clone(),
            head_changed: true,
            reorg_depth: abandoned.len() as u64,
            returned_to_mempool: returned,
            ..Default::default()
        })
    }

    /// Forgets `root` and every stored descendant, marking them invalid.
    fn discard_subtree(&mut self, root: Digest256) {
        let mut doomed = HashSet::from([root]);
        loop {
            let more: Vec<Digest256> = self
                .blocks
                .iter()
                .filter(|(d, s)| !doomed.contains(*d) && doomed.contains(&s.block.header.parent))
                .map(|(d, _)| *d)
                .collect();
            if more.is_empty() {
                break;
            }
            doomed.extend(more);
        }
        for d in doomed {
            self.blocks.remove(&d);
            self.orphans.remove(&d);
            self.invalid.insert(d);
        }
    }

    fn evict_stale(&mut self) {
        let accounts = &self.accounts;
        self.mempool.retain(|_, tx| tx.nonce() > accounts.nonce(&tx.sender()));
    }

    /// Replaces the set of credits imported from other chains and rebuilds
    /// balances from genesis.
    pub fn set_imports(&mut self, imports: BTreeMap<Digest256, Vec<Output>>) -> Result<(), ChainFault> {
        if imports == self.imports {
            return Ok(());
        }
        let previous = std::mem::replace(&mut self.imports, imports);
        let branch = self.canonical.clone();
        match self.replay(&branch) {
            Ok(accounts) => {
                self.accounts = accounts;
                Ok(())
            }
            Err((height, field)) => {
                self.imports = previous;
                Err(ChainFault {
                    height: height as u64,
                    field,
                })
            }
        }
    }

    /// Full replay of the canonical chain from genesis, re-deriving every
    /// digest and re-checking every signature, nonce and balance.
    pub fn validate_chain(&self) -> Result<(), ChainFault> {
        let blocks: Vec<Block> = self.canonical_blocks().map(|b| (**b).clone()).collect();
        let imports: Vec<Output> = self.imports.values().flatten().copied().collect();
        let replayed = validate_blocks(&self.params, &imports, &blocks)?;
        debug_assert_eq!(replayed, self.accounts);
        Ok(())
    }

    /// Account state obtained by replaying the canonical chain from genesis.
    pub fn replay_canonical(&self) -> Result<Accounts, ChainFault> {
        let blocks: Vec<Block> = self.canonical_blocks().map(|b| (**b).clone()).collect();
        let imports: Vec<Output> = self.imports.values().flatten().copied().collect();
        validate_blocks(&self.params, &imports, &blocks)
    }

    /// Canonical encoding of the canonical chain, genesis first.
    pub fn encoded_chain(&self) -> Vec<Vec<u8>> {
        self.canonical_blocks().map(|b| b.encode()).collect()
    }
}
