//! Pegged sidechains.
//!
//! A peg transfer burns tokens on the chain it is mined on and credits the
//! same outputs on its destination chain. The credit is an *import*: the
//! destination replays it as an extra opening balance, so its account state
//! remains a pure function of (params, imports, canonical blocks). Imports are
//! derived from the canonical burns of the sibling chains held by the same
//! node; a reorg that drops a burn withdraws the credit again.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::codec::Decode;
use crate::crypto::Digest256;
use crate::ledger::accounts::Rejection;
use crate::ledger::params::{ChainParams, ParamsError, ParentLink};
use crate::ledger::state::{ChainFault, ChainState};
use crate::ledger::tx::{ChainId, Output, Transaction, TxKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PegError {
    #[error("chain id {0} already exists")]
    DuplicateChainId(ChainId),
    #[error("unknown chain {0}")]
    UnknownChain(ChainId),
    #[error("peg transaction rejected: {0}")]
    Rejected(Rejection),
    #[error("peg transaction has the wrong kind or destination")]
    WrongShape,
    #[error("peg transaction is valid but not yet on the canonical chain")]
    NotCanonical,
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Replay(#[from] ChainFault),
}

fn destination(tx: &Transaction) -> Option<ChainId> {
    ChainId::decode(tx.payload()).ok()
}

/// Distinguishes "valid but unmined" from "invalid" for a transaction that
/// was expected on `state`'s canonical chain.
fn require_canonical(state: &ChainState, tx: &Transaction) -> Result<(), PegError> {
    if state.tx_height(&tx.txid()).is_some() {
        return Ok(());
    }
    match state.validate_transaction(tx) {
        Ok(()) => Err(PegError::NotCanonical),
        Err(r) => Err(PegError::Rejected(r)),
    }
}

/// Opens a sidechain funded by a canonical `peg_out` on `parent`. The new
/// chain's genesis credits exactly the peg-out outputs; `params` supplies
/// everything else (its own mining policy in particular).
pub fn create_sidechain(
    parent: &ChainState,
    mut params: ChainParams,
    peg_out: &Transaction,
) -> Result<ChainState, PegError> {
    if params.chain_id == parent.params().chain_id {
        return Err(PegError::DuplicateChainId(params.chain_id));
    }
    if peg_out.kind() != TxKind::PegOut
        || peg_out.chain_id() != parent.params().chain_id
        || destination(peg_out) != Some(params.chain_id)
    {
        return Err(PegError::WrongShape);
    }
    require_canonical(parent, peg_out)?;
    params.genesis_allocation = peg_out.outputs().to_vec();
    params.parent = Some(ParentLink {
        chain_id: parent.params().chain_id,
        peg_txid: peg_out.txid(),
    });
    Ok(ChainState::new(params)?)
}

/// Credits `parent` with a canonical `peg_in` burned on `side`.
pub fn peg_in(side: &ChainState, parent: &mut ChainState, tx: &Transaction) -> Result<(), PegError> {
    if tx.kind() != TxKind::PegIn
        || tx.chain_id() != side.params().chain_id
        || destination(tx) != Some(parent.params().chain_id)
    {
        return Err(PegError::WrongShape);
    }
    require_canonical(side, tx)?;
    let mut imports = parent.imports().clone();
    imports.insert(tx.txid(), tx.outputs().to_vec());
    parent.set_imports(imports)?;
    Ok(())
}

/// Every chain a node tracks, keyed by id.
#[derive(Debug, Clone)]
pub struct ChainSet {
    root: ChainId,
    chains: BTreeMap<ChainId, ChainState>,
}

impl ChainSet {
    pub fn new(root: ChainState) -> Self {
        let id = root.params().chain_id;
        Self {
            root: id,
            chains: BTreeMap::from([(id, root)]),
        }
    }

    pub fn root_id(&self) -> ChainId {
        self.root
    }

    pub fn root(&self) -> &ChainState {
        &self.chains[&self.root]
    }

    pub fn root_mut(&mut self) -> &mut ChainState {
        self.chains.get_mut(&self.root).expect("root chain")
    }

    pub fn get(&self, id: ChainId) -> Option<&ChainState> {
        self.chains.get(&id)
    }

    pub fn get_mut(&mut self, id: ChainId) -> Option<&mut ChainState> {
        self.chains.get_mut(&id)
    }

    pub fn contains(&self, id: ChainId) -> bool {
        self.chains.contains_key(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ChainId, &ChainState)> + '_ {
        self.chains.iter()
    }

    pub fn len(&self) -> usize {
        self.chains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chains.is_empty()
    }

    pub fn create_sidechain(
        &mut self,
        parent: ChainId,
        params: ChainParams,
        peg_out: &Transaction,
    ) -> Result<ChainId, PegError> {
        if self.chains.contains_key(&params.chain_id) {
            return Err(PegError::DuplicateChainId(params.chain_id));
        }
        let parent_state = self.chains.get(&parent).ok_or(PegError::UnknownChain(parent))?;
        let side = create_sidechain(parent_state, params, peg_out)?;
        let id = side.params().chain_id;
        self.chains.insert(id, side);
        self.sync_pegs()?;
        Ok(id)
    }

    /// Recomputes every chain's imports from the canonical burns of the others.
    /// Returns whether any chain changed.
    pub fn sync_pegs(&mut self) -> Result<bool, PegError> {
        if self.chains.len() < 2 {
            return Ok(false);
        }
        let mut wanted: BTreeMap<ChainId, BTreeMap<Digest256, Vec<Output>>> =
            self.chains.keys().map(|id| (*id, BTreeMap::new())).collect();
        for state in self.chains.values() {
            for burn in state.accounts().burns().values() {
                if let Some(dest) = self.chains.get(&burn.dest) {
                    let funds_genesis = dest.params().parent.is_some_and(|l| l.peg_txid == burn.txid);
                    if !funds_genesis {
                        wanted
                            .get_mut(&burn.dest)
                            .expect("listed")
                            .insert(burn.txid, burn.outputs.clone());
                    }
                }
            }
        }
        let mut changed = false;
        for (id, imports) in wanted {
            let state = self.chains.get_mut(&id).expect("listed");
            if *state.imports() != imports {
                state.set_imports(imports)?;
                changed = true;
            }
        }
        Ok(changed)
    }

    /// Sum of balances across every chain.
    pub fn total_balance(&self) -> u128 {
        self.chains.values().map(|c| c.accounts().total()).sum()
    }

    /// Tokens burned toward chains this set does not (yet) hold.
    pub fn in_flight(&self) -> u128 {
        self.chains
            .values()
            .flat_map(|c| c.accounts().burns().values())
            .filter(|b| !self.chains.contains_key(&b.dest))
            .flat_map(|b| b.outputs.iter())
            .map(|o| o.amount as u128)
            .sum()
    }

    /// Genesis allocation of the root chain; the conserved quantity.
    pub fn supply(&self) -> u128 {
        self.root().params().genesis_total()
    }

    pub fn is_conserved(&self) -> bool {
        self.total_balance() + self.in_flight() == self.supply()
    }
}
