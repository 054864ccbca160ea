//! Account-model state transition: balances, per-sender nonces, and the
//! registries that votes, escrows and peg transfers rely on.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::codec::Decode;
use crate::crypto::{self, Address, Digest256, MultisigSpec};
use crate::ledger::params::ChainParams;
use crate::ledger::tx::{ChainId, EscrowPayload, Output, ProposalPayload, Transaction, TxKind, MAX_PAYLOAD};

/// Blocks after an escrow is locked before its caller may reclaim it alone.
pub const ESCROW_TIMEOUT_BLOCKS: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Error, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rejection {
    #[error("bad-signature")]
    BadSignature,
    #[error("bad-nonce")]
    BadNonce,
    #[error("insufficient-balance")]
    InsufficientBalance,
    #[error("oversize-payload")]
    OversizePayload,
    #[error("wrong-chain")]
    WrongChain,
    #[error("insufficient-multisig")]
    InsufficientMultisig,
    #[error("zero-amount")]
    ZeroAmount,
    #[error("duplicate-vote")]
    DuplicateVote,
    #[error("unknown-proposal")]
    UnknownProposal,
    #[error("malformed")]
    Malformed,
}

/// Which stateful checks apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckMode {
    /// Inclusion at a given height: nonce must be next, outputs affordable.
    Block,
    /// Admission to the mempool: only stale nonces are rejected.
    Mempool,
}

/// Result of the state-independent checks on a transaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Authorization {
    Authorized,
    /// A claim below its threshold; valid only as a timed-out refund signed
    /// by one of these addresses.
    RefundOnly { signers: Vec<Address> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Proposal {
    pub txid: Digest256,
    pub proposer: Address,
    pub options: Vec<Address>,
    pub window: u32,
    pub height: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Escrow {
    pub caller: Address,
    pub spec: MultisigSpec,
    pub locked_height: u64,
}

/// Tokens destroyed on this chain for credit on `dest`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Burn {
    pub txid: Digest256,
    pub height: u64,
    pub dest: ChainId,
    pub outputs: Vec<Output>,
}

/// Checks that depend only on the transaction and chain parameters.
pub fn precheck(params: &ChainParams, tx: &Transaction) -> Result<Authorization, Rejection> {
    if tx.chain_id() != params.chain_id {
        return Err(Rejection::WrongChain);
    }
    if tx.payload().len() > MAX_PAYLOAD {
        return Err(Rejection::OversizePayload);
    }
    if tx.outputs().iter().any(|o| o.amount == 0) {
        return Err(Rejection::ZeroAmount);
    }
    if tx.total_out().is_none() {
        return Err(Rejection::InsufficientBalance);
    }
    check_shape(params, tx)?;

    let msg = tx.txid().0;
    if tx.kind() == TxKind::MultisigClaim {
        let spec = MultisigSpec::decode(tx.payload()).map_err(|_| Rejection::Malformed)?;
        if spec.address() != tx.sender() {
            return Err(Rejection::InsufficientMultisig);
        }
        if spec.count_valid(&msg, tx.signatures()) >= spec.threshold() as usize {
            return Ok(Authorization::Authorized);
        }
        let mut signers: Vec<Address> = tx
            .signatures()
            .iter()
            .filter(|s| crypto::verify(&s.signer, &msg, s))
            .map(|s| crypto::derive_address(&s.signer))
            .collect();
        signers.sort();
        signers.dedup();
        return Ok(Authorization::RefundOnly { signers });
    }

    match tx.signatures() {
        [sig] if crypto::derive_address(&sig.signer) == tx.sender()
            && crypto::verify(&sig.signer, &msg, sig) =>
        {
            Ok(Authorization::Authorized)
        }
        _ => Err(Rejection::BadSignature),
    }
}

fn peg_destination(payload: &[u8]) -> Option<ChainId> {
    ChainId::decode(payload).ok()
}

fn check_shape(params: &ChainParams, tx: &Transaction) -> Result<(), Rejection> {
    let outs = tx.outputs();
    let ok = match tx.kind() {
        TxKind::Transfer | TxKind::MultisigClaim => !outs.is_empty(),
        TxKind::Data => true,
        TxKind::VoteProposal => {
            outs.is_empty()
                && ProposalPayload::decode(tx.payload()).is_ok_and(|p| {
                    let distinct: BTreeSet<_> = p.options.iter().collect();
                    p.options.len() >= 2 && distinct.len() == p.options.len() && p.window >= 1
                })
        }
        TxKind::Vote => outs.len() == 1 && outs[0].amount == 1 && tx.payload().len() == crypto::DIGEST_LEN,
        TxKind::MultisigCall => EscrowPayload::decode(tx.payload())
            .is_ok_and(|p| outs.len() == 1 && outs[0].to == p.spec.address()),
        TxKind::PegOut => {
            !outs.is_empty() && peg_destination(tx.payload()).is_some_and(|d| d != params.chain_id)
        }
        TxKind::PegIn => {
            !outs.is_empty()
                && match (peg_destination(tx.payload()), params.parent) {
                    (Some(dest), Some(link)) => dest == link.chain_id,
                    _ => false,
                }
        }
        TxKind::Attestation => outs.is_empty() && tx.payload().len() == crypto::DIGEST_LEN,
    };
    if ok {
        Ok(())
    } else {
        Err(Rejection::Malformed)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Accounts {
    balances: BTreeMap<Address, u64>,
    nonces: BTreeMap<Address, u64>,
    proposals: BTreeMap<Digest256, Proposal>,
    votes: BTreeSet<(Digest256, Address)>,
    escrows: BTreeMap<Address, Escrow>,
    burns: BTreeMap<Digest256, Burn>,
}

impl Accounts {
    /// Opening state: the genesis allocation plus any credits imported from other chains.
    pub fn genesis<'a>(params: &'a ChainParams, imports: impl IntoIterator<Item = &'a Output>) -> Self {
        let mut acc = Accounts::default();
        for o in params.genesis_allocation.iter().chain(imports) {
            acc.credit(o.to, o.amount);
        }
        acc
    }

    pub(crate) fn credit(&mut self, to: Address, amount: u64) {
        let bal = self.balances.entry(to).or_insert(0);
        *bal = bal.checked_add(amount).expect("token supply overflow");
    }

    pub fn balance(&self, addr: &Address) -> u64 {
        self.balances.get(addr).copied().unwrap_or(0)
    }

    /// Last applied nonce (0 if the address never sent).
    pub fn nonce(&self, addr: &Address) -> u64 {
        self.nonces.get(addr).copied().unwrap_or(0)
    }

    pub fn balances(&self) -> &BTreeMap<Address, u64> {
        &self.balances
    }

    pub fn nonces(&self) -> &BTreeMap<Address, u64> {
        &self.nonces
    }

    pub fn proposal(&self, txid: &Digest256) -> Option<&Proposal> {
        self.proposals.get(txid)
    }

    pub fn escrow(&self, addr: &Address) -> Option<&Escrow> {
        self.escrows.get(addr)
    }

    pub fn burns(&self) -> &BTreeMap<Digest256, Burn> {
        &self.burns
    }

    pub fn total(&self) -> u128 {
        self.balances.values().map(|v| *v as u128).sum()
    }

    /// Stateful checks, given the result of [`precheck`].
    pub fn check_with(
        &self,
        tx: &Transaction,
        auth: &Authorization,
        height: u64,
        mode: CheckMode,
    ) -> Result<(), Rejection> {
        let sender = tx.sender();
        if let Authorization::RefundOnly { signers } = auth {
            let Some(escrow) = self.escrows.get(&sender) else {
                return Err(Rejection::InsufficientMultisig);
            };
            let matured = mode == CheckMode::Mempool
                || height >= escrow.locked_height + ESCROW_TIMEOUT_BLOCKS;
            let to_caller = tx.outputs().iter().all(|o| o.to == escrow.caller);
            if !(matured && to_caller && signers.contains(&escrow.caller)) {
                return Err(Rejection::InsufficientMultisig);
            }
        }

        let current = self.nonce(&sender);
        match mode {
            CheckMode::Block if tx.nonce() != current + 1 => return Err(Rejection::BadNonce),
            CheckMode::Mempool if tx.nonce() <= current => return Err(Rejection::BadNonce),
            _ => {}
        }
        if mode == CheckMode::Mempool {
            return Ok(());
        }

        let total = tx.total_out().ok_or(Rejection::InsufficientBalance)?;
        if total > self.balance(&sender) {
            return Err(Rejection::InsufficientBalance);
        }

        match tx.kind() {
            TxKind::VoteProposal => {
                let p = ProposalPayload::decode(tx.payload()).map_err(|_| Rejection::Malformed)?;
                if p.options.iter().any(|a| self.balance(a) != 0) {
                    return Err(Rejection::Malformed);
                }
            }
            TxKind::Vote => {
                let proposal_id = Digest256(tx.payload().try_into().map_err(|_| Rejection::Malformed)?);
                let proposal = self
                    .proposals
                    .get(&proposal_id)
                    .ok_or(Rejection::UnknownProposal)?;
                if !proposal.options.contains(&tx.outputs()[0].to) {
                    return Err(Rejection::Malformed);
                }
                if self.votes.contains(&(proposal_id, sender)) {
                    return Err(Rejection::DuplicateVote);
                }
            }
            TxKind::MultisigCall => {
                if self.escrows.contains_key(&tx.outputs()[0].to) {
                    return Err(Rejection::Malformed);
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Full validation for inclusion at `height`.
    pub fn check(&self, params: &ChainParams, tx: &Transaction, height: u64) -> Result<(), Rejection> {
        let auth = precheck(params, tx)?;
        self.check_with(tx, &auth, height, CheckMode::Block)
    }

    /// Applies a transaction already validated with `check_with(.., CheckMode::Block)`.
    pub fn apply_checked(&mut self, tx: &Transaction, height: u64) {
        let sender = tx.sender();
        let total = tx.total_out().expect("checked");
        self.nonces.insert(sender, tx.nonce());
        let bal = self.balances.get_mut(&sender);
        match bal {
            Some(b) => *b -= total,
            None => debug_assert_eq!(total, 0),
        }

        match tx.kind() {
            TxKind::PegOut | TxKind::PegIn => {
                let dest = peg_destination(tx.payload()).expect("checked");
                self.burns.insert(
                    tx.txid(),
                    Burn {
                        txid: tx.txid(),
                        height,
                        dest,
                        outputs: tx.outputs().to_vec(),
                    },
                );
                return;
            }
            TxKind::VoteProposal => {
                let p = ProposalPayload::decode(tx.payload()).expect("checked");
                self.proposals.insert(
                    tx.txid(),
                    Proposal {
                        txid: tx.txid(),
                        proposer: sender,
                        options: p.options,
                        window: p.window,
                        height,
                    },
                );
            }
            TxKind::Vote => {
                let id = Digest256(tx.payload().try_into().expect("checked"));
                self.votes.insert((id, sender));
            }
            TxKind::MultisigCall => {
                let p = EscrowPayload::decode(tx.payload()).expect("checked");
                self.escrows.insert(
                    p.spec.address(),
                    Escrow {
                        caller: sender,
                        spec: p.spec,
                        locked_height: height,
                    },
                );
            }
            _ => {}
        }
        for o in tx.outputs() {
            self.credit(o.to, o.amount);
        }
    }

    pub fn apply(&mut self, params: &ChainParams, tx: &Transaction, height: u64) -> Result<(), Rejection> {
        self.check(params, tx, height)?;
        self.apply_checked(tx, height);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{generate_keypair, KeyPair};
    use crate::ledger::params::MiningPolicy;
    use crate::ledger::tx::{escrow_claim, UnsignedTx};

    fn key(i: u8) -> KeyPair {
        generate_keypair(&[i; 32])
    }

    fn params(alloc: &[(&KeyPair, u64)]) -> ChainParams {
        ChainParams {
            chain_id: ChainId(0),
            block_interval: 10,
            max_tx_per_block: 100,
            mining_policy: MiningPolicy::SingleMiner { miner: key(0).address() },
            confirmation_depth: 1,
            genesis_allocation: alloc.iter().map(|(k, a)| Output::new(k.address(), *a)).collect(),
            parent: None,
        }
    }

    fn transfer(from: &KeyPair, nonce: u64, to: Address, amount: u64) -> Transaction {
        UnsignedTx {
            chain_id: ChainId(0),
            kind: TxKind::Transfer,
            sender: from.address(),
            nonce,
            outputs: vec![Output::new(to, amount)],
            payload: vec![],
        }
        .sign(from)
    }

    #[test]
    fn transfer_preconditions() {
        let a = key(1);
        let p = params(&[(&a, 5)]);
        let acc = Accounts::genesis(&p, []);
        assert_eq!(acc.check(&p, &transfer(&a, 1, key(2).address(), 1), 1), Ok(()));
        assert_eq!(
            acc.check(&p, &transfer(&a, 1, key(2).address(), 6), 1),
            Err(Rejection::InsufficientBalance)
        );
        assert_eq!(
            acc.check(&p, &transfer(&a, 2, key(2).address(), 1), 1),
            Err(Rejection::BadNonce)
        );
        assert_eq!(
            acc.check(&p, &transfer(&a, 1, key(2).address(), 0), 1),
            Err(Rejection::ZeroAmount)
        );
        let forged = UnsignedTx { ..transfer(&a, 1, key(2).address(), 1).body().clone() }.sign(&key(3));
        assert_eq!(acc.check(&p, &forged, 1), Err(Rejection::BadSignature));
        let mut other_chain = transfer(&a, 1, key(2).address(), 1).body().clone();
        other_chain.chain_id = ChainId(9);
        assert_eq!(acc.check(&p, &other_chain.sign(&a), 1), Err(Rejection::WrongChain));
        let mut big = transfer(&a, 1, key(2).address(), 1).body().clone();
        big.payload = vec![0; MAX_PAYLOAD + 1];
        assert_eq!(acc.check(&p, &big.sign(&a), 1), Err(Rejection::OversizePayload));
    }

    #[test]
    fn double_spend_rejected_after_apply() {
        let a = key(1);
        let p = params(&[(&a, 5)]);
        let mut acc = Accounts::genesis(&p, []);
        acc.apply(&p, &transfer(&a, 1, key(2).address(), 4), 1).unwrap();
        assert_eq!(acc.balance(&a.address()), 1);
        assert_eq!(acc.nonce(&a.address()), 1);
        assert_eq!(
            acc.check(&p, &transfer(&a, 2, key(2).address(), 4), 1),
            Err(Rejection::InsufficientBalance)
        );
    }

    #[test]
    fn escrow_claim_and_refund() {
        let (caller, r1, r2) = (key(1), key(2), key(3));
        let p = params(&[(&caller, 10)]);
        let mut acc = Accounts::genesis(&p, []);
        let spec = MultisigSpec::new(2, vec![caller.public, r1.public, r2.public]).unwrap();
        let call = UnsignedTx {
            chain_id: ChainId(0),
            kind: TxKind::MultisigCall,
            sender: caller.address(),
            nonce: 1,
            outputs: vec![Output::new(spec.address(), 4)],
            payload: crate::codec::Encode::encode(&EscrowPayload { spec: spec.clone(), memo: vec![] }),
        }
        .sign(&caller);
        acc.apply(&p, &call, 3).unwrap();

        let claim = escrow_claim(ChainId(0), &spec, 1, vec![Output::new(r1.address(), 4)]);
        let id = claim.txid();
        let one = claim.clone().with_signatures(vec![r1.sign(&id.0)]);
        assert_eq!(acc.check(&p, &one, 4), Err(Rejection::InsufficientMultisig));
        // duplicate signatures from the same key count once
        let dup = claim.clone().with_signatures(vec![r1.sign(&id.0), r1.sign(&id.0)]);
        assert_eq!(acc.check(&p, &dup, 4), Err(Rejection::InsufficientMultisig));
        let two = claim.with_signatures(vec![r1.sign(&id.0), caller.sign(&id.0)]);
        assert_eq!(acc.check(&p, &two, 4), Ok(()));

        let refund = escrow_claim(ChainId(0), &spec, 1, vec![Output::new(caller.address(), 4)]);
        let rid = refund.txid();
        let refund = refund.with_signatures(vec![caller.sign(&rid.0)]);
        assert_eq!(acc.check(&p, &refund, 12), Err(Rejection::InsufficientMultisig));
        assert_eq!(acc.check(&p, &refund, 13), Ok(()));

        acc.apply(&p, &two, 4).unwrap();
        assert_eq!(acc.balance(&r1.address()), 4);
        assert_eq!(acc.check(&p, &refund, 13), Err(Rejection::BadNonce));
    }

    #[test]
    fn votes_once_per_proposal() {
        let (prop, voter) = (key(1), key(2));
        let p = params(&[(&prop, 1), (&voter, 3)]);
        let mut acc = Accounts::genesis(&p, []);
        let options = vec![Address([0xaa; 20]), Address([0xbb; 20])];
        let proposal = UnsignedTx {
            chain_id: ChainId(0),
            kind: TxKind::VoteProposal,
            sender: prop.address(),
            nonce: 1,
            outputs: vec![],
            payload: crate::codec::Encode::encode(&ProposalPayload { options: options.clone(), window: 5 }),
        }
        .sign(&prop);
        let vote = |nonce| {
            UnsignedTx {
                chain_id: ChainId(0),
                kind: TxKind::Vote,
                sender: voter.address(),
                nonce,
                outputs: vec![Output::new(options[0], 1)],
                payload: proposal.txid().0.to_vec(),
            }
            .sign(&voter)
        };
        assert_eq!(acc.check(&p, &vote(1), 1), Err(Rejection::UnknownProposal));
        acc.apply(&p, &proposal, 1).unwrap();
        acc.apply(&p, &vote(1), 2).unwrap();
        assert_eq!(acc.check(&p, &vote(2), 2), Err(Rejection::DuplicateVote));
        assert_eq!(acc.balance(&options[0]), 1);
    }
}
