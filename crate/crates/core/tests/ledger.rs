mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use common::{key, params, round_robin, FUNDS};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use swarmledger_core::codec::Encode;
use swarmledger_core::crypto::{Address, KeyPair, MultisigSpec};
use swarmledger_core::ledger::tx::escrow_claim;
use swarmledger_core::ledger::dump::{dump_bytes, encode_blocks, read_dump, validate_dump};
use swarmledger_core::ledger::{
    create_sidechain, Block, BlockError, ChainId, ChainParams, ChainSet, ChainState, EscrowPayload,
    FaultField, MiningPolicy, Output, Rejection, Transaction, TxKind, UnsignedTx,
};

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(5)
}

fn tx(from: &KeyPair, chain: u32, kind: TxKind, nonce: u64, outputs: Vec<Output>, payload: Vec<u8>) -> Transaction {
    UnsignedTx {
        chain_id: ChainId(chain),
        kind,
        sender: from.address(),
        nonce,
        outputs,
        payload,
    }
    .sign(from)
}

fn transfer(from: &KeyPair, nonce: u64, to: Address, amount: u64) -> Transaction {
    tx(from, 1, TxKind::Transfer, nonce, vec![Output::new(to, amount)], Vec::new())
}

fn any_miner() -> MiningPolicy {
    MiningPolicy::Pow {
        zero_bits: 0,
        attempts: 1,
    }
}

/// Mines on `state` at `tick` and applies the block locally.
fn mine(state: &mut ChainState, tick: u64, miner: &KeyPair) -> Arc<Block> {
    let block = Arc::new(state.mine_block(tick, miner, &mut rng()).expect("authorized miner"));
    state.apply_block(block.clone(), tick).expect("own block valid");
    block
}

fn balances(state: &ChainState) -> BTreeMap<Address, u64> {
    state.accounts().balances().clone()
}

#[test]
fn validate_transaction_reasons() {
    let (a, b) = (key(1), key(2));
    let mut p = params(1, any_miner(), &[], 10, 10);
    p.genesis_allocation = vec![Output::new(a.address(), 5)];
    let state = ChainState::new(p).unwrap();

    assert_eq!(state.validate_transaction(&transfer(&a, 1, b.address(), 1)), Ok(()));
    assert_eq!(
        state.validate_transaction(&transfer(&a, 1, b.address(), 6)),
        Err(Rejection::InsufficientBalance)
    );
    assert_eq!(
        state.validate_transaction(&transfer(&a, 2, b.address(), 1)),
        Err(Rejection::BadNonce)
    );
    let wrong_chain = tx(&a, 2, TxKind::Transfer, 1, vec![Output::new(b.address(), 1)], Vec::new());
    assert_eq!(state.validate_transaction(&wrong_chain), Err(Rejection::WrongChain));
    let big = tx(&a, 1, TxKind::Data, 1, Vec::new(), vec![0; 1025]);
    assert_eq!(state.validate_transaction(&big), Err(Rejection::OversizePayload));
    let forged = UnsignedTx {
        chain_id: ChainId(1),
        kind: TxKind::Transfer,
        sender: a.address(),
        nonce: 1,
        outputs: vec![Output::new(b.address(), 1)],
        payload: Vec::new(),
    }
    .sign(&b);
    assert_eq!(state.validate_transaction(&forged), Err(Rejection::BadSignature));
    assert_eq!(
        state.validate_transaction(&transfer(&a, 1, b.address(), 0)),
        Err(Rejection::ZeroAmount)
    );
}

#[test]
fn two_of_three_claim_needs_two_signatures() {
    let (utv, uav, uuv) = (key(1), key(2), key(3));
    let spec = MultisigSpec::new(2, vec![utv.public, uav.public, uuv.public]).unwrap();
    let mut p = params(1, single(&utv), &[&utv], 10, 10);
    p.confirmation_depth = 1;
    let mut state = ChainState::new(p).unwrap();

    let call = tx(
        &utv,
        1,
        TxKind::MultisigCall,
        1,
        vec![Output::new(spec.address(), 5)],
        EscrowPayload {
            spec: spec.clone(),
            memo: Vec::new(),
        }
        .encode(),
    );
    state.submit(call).unwrap();
    mine(&mut state, 10, &utv);
    assert_eq!(state.balance(&spec.address()), 5);

    let body = escrow_claim(ChainId(1), &spec, 1, vec![Output::new(uav.address(), 5)]);
    let id = body.txid();
    let one = body.clone().with_signatures(vec![uav.sign(&id.0)]);
    assert_eq!(state.validate_transaction(&one), Err(Rejection::InsufficientMultisig));
    let doubled = body.clone().with_signatures(vec![uav.sign(&id.0), uav.sign(&id.0)]);
    assert_eq!(state.validate_transaction(&doubled), Err(Rejection::InsufficientMultisig));
    let two = body.with_signatures(vec![uav.sign(&id.0), utv.sign(&id.0)]);
    assert_eq!(state.validate_transaction(&two), Ok(()));
}

fn single(k: &KeyPair) -> MiningPolicy {
    MiningPolicy::SingleMiner { miner: k.address() }
}

#[test]
fn round_robin_slot_owner_only() {
    let (a, b, c) = (key(1), key(2), key(3));
    let mut state = ChainState::new(params(1, round_robin(&[&a, &b, &c]), &[&a], 1, 10)).unwrap();
    let keys = [&a, &b, &c];
    for h in 1..=7u64 {
        let owner = keys[(h % 3) as usize];
        for k in keys {
            let got = state.clone().mine_block(h, k, &mut rng());
            assert_eq!(got.is_some(), std::ptr::eq(k, owner), "height {h}");
        }
        if h < 7 {
            mine(&mut state, h, owner);
        }
    }
    // Height 7: 7 mod 3 = 1.
    assert!(state.clone().mine_block(7, &b, &mut rng()).is_some());
}

#[test]
fn single_miner_and_empty_blocks() {
    let (m, other) = (key(1), key(2));
    let mut state = ChainState::new(params(1, single(&m), &[&m], 10, 10)).unwrap();
    assert!(state.mine_block(10, &other, &mut rng()).is_none());
    // Not a mining opportunity.
    assert!(state.mine_block(15, &m, &mut rng()).is_none());
    let b = mine(&mut state, 10, &m);
    assert!(b.txs.is_empty());
    assert_eq!(state.head_height(), 1);
    state.validate_chain().unwrap();
}

#[test]
fn foreign_miner_block_rejected() {
    let (m, other) = (key(1), key(2));
    let p = params(1, single(&m), &[&m], 10, 10);
    let mut state = ChainState::new(p.clone()).unwrap();
    let mut impostor = ChainState::new(ChainParams {
        mining_policy: single(&other),
        ..p
    })
    .unwrap();
    let mut block = impostor.mine_block(10, &other, &mut rng()).unwrap();
    block.header.parent = state.head();
    let block = Block::sealed(block.header.clone(), block.txs.clone(), &other);
    assert_eq!(
        state.apply_block(Arc::new(block), 10),
        Err(BlockError::Invalid(FaultField::Policy))
    );
}

#[test]
fn first_seen_then_longer_branch_wins() {
    let (a, b) = (key(1), key(2));
    let base = ChainState::new(params(1, any_miner(), &[&a, &b], 10, 10)).unwrap();
    let mut side_a = base.clone();
    let mut side_b = base.clone();
    let a1 = mine(&mut side_a, 10, &a);
    let b1 = mine(&mut side_b, 10, &b);
    assert_ne!(a1.digest(), b1.digest());

    let mut s = base.clone();
    let o = s.apply_block(a1.clone(), 12).unwrap();
    assert_eq!((o.head_changed, o.orphaned.len()), (true, 0));
    let o = s.apply_block(b1.clone(), 12).unwrap();
    assert!(!o.head_changed);
    assert_eq!(s.head(), a1.digest());
    assert_eq!(s.orphans().iter().copied().collect::<Vec<_>>(), vec![b1.digest()]);

    let b2 = mine(&mut side_b, 20, &b);
    let o = s.apply_block(b2.clone(), 22).unwrap();
    assert_eq!(o.reorg_depth, 1);
    assert_eq!(s.head(), b2.digest());
    assert_eq!(s.orphans().iter().copied().collect::<Vec<_>>(), vec![a1.digest()]);
}

#[test]
fn reorg_returns_transfer_to_mempool() {
    let (a, b, c) = (key(1), key(2), key(3));
    let base = ChainState::new(params(1, any_miner(), &[&a, &b], 10, 10)).unwrap();

    let mut branch_a = base.clone();
    let pay = transfer(&a, 1, c.address(), 7);
    branch_a.submit(pay.clone()).unwrap();
    let a1 = mine(&mut branch_a, 10, &a);
    let a2 = mine(&mut branch_a, 20, &a);
    assert_eq!(a1.txs, vec![pay.clone()]);

    let mut branch_b = base.clone();
    let b_blocks: Vec<_> = (1..=3).map(|i| mine(&mut branch_b, 10 * i, &b)).collect();

    let mut s = base.clone();
    for blk in [&a1, &a2] {
        s.apply_block(blk.clone(), 0).unwrap();
    }
    assert_eq!(s.balance(&c.address()), 7);
    let mut reorg = None;
    for blk in &b_blocks {
        let o = s.apply_block(blk.clone(), 0).unwrap();
        if o.reorg_depth > 0 {
            reorg = Some(o);
        }
    }
    let reorg = reorg.expect("longer branch adopted");
    assert_eq!(reorg.reorg_depth, 2);
    assert_eq!(reorg.returned_to_mempool, vec![pay.txid()]);
    assert!(s.in_mempool(&pay.txid()));
    assert_eq!(s.balance(&c.address()), 0);
    assert_eq!(s.confirmations(&pay.txid()), 0);

    let block = mine(&mut s, 40, &a);
    assert_eq!(block.txs, vec![pay.clone()]);
    assert_eq!(s.confirmations(&pay.txid()), 1);
    mine(&mut s, 50, &b);
    assert_eq!(s.confirmations(&pay.txid()), 2);

    // Oracle: balances from a plain replay, plus the hand-computed expectation.
    assert_eq!(&s.replay_canonical().unwrap(), s.accounts());
    let mut expect = BTreeMap::new();
    expect.insert(a.address(), FUNDS - 7);
    expect.insert(b.address(), FUNDS);
    expect.insert(c.address(), 7);
    assert_eq!(balances(&s), expect);
}

#[test]
fn unknown_parent_is_buffered_then_connected() {
    let a = key(1);
    let base = ChainState::new(params(1, any_miner(), &[&a], 10, 10)).unwrap();
    let mut src = base.clone();
    let b1 = mine(&mut src, 10, &a);
    let b2 = mine(&mut src, 20, &a);

    let mut s = base.clone();
    let o = s.apply_block(b2.clone(), 21).unwrap();
    assert_eq!(o.missing_parent, Some(b1.digest()));
    assert_eq!(s.pending_len(), 1);
    let o = s.apply_block(b1.clone(), 22).unwrap();
    assert_eq!(o.connected, vec![b1.digest(), b2.digest()]);
    assert_eq!(s.head(), b2.digest());

    // A buffered block expires after ten intervals.
    let mut s = base.clone();
    s.apply_block(b2.clone(), 21).unwrap();
    assert!(s.expire_pending(21 + 100).is_empty());
    assert_eq!(s.expire_pending(21 + 101), vec![b2.digest()]);
}

#[test]
fn invalid_transaction_rejects_block() {
    let (a, b) = (key(1), key(2));
    let base = ChainState::new(params(1, any_miner(), &[&a], 10, 10)).unwrap();
    let mut s = base.clone();
    let mut block = s.mine_block(10, &a, &mut rng()).unwrap();
    let overspend = transfer(&a, 1, b.address(), FUNDS + 1);
    block.txs.push(overspend);
    let block = Block::sealed(block.header.clone(), block.txs.clone(), &a);
    assert_eq!(
        s.apply_block(Arc::new(block.clone()), 10),
        Err(BlockError::Invalid(FaultField::Transaction {
            index: 0,
            reason: Rejection::InsufficientBalance
        }))
    );
    assert_eq!(s.apply_block(Arc::new(block), 11), Err(BlockError::KnownInvalid));
}

#[test]
fn capacity_and_arrival_order() {
    let (a, b) = (key(1), key(2));
    let mut s = ChainState::new(params(1, any_miner(), &[&a, &b], 10, 3)).unwrap();
    let txs: Vec<_> = (1..=5).map(|n| transfer(&a, n, b.address(), 1)).collect();
    // Successor first: the second packing pass still picks it up.
    s.submit(txs[1].clone()).unwrap();
    s.submit(txs[0].clone()).unwrap();
    for t in &txs[2..] {
        s.submit(t.clone()).unwrap();
    }
    let block = mine(&mut s, 10, &a);
    assert_eq!(block.txs, txs[..3].to_vec());
    let block = mine(&mut s, 20, &a);
    assert_eq!(block.txs, txs[3..].to_vec());
}

fn build_chain(blocks: u64, with_data: bool) -> ChainState {
    let (a, b) = (key(1), key(2));
    let mut s = ChainState::new(params(1, round_robin(&[&a, &b]), &[&a, &b], 10, 10)).unwrap();
    for h in 1..=blocks {
        if with_data {
            let payload = format!("sensor-reading-{h:03}").into_bytes();
            s.submit(tx(&a, 1, TxKind::Data, h, Vec::new(), payload)).unwrap();
            s.submit(transfer(&b, h, a.address(), 1)).unwrap();
        }
        let miner = if h % 2 == 0 { &a } else { &b };
        mine(&mut s, 10 * h, miner);
    }
    s
}

#[test]
fn tampered_payload_fails_at_its_height() {
    let s = build_chain(50, true);
    s.validate_chain().unwrap();
    let bytes = dump_bytes(&s);
    validate_dump(&bytes).unwrap();

    let needle = b"sensor-reading-020";
    let at = bytes.windows(needle.len()).position(|w| w == needle).unwrap();
    let mut bad = bytes.clone();
    bad[at + 3] ^= 0x01;
    let fault = validate_dump(&bad).unwrap_err();
    assert_eq!(fault.height, 20);
    assert_eq!(fault.field, FaultField::TxRoot);
}

#[test]
fn every_header_byte_flip_is_caught() {
    let s = build_chain(6, true);
    let blocks = read_dump(&dump_bytes(&s)).unwrap();
    let target = 3usize;
    let header_len = blocks[target].header.encode().len();
    let prefix: usize = blocks[..target].iter().map(|b| 4 + b.encode().len()).sum::<usize>() + 4;
    let bytes = encode_blocks(&blocks);
    for i in 0..header_len {
        for bit in 0..8 {
            let mut bad = bytes.clone();
            bad[prefix + i] ^= 1 << bit;
            let fault = validate_dump(&bad).unwrap_err();
            assert!(
                fault.height == target as u64 || fault.height == target as u64 + 1,
                "byte {i} bit {bit}: {fault}"
            );
        }
    }
}

#[test]
fn sidechain_peg_round_trip() {
    let (a, leader) = (key(1), key(2));
    let mut root = ChainState::new(params(1, round_robin(&[&a, &leader]), &[&a, &leader], 10, 10)).unwrap();
    let side_params = params(2, single(&leader), &[], 5, 10);
    let peg_out = tx(&a, 1, TxKind::PegOut, 1, vec![Output::new(a.address(), 10)], ChainId(2).encode());
    root.submit(peg_out.clone()).unwrap();
    let mut set = ChainSet::new(root);
    let before = balances(set.root());

    // Not yet mined: refused, and the reason says so.
    assert!(matches!(
        create_sidechain(set.root(), side_params.clone(), &peg_out),
        Err(swarmledger_core::ledger::PegError::NotCanonical)
    ));
    mine(set.root_mut(), 10, &leader);
    assert!(set.is_conserved());
    assert_eq!(set.in_flight(), 10);
    set.create_sidechain(ChainId(1), side_params.clone(), &peg_out).unwrap();
    assert_eq!(set.in_flight(), 0);
    assert!(set.is_conserved());
    assert_eq!(set.root().balance(&a.address()), FUNDS - 10);
    assert_eq!(set.get(ChainId(2)).unwrap().balance(&a.address()), 10);
    assert!(matches!(
        set.create_sidechain(ChainId(1), side_params, &peg_out),
        Err(swarmledger_core::ledger::PegError::DuplicateChainId(_))
    ));

    // Each chain enforces its own policy.
    let side = set.get_mut(ChainId(2)).unwrap();
    assert!(side.mine_block(5, &a, &mut rng()).is_none());

    // peg_in 0 and overdrafts are refused.
    let zero = tx(&a, 2, TxKind::PegIn, 1, vec![Output::new(a.address(), 0)], ChainId(1).encode());
    assert_eq!(side.validate_transaction(&zero), Err(Rejection::ZeroAmount));
    let over = tx(&a, 2, TxKind::PegIn, 1, vec![Output::new(a.address(), 11)], ChainId(1).encode());
    assert_eq!(side.validate_transaction(&over), Err(Rejection::InsufficientBalance));

    // Back in two pieces: net zero.
    for (nonce, amount) in [(1, 4), (2, 6)] {
        let back = tx(&a, 2, TxKind::PegIn, nonce, vec![Output::new(a.address(), amount)], ChainId(1).encode());
        set.get_mut(ChainId(2)).unwrap().submit(back).unwrap();
    }
    mine(set.get_mut(ChainId(2)).unwrap(), 5, &leader);
    set.sync_pegs().unwrap();
    assert!(set.is_conserved());
    assert_eq!(balances(set.root()), before);
    assert_eq!(set.get(ChainId(2)).unwrap().balance(&a.address()), 0);
    for (_, c) in set.iter() {
        assert_eq!(&c.replay_canonical().unwrap(), c.accounts());
    }
}

#[test]
fn throughput_never_exceeds_capacity_per_interval() {
    let (a, b) = (key(1), key(2));
    let mut s = ChainState::new(params(1, any_miner(), &[&a, &b], 10, 4)).unwrap();
    for n in 1..=100 {
        s.submit(transfer(&a, n, b.address(), 1)).unwrap();
    }
    for h in 1..=20 {
        mine(&mut s, 10 * h, &a);
    }
    let blocks: Vec<_> = s.canonical_blocks().cloned().collect();
    for w in blocks.windows(11) {
        let txs: usize = w[1..].iter().map(|b| b.txs.len()).sum();
        let span = w[10].header.timestamp - w[0].header.timestamp;
        assert!(txs as f64 / span as f64 <= 4.0 / 10.0);
    }
}
