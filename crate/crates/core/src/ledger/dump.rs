//! Chain dump files.
//!
//! `chain_<id>.bin` holds the canonical chain, genesis first, one record per
//! block: a 4-byte big-endian length followed by the block's canonical
//! encoding. The genesis header carries the chain parameters, so a dump is
//! self-describing. `chain_<id>.jsonl` is a human-readable summary with one
//! line per block.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::codec::{Decode, Encode};
use crate::crypto::{Address, Digest256};
use crate::ledger::block::Block;
use crate::ledger::params::ChainParams;
use crate::ledger::state::{validate_blocks, ChainFault, ChainState, FaultField};
use crate::ledger::tx::{ChainId, Output, TxKind};

#[derive(Debug, Serialize)]
struct BlockSummary {
    height: u64,
    digest: Digest256,
    miner: Address,
    tx_count: usize,
    timestamp: u64,
}

pub fn dump_bytes(state: &ChainState) -> Vec<u8> {
    let mut out = Vec::new();
    for record in state.encoded_chain() {
        out.extend_from_slice(&(record.len() as u32).to_be_bytes());
        out.extend_from_slice(&record);
    }
    out
}

pub fn summary_lines(state: &ChainState) -> String {
    let mut out = String::new();
    for b in state.canonical_blocks() {
        let line = BlockSummary {
            height: b.height(),
            digest: b.digest(),
            miner: b.header.miner,
            tx_count: b.txs.len(),
            timestamp: b.header.timestamp,
        };
        out.push_str(&serde_json::to_string(&line).expect("summary serializes"));
        out.push('\n');
    }
    out
}

pub fn dump_path(dir: &Path, chain: ChainId) -> PathBuf {
    dir.join(format!("chain_{chain}.bin"))
}

/// Writes both the binary dump and its JSONL sidecar into `dir`.
pub fn write_dump(state: &ChainState, dir: &Path) -> io::Result<PathBuf> {
    let id = state.params().chain_id;
    let bin = dump_path(dir, id);
    fs::write(&bin, dump_bytes(state))?;
    fs::write(dir.join(format!("chain_{id}.jsonl")), summary_lines(state))?;
    Ok(bin)
}

/// Splits a dump into blocks. A malformed record is reported at the height
/// it would have occupied.
pub fn read_dump(bytes: &[u8]) -> Result<Vec<Block>, ChainFault> {
    let mut blocks = Vec::new();
    let mut rest = bytes;
    while !rest.is_empty() {
        let fault = ChainFault {
            height: blocks.len() as u64,
            field: FaultField::Decode,
        };
        if rest.len() < 4 {
            return Err(fault);
        }
        let len = u32::from_be_bytes(rest[..4].try_into().expect("4 bytes")) as usize;
        rest = &rest[4..];
        if rest.len() < len {
            return Err(fault);
        }
        let block = Block::decode(&rest[..len]).map_err(|_| fault)?;
        blocks.push(block);
        rest = &rest[len..];
    }
    Ok(blocks)
}

/// Parameters committed to by a dump's genesis block.
pub fn dump_params(blocks: &[Block]) -> Result<ChainParams, ChainFault> {
    let genesis_fault = ChainFault {
        height: 0,
        field: FaultField::Genesis,
    };
    let genesis = blocks.first().ok_or(genesis_fault.clone())?;
    ChainParams::decode(&genesis.header.policy_proof).map_err(|_| genesis_fault)
}

/// Validates a set of dumps of sibling chains. Credits pegged into each chain
/// are taken from the peg transactions recorded in the others.
pub fn validate_dumps(dumps: &[Vec<u8>]) -> Vec<Result<ChainParams, ChainFault>> {
    let decoded: Vec<Result<(ChainParams, Vec<Block>), ChainFault>> = dumps
        .iter()
        .map(|bytes| {
            let blocks = read_dump(bytes)?;
            let params = dump_params(&blocks)?;
            Ok((params, blocks))
        })
        .collect();

    decoded
        .iter()
        .map(|entry| {
            let (params, blocks) = entry.clone()?;
            let mut imports: Vec<Output> = Vec::new();
            for (other_params, other_blocks) in decoded.iter().flatten() {
                if other_params.chain_id == params.chain_id {
                    continue;
                }
                for tx in other_blocks.iter().flat_map(|b| &b.txs) {
                    let to_here = tx.kind().is_peg()
                        && ChainId::decode(tx.payload()).ok() == Some(params.chain_id)
                        && params.parent.map(|l| l.peg_txid) != Some(tx.txid());
                    if to_here && matches!(tx.kind(), TxKind::PegOut | TxKind::PegIn) {
                        imports.extend_from_slice(tx.outputs());
                    }
                }
            }
            validate_blocks(&params, &imports, &blocks)?;
            Ok(params)
        })
        .collect()
}

pub fn validate_dump(bytes: &[u8]) -> Result<ChainParams, ChainFault> {
    validate_dumps(&[bytes.to_vec()]).remove(0)
}

/// Re-encodes blocks into dump format (used by tests that tamper with blocks).
pub fn encode_blocks(blocks: &[Block]) -> Vec<u8> {
    let mut out = Vec::new();
    for b in blocks {
        let rec = b.encode();
        out.extend_from_slice(&(rec.len() as u32).to_be_bytes());
        out.extend_from_slice(&rec);
    }
    out
}
