use std::sync::Arc;

use crate::codec::{Decode, DecodeError, Decoder, Encode, Encoder};
use crate::crypto::{self, Address, Digest256, KeyPair, Signature};
use crate::ledger::params::ChainParams;
use crate::ledger::tx::{ChainId, Transaction};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockHeader {
    pub chain_id: ChainId,
    pub height: u64,
    pub parent: Digest256,
    pub tx_root: Digest256,
    pub miner: Address,
    pub timestamp: u64,
    /// Proof-of-work nonce; empty for scheduled policies. The genesis block
    /// carries the encoded chain parameters here, so its digest commits to them.
    pub policy_proof: Vec<u8>,
}

impl BlockHeader {
    pub fn digest(&self) -> Digest256 {
        crypto::hash(&self.encode())
    }
}

impl Encode for BlockHeader {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.put(&self.chain_id)
            .u64(self.height)
            .put(&self.parent)
            .put(&self.tx_root)
            .put(&self.miner)
            .u64(self.timestamp)
            .bytes(&self.policy_proof);
    }
}

impl Decode for BlockHeader {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            chain_id: dec.get()?,
            height: dec.u64("height")?,
            parent: dec.get()?,
            tx_root: dec.get()?,
            miner: dec.get()?,
            timestamp: dec.u64("timestamp")?,
            policy_proof: dec.bytes("policy proof")?,
        })
    }
}

pub fn tx_root(txs: &[Transaction]) -> Digest256 {
    let mut buf = Vec::with_capacity(txs.len() * crypto::DIGEST_LEN);
    for tx in txs {
        buf.extend_from_slice(&tx.txid().0);
    }
    crypto::hash(&buf)
}

/// Header, ordered transactions, and the miner's seal over the header digest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub header: BlockHeader,
    pub txs: Vec<Transaction>,
    /// Absent only on the genesis block.
    pub seal: Option<Signature>,
}

pub type SharedBlock = Arc<Block>;

impl Block {
    pub fn genesis(params: &ChainParams) -> Block {
        Block {
            header: BlockHeader {
                chain_id: params.chain_id,
                height: 0,
                parent: Digest256::ZERO,
                tx_root: tx_root(&[]),
                miner: Address([0; crypto::ADDRESS_LEN]),
                timestamp: 0,
                policy_proof: params.encode(),
            },
            txs: Vec::new(),
            seal: None,
        }
    }

    /// Builds and seals a block.
    pub fn sealed(mut header: BlockHeader, txs: Vec<Transaction>, miner: &KeyPair) -> Block {
        header.tx_root = tx_root(&txs);
        let seal = miner.sign(&header.digest().0);
        Block {
            header,
            txs,
            seal: Some(seal),
        }
    }

    pub fn digest(&self) -> Digest256 {
        self.header.digest()
    }

    pub fn height(&self) -> u64 {
        self.header.height
    }

    pub fn encoded_len(&self) -> usize {
        self.encode().len()
    }
}

impl Encode for Block {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.put(&self.header).list(&self.txs);
        match &self.seal {
            None => {
                enc.u8(0);
            }
            Some(sig) => {
                enc.u8(1).put(sig);
            }
        }
    }
}

impl Decode for Block {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let header = dec.get()?;
        let txs = dec.list("block txs")?;
        let seal = match dec.u8("seal flag")? {
            0 => None,
            1 => Some(dec.get()?),
            tag => return Err(DecodeError::InvalidTag { what: "seal flag", tag }),
        };
        Ok(Self { header, txs, seal })
    }
}
