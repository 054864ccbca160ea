use serde::{Deserialize, Serialize};

use crate::codec::{Decode, DecodeError, Decoder, Encode, Encoder};
use crate::crypto::{Address, Digest256};
use crate::ledger::tx::{ChainId, Output};

/// Which nodes may extend a chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiningPolicy {
    /// Header digest must have at least `zero_bits` leading zero bits, i.e. be
    /// below the target `2^(256 - zero_bits)`. Each node tries `attempts`
    /// random nonces per mining opportunity.
    Pow { zero_bits: u8, attempts: u32 },
    /// Height `h` may only be mined by `miners[h mod miners.len()]`.
    RoundRobin { miners: Vec<Address> },
    SingleMiner { miner: Address },
}

impl MiningPolicy {
    /// 256-bit big-endian target; a header digest is acceptable iff it compares below.
    pub fn pow_target(zero_bits: u8) -> [u8; 32] {
        let mut target = [0u8; 32];
        if zero_bits == 0 {
            return [0xff; 32];
        }
        // 2^(256 - bits) has a single set bit, `bits - 1` places below the top.
        let bits = zero_bits as usize;
        let byte = (bits - 1) / 8;
        let bit_in_byte = (bits - 1) % 8;
        target[byte] = 0x80 >> bit_in_byte;
        target
    }

    pub fn meets_target(digest: &Digest256, zero_bits: u8) -> bool {
        zero_bits == 0 || digest.0 < Self::pow_target(zero_bits)
    }

    /// The address scheduled to mine `height`, if the policy is scheduled.
    pub fn scheduled_miner(&self, height: u64) -> Option<Address> {
        match self {
            MiningPolicy::Pow { .. } => None,
            MiningPolicy::RoundRobin { miners } => {
                miners.get((height % miners.len() as u64) as usize).copied()
            }
            MiningPolicy::SingleMiner { miner } => Some(*miner),
        }
    }
}

impl Encode for MiningPolicy {
    fn encode_to(&self, enc: &mut Encoder) {
        match self {
            MiningPolicy::Pow { zero_bits, attempts } => {
                enc.u8(0).u8(*zero_bits).u32(*attempts);
            }
            MiningPolicy::RoundRobin { miners } => {
                enc.u8(1).list(miners);
            }
            MiningPolicy::SingleMiner { miner } => {
                enc.u8(2).put(miner);
            }
        }
    }
}

impl Decode for MiningPolicy {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u8("mining policy")? {
            0 => Ok(MiningPolicy::Pow {
                zero_bits: dec.u8("zero bits")?,
                attempts: dec.u32("attempts")?,
            }),
            1 => Ok(MiningPolicy::RoundRobin {
                miners: dec.list("miners")?,
            }),
            2 => Ok(MiningPolicy::SingleMiner { miner: dec.get()? }),
            tag => Err(DecodeError::InvalidTag {
                what: "mining policy",
                tag,
            }),
        }
    }
}

/// Link from a sidechain to the chain and peg-out transaction that funded its genesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParentLink {
    pub chain_id: ChainId,
    pub peg_txid: Digest256,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainParams {
    pub chain_id: ChainId,
    /// Ticks between mining opportunities.
    pub block_interval: u64,
    pub max_tx_per_block: u32,
    pub mining_policy: MiningPolicy,
    /// Blocks (including the containing one) before a transaction counts as final.
    pub confirmation_depth: u32,
    pub genesis_allocation: Vec<Output>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<ParentLink>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParamsError {
    #[error("block_interval must be >= 1")]
    ZeroInterval,
    #[error("max_tx_per_block must be >= 1")]
    ZeroCapacity,
    #[error("confirmation_depth must be >= 1")]
    ZeroDepth,
    #[error("round_robin needs at least one miner")]
    NoMiners,
    #[error("genesis allocation amounts must be >= 1")]
    ZeroAllocation,
    #[error("pow zero_bits must be < 256 and attempts >= 1")]
    BadPow,
}

impl ChainParams {
    pub fn check(&self) -> Result<(), ParamsError> {
        if self.block_interval == 0 {
            return Err(ParamsError::ZeroInterval);
        }
        if self.max_tx_per_block == 0 {
            return Err(ParamsError::ZeroCapacity);
        }
        if self.confirmation_depth == 0 {
            return Err(ParamsError::ZeroDepth);
        }
        match &self.mining_policy {
            MiningPolicy::RoundRobin { miners } if miners.is_empty() => {
                return Err(ParamsError::NoMiners)
            }
            MiningPolicy::Pow { attempts: 0, .. } => return Err(ParamsError::BadPow),
            _ => {}
        }
        if self.genesis_allocation.iter().any(|o| o.amount == 0) {
            return Err(ParamsError::ZeroAllocation);
        }
        Ok(())
    }

    pub fn genesis_total(&self) -> u128 {
        self.genesis_allocation.iter().map(|o| o.amount as u128).sum()
    }
}

impl Encode for ChainParams {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.put(&self.chain_id)
            .u64(self.block_interval)
            .u32(self.max_tx_per_block)
            .put(&self.mining_policy)
            .u32(self.confirmation_depth)
            .list(&self.genesis_allocation);
        match &self.parent {
            None => {
                enc.u8(0);
            }
            Some(link) => {
                enc.u8(1).put(&link.chain_id).put(&link.peg_txid);
            }
        }
    }
}

impl Decode for ChainParams {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let chain_id = dec.get()?;
        let block_interval = dec.u64("block interval")?;
        let max_tx_per_block = dec.u32("max tx")?;
        let mining_policy = dec.get()?;
        let confirmation_depth = dec.u32("confirmation depth")?;
        let genesis_allocation = dec.list("genesis allocation")?;
        let parent = match dec.u8("parent flag")? {
            0 => None,
            1 => Some(ParentLink {
                chain_id: dec.get()?,
                peg_txid: dec.get()?,
            }),
            tag => {
                return Err(DecodeError::InvalidTag {
                    what: "parent flag",
                    tag,
                })
            }
        };
        let params = ChainParams {
            chain_id,
            block_interval,
            max_tx_per_block,
            mining_policy,
            confirmation_depth,
            genesis_allocation,
            parent,
        };
        params
            .check()
            .map_err(|_| DecodeError::Invalid("chain params"))?;
        Ok(params)
    }
}
