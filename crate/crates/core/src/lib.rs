//! Deterministic simulator of a robot swarm coordinating through a minimal blockchain.
//!
//! * [`crypto`]: digests, keys, signatures, addresses, sealed boxes.
//! * [`ledger`]: transactions, blocks, fork choice, mining policies, sidechains.
//! * [`netsim`]: seeded discrete-event gossip network with partitions.
//! * [`swarm`]: robots and the coordination scenarios built on the ledger.

pub mod codec;
pub mod crypto;
pub mod ledger;
pub mod netsim;
pub mod swarm;

pub use crypto::{Address, Digest256, KeyPair, PublicKey};
pub use ledger::{Block, ChainId, ChainParams, ChainState, MiningPolicy, Transaction, TxKind};
