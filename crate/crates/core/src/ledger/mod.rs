//! Transactions, blocks, chain state, mining policies, fork choice and pegged sidechains.

pub mod accounts;
pub mod block;
pub mod dump;
pub mod params;
pub mod peg;
pub mod state;
pub mod tx;

pub use accounts::{Accounts, Burn, Escrow, Proposal, Rejection, ESCROW_TIMEOUT_BLOCKS};
pub use block::{Block, BlockHeader, SharedBlock};
pub use params::{ChainParams, MiningPolicy, ParentLink};
pub use peg::{create_sidechain, peg_in, ChainSet, PegError};
pub use state::{ApplyOutcome, BlockError, ChainFault, ChainState, FaultField};
pub use tx::{ChainId, EscrowPayload, Output, ProposalPayload, Transaction, TxKind, UnsignedTx, MAX_PAYLOAD};
