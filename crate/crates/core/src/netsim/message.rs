use std::sync::Arc;

use serde::Serialize;

use crate::crypto::Address;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct NodeId {
    pub index: usize,
    pub address: Address,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    TxGossip,
    BlockGossip,
    /// Body: chain id and the digest of a wanted block.
    InventoryRequest,
    /// Body: chain id and a run of consecutive blocks, oldest first.
    InventoryResponse,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub kind: MessageKind,
    pub sender: NodeId,
    pub recipient: NodeId,
    pub body: Arc<Vec<u8>>,
    pub send_tick: u64,
    pub deliver_tick: u64,
}
