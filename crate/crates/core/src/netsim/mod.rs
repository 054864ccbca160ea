//! Seeded discrete-event network: message scheduling, latency models,
//! flood gossip of transactions and blocks, partitions and inventory sync.

pub mod latency;
pub mod message;
pub mod network;
pub mod queue;
pub mod world;

pub use latency::{LatencyError, LatencyModel};
pub use message::{Message, MessageKind, NodeId};
pub use network::{Broadcast, Network, Partition, PartitionError};
pub use queue::EventQueue;
pub use world::{node_keys, Event, LoadConfig, Node, World, WorldConfig, WorldError};
