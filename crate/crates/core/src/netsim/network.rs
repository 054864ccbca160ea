use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::latency::LatencyModel;
use super::message::{Message, MessageKind, NodeId};
use super::queue::EventQueue;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PartitionError {
    #[error("partition groups must cover every node exactly once")]
    NotAPartition,
    #[error("partition window [{from}, {to}) is empty")]
    EmptyWindow { from: u64, to: u64 },
    #[error("partition window [{from}, {to}) overlaps an existing one")]
    Overlap { from: u64, to: u64 },
}

/// Cross-group messages sent during `[from, to)` are dropped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub groups: Vec<Vec<usize>>,
    pub from: u64,
    pub to: u64,
}

impl Partition {
    fn group_of(&self, node: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(&node))
    }

    pub fn active_at(&self, tick: u64) -> bool {
        self.from <= tick && tick < self.to
    }

    pub fn separates(&self, a: usize, b: usize) -> bool {
        self.group_of(a) != self.group_of(b)
    }
}

/// Result of a broadcast: messages queued for delivery and peers cut off by a partition.
#[derive(Debug, Default)]
pub struct Broadcast {
    pub scheduled: Vec<Message>,
    pub dropped: Vec<NodeId>,
}

/// Fully connected message layer with per-message latency draws.
pub struct Network {
    nodes: Vec<NodeId>,
    latency: LatencyModel,
    partitions: Vec<Partition>,
    queue: EventQueue,
    rng: ChaCha8Rng,
}

impl Network {
    pub fn new(nodes: Vec<NodeId>, latency: LatencyModel, seed: u64) -> Self {
        Self {
            nodes,
            latency,
            partitions: Vec::new(),
            queue: EventQueue::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn latency(&self) -> &LatencyModel {
        &self.latency
    }

    pub fn partitions(&self) -> &[Partition] {
        &self.partitions
    }

    pub fn add_partition(&mut self, groups: Vec<Vec<usize>>, from: u64, to: u64) -> Result<(), PartitionError> {
        if from >= to {
            return Err(PartitionError::EmptyWindow { from, to });
        }
        let mut seen = vec![0usize; self.nodes.len()];
        for &n in groups.iter().flatten() {
            match seen.get_mut(n) {
                Some(c) => *c += 1,
                None => return Err(PartitionError::NotAPartition),
            }
        }
        if seen.iter().any(|c| *c != 1) {
            return Err(PartitionError::NotAPartition);
        }
        if self.partitions.iter().any(|p| from < p.to && p.from < to) {
            return Err(PartitionError::Overlap { from, to });
        }
        self.partitions.push(Partition { groups, from, to });
        Ok(())
    }

    pub fn reachable(&self, a: usize, b: usize, tick: u64) -> bool {
        !self
            .partitions
            .iter()
            .any(|p| p.active_at(tick) && p.separates(a, b))
    }

    /// True if some partition ends exactly at `tick`.
    pub fn heals_at(&self, tick: u64) -> bool {
        self.partitions.iter().any(|p| p.to == tick)
    }

    pub fn send(
        &mut self,
        from: usize,
        to: usize,
        kind: MessageKind,
        body: Arc<Vec<u8>>,
        tick: u64,
    ) -> Option<Message> {
        if !self.reachable(from, to, tick) {
            return None;
        }
        let deliver_tick = tick + self.latency.draw(from, to, &mut self.rng);
        let msg = Message {
            kind,
            sender: self.nodes[from],
            recipient: self.nodes[to],
            body,
            send_tick: tick,
            deliver_tick,
        };
        self.queue.push(msg.clone());
        Some(msg)
    }

    /// One message per peer, each with its own latency draw.
    pub fn broadcast(&mut self, from: usize, kind: MessageKind, body: Arc<Vec<u8>>, tick: u64) -> Broadcast {
        let mut out = Broadcast::default();
        for to in 0..self.nodes.len() {
            if to == from {
                continue;
            }
            match self.send(from, to, kind, body.clone(), tick) {
                Some(m) => out.scheduled.push(m),
                None => out.dropped.push(self.nodes[to]),
            }
        }
        out
    }

    pub fn pop_due(&mut self, tick: u64) -> Option<Message> {
        self.queue.pop_due(tick)
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Address;

    fn ids(n: usize) -> Vec<NodeId> {
        (0..n)
            .map(|i| NodeId {
                index: i,
                address: Address([i as u8; 20]),
            })
            .collect()
    }

    fn body() -> Arc<Vec<u8>> {
        Arc::new(vec![1, 2, 3])
    }

    #[test]
    fn fixed_latency_broadcast() {
        let mut net = Network::new(ids(5), LatencyModel::Fixed { ticks: 2 }, 0);
        let b = net.broadcast(0, MessageKind::TxGossip, body(), 10);
        assert_eq!(b.scheduled.len(), 4);
        assert!(b.scheduled.iter().all(|m| m.deliver_tick == 12));
        assert!(net.pop_due(11).is_none());
        assert_eq!(std::iter::from_fn(|| net.pop_due(12)).count(), 4);
    }

    #[test]
    fn partition_limits_broadcast() {
        let mut net = Network::new(ids(5), LatencyModel::Fixed { ticks: 1 }, 0);
        net.add_partition(vec![vec![0, 1], vec![2, 3, 4]], 0, 100).unwrap();
        let b = net.broadcast(0, MessageKind::BlockGossip, body(), 10);
        let got: Vec<usize> = b.scheduled.iter().map(|m| m.recipient.index).collect();
        assert_eq!(got, vec![1]);
        assert_eq!(b.dropped.len(), 3);
        // After the window closes everything flows again.
        assert_eq!(net.broadcast(0, MessageKind::BlockGossip, body(), 100).scheduled.len(), 4);
    }

    #[test]
    fn singleton_partition_delivers_nothing() {
        let mut net = Network::new(ids(4), LatencyModel::Fixed { ticks: 1 }, 0);
        net.add_partition((0..4).map(|i| vec![i]).collect(), 0, 50).unwrap();
        for from in 0..4 {
            assert!(net.broadcast(from, MessageKind::TxGossip, body(), 5).scheduled.is_empty());
        }
        assert_eq!(net.in_flight(), 0);
    }

    #[test]
    fn partition_validation() {
        let mut net = Network::new(ids(3), LatencyModel::Fixed { ticks: 1 }, 0);
        assert_eq!(
            net.add_partition(vec![vec![0], vec![1]], 0, 10),
            Err(PartitionError::NotAPartition)
        );
        assert_eq!(
            net.add_partition(vec![vec![0, 1], vec![1, 2]], 0, 10),
            Err(PartitionError::NotAPartition)
        );
        assert_eq!(
            net.add_partition(vec![vec![0], vec![1, 2]], 10, 10),
            Err(PartitionError::EmptyWindow { from: 10, to: 10 })
        );
        net.add_partition(vec![vec![0], vec![1, 2]], 10, 20).unwrap();
        assert_eq!(
            net.add_partition(vec![vec![0, 1], vec![2]], 19, 30),
            Err(PartitionError::Overlap { from: 19, to: 30 })
        );
        net.add_partition(vec![vec![0, 1], vec![2]], 20, 30).unwrap();
        assert!(net.heals_at(20) && net.heals_at(30) && !net.heals_at(25));
    }
}
