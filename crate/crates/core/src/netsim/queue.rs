use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use super::message::Message;

struct Entry {
    deliver_tick: u64,
    seq: u64,
    msg: Message,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

impl Entry {
    fn key(&self) -> (u64, u64) {
        (self.deliver_tick, self.seq)
    }
}

/// Messages in flight, popped by (deliver_tick, insertion sequence).
#[derive(Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Entry>>,
    seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, msg: Message) {
        let entry = Entry {
            deliver_tick: msg.deliver_tick,
            seq: self.seq,
            msg,
        };
        self.seq += 1;
        self.heap.push(Reverse(entry));
    }

    /// Next message due at or before `tick`.
    pub fn pop_due(&mut self, tick: u64) -> Option<Message> {
        if self.heap.peek()?.0.deliver_tick > tick {
            return None;
        }
        self.heap.pop().map(|Reverse(e)| e.msg)
    }

    pub fn next_tick(&self) -> Option<u64> {
        self.heap.peek().map(|e| e.0.deliver_tick)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}
