use std::collections::{HashSet, VecDeque};

use crate::crypto::Digest32;
use crate::tx::Transaction;

/// FIFO pool of pending transactions, deduplicated by hash.
#[derive(Debug, Default, Clone)]
pub struct Mempool {
    queue: VecDeque<(Digest32, Transaction)>,
    index: HashSet<Digest32>,
}

impl Mempool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns false if the transaction is already pooled.
    pub fn insert(&mut self, tx: Transaction) -> bool {
        let h = tx.hash();
        if !self.index.insert(h) {
            return false;
        }
        self.queue.push_back((h, tx));
        true
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn contains(&self, hash: &Digest32) -> bool {
        self.index.contains(hash)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transaction> {
        self.queue.iter().map(|(_, tx)| tx)
    }

    pub fn remove_all(&mut self, hashes: &HashSet<Digest32>) {
        if hashes.is_empty() {
            return;
        }
        self.queue.retain(|(h, _)| !hashes.contains(h));
        self.index.retain(|h| !hashes.contains(h));
    }

    /// Keeps transactions for which `keep` returns true, visiting in FIFO order.
    pub fn retain(&mut self, mut keep: impl FnMut(&Transaction) -> bool) {
        let index = &mut self.index;
        self.queue.retain(|(h, tx)| {
            let k = keep(tx);
            if !k {
                index.remove(h);
            }
            k
        });
    }
}
