//! FIFO experience buffer whose mini-batches always contain the newest tuple.

use std::collections::VecDeque;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::loss::Transition;

#[derive(Clone, Debug)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    /// `(insertion sequence number, transition)`, oldest first.
    entries: VecDeque<(u64, Transition<T>)>,
    next_seq: u64,
    rng: ChaCha8Rng,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity.min(1 << 16)),
            next_seq: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends `t`, evicting the single oldest entry when full.
    pub fn push(&mut self, t: Transition<T>) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((self.next_seq, t));
        self.next_seq += 1;
    }

    pub fn newest(&self) -> Option<&Transition<T>> {
        self.entries.back().map(|(_, t)| t)
    }

    /// Entries oldest first with their insertion sequence numbers.
    pub fn iter(&self) -> impl Iterator<Item = (u64, &Transition<T>)> {
        self.entries.iter().map(|(s, t)| (*s, t))
    }

    /// `min(batch, len)` distinct transitions: the newest first, the rest
    /// uniformly without replacement from the older entries.
    pub fn sample(&mut self, batch: usize) -> Vec<&Transition<T>> {
        self.sample_indices(batch).into_iter().map(|i| &self.entries[i].1).collect()
    }

    /// Buffer positions (0 = oldest) that [`ReplayBuffer::sample`] would return.
    pub fn sample_indices(&mut self, batch: usize) -> Vec<usize> {
        assert!(!self.entries.is_empty(), "sampling from an empty buffer");
        assert!(batch > 0, "batch size must be positive");
        let n = self.entries.len();
        let take = batch.min(n);
        let mut out = Vec::with_capacity(take);
        out.push(n - 1);
        if take > 1 {
            out.extend(index::sample(&mut self.rng, n - 1, take - 1).into_iter());
        }
        out
    }
}
