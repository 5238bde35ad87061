//! Seed-deterministic minibatch order shared by the training loops.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Yields indices in epochs; each epoch is a fresh seeded permutation.
#[derive(Debug)]
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(len: usize, seed: u64) -> Self {
        let mut s = Self {
            order: (0..len).collect(),
            pos: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.order.shuffle(&mut s.rng);
        s
    }

    /// Next `size` indices (clamped to the dataset size), wrapping into a
    /// new epoch as needed. Indices within one batch are distinct.
    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.order.len());
        if self.pos + size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let batch = self.order[self.pos..self.pos + size].to_vec();
        self.pos += size;
        batch
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_are_reproducible_and_distinct() {
        let mut a = BatchSampler::new(10, 3);
        let mut b = BatchSampler::new(10, 3);
        for _ in 0..7 {
            let x = a.next_batch(4);
            assert_eq!(x, b.next_batch(4));
            let mut s = x.clone();
            s.sort();
            s.dedup();
            assert_eq!(s.len(), 4);
        }
        assert_eq!(BatchSampler::new(3, 0).next_batch(16).len(), 3);
    }
}
