use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Bounded FIFO history of generated samples used for discriminator
/// updates. On each push the buffer returns a training sample: with
/// probability 0.5 the newest sample, otherwise a uniformly drawn buffered
/// one. Draws are seeded.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    stored: VecDeque<Vec<f64>>,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        ReplayBuffer {
            capacity,
            stored: VecDeque::with_capacity(capacity),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.stored.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stored.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Oldest-to-newest view of the stored samples.
    pub fn contents(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.stored.iter()
    }

    /// Append `generated`, evicting the oldest sample if over capacity, and
    /// return a sample for the discriminator per the history policy.
    pub fn push_sample(&mut self, generated: Vec<f64>) -> Vec<f64> {
        self.stored.push_back(generated);
        if self.stored.len() > self.capacity {
            self.stored.pop_front();
        }
        let use_newest = self.stored.len() == 1 || self.rng.gen_bool(0.5);
        if use_newest {
            self.stored.back().unwrap().clone()
        } else {
            let i = self.rng.gen_range(0..self.stored.len());
            self.stored[i].clone()
        }
    }
}
