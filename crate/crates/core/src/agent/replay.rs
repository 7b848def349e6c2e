use rand::seq::index;
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    /// State rows flattened in user order.
    pub state: Vec<f64>,
    /// Executed (post safe-layer) rates, b/s.
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity ring buffer with uniform mini-batch sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Experience>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[self.next] = e;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> &Experience {
        &self.items[i]
    }

    /// Indices of a mini-batch, distinct within the batch.
    pub fn sample_indices<R: Rng + ?Sized>(&self, rng: &mut R, batch: usize) -> Vec<usize> {
        let n = batch.min(self.items.len());
        index::sample(rng, self.items.len(), n).into_vec()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, batch: usize) -> Vec<&Experience> {
        self.sample_indices(rng, batch)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}
