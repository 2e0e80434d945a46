use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;

/// One environment interaction, with states already encoded for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f32>,
    pub action: usize,
    pub reward: f64,
    pub next: Vec<f32>,
    pub terminal: bool,
}

/// Bounded FIFO replay memory.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            items: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Append, evicting the oldest entry when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn last(&self) -> Option<&Transition> {
        self.items.back()
    }

    /// `size` distinct slots drawn uniformly; `None` if the buffer holds fewer.
    pub fn sample<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Option<Vec<&Transition>> {
        if size > self.items.len() {
            return None;
        }
        Some(
            index::sample(rng, self.items.len(), size)
                .into_iter()
                .map(|i| &self.items[i])
                .collect(),
        )
    }
}
