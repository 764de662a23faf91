//! Fixed-capacity replay of vector-reward transitions.

use rand::Rng as _;

use super::{Preference, RewardVector};
use crate::rng::Rng;

/// One step with normalised observations and the raw action in `[−1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MoTransition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: RewardVector,
    pub next_obs: Vec<f64>,
    pub w: Preference,
    /// No bootstrap from `next_obs` (true terminal, not a time limit).
    pub terminal: bool,
}

/// Ring buffer; once full, the oldest entry is overwritten.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    cap: usize,
    items: Vec<MoTransition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(cap: usize) -> Self {
        Self { cap: cap.max(1), items: Vec::new(), next: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: MoTransition) {
        if self.items.len() < self.cap {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.cap;
    }

    /// Entries in insertion slot order (not age order once wrapped).
    pub fn items(&self) -> &[MoTransition] {
        &self.items
    }

    /// `n` draws with replacement.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Vec<MoTransition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| self.items[rng.random_range(0..self.items.len())].clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn t(i: usize) -> MoTransition {
        MoTransition {
            obs: vec![i as f64],
            action: vec![0.0],
            reward: [0.0, 0.0],
            next_obs: vec![0.0],
            w: Preference { w: [0.5, 0.5] },
            terminal: false,
        }
    }

    #[test]
    fn never_exceeds_capacity() {
        let mut b = ReplayBuffer::new(7);
        for i in 0..50 {
            b.push(t(i));
            assert!(b.len() <= 7);
        }
        assert_eq!(b.len(), 7);
        // The seven newest entries survive.
        let mut kept: Vec<usize> = b.items().iter().map(|x| x.obs[0] as usize).collect();
        kept.sort();
        assert_eq!(kept, (43..50).collect::<Vec<_>>());
    }

    #[test]
    fn sampling_is_seeded() {
        let mut b = ReplayBuffer::new(100);
        for i in 0..30 {
            b.push(t(i));
        }
        let a = b.sample(10, &mut rng::seeded(1));
        let c = b.sample(10, &mut rng::seeded(1));
        assert_eq!(a, c);
        assert!(ReplayBuffer::new(3).sample(4, &mut rng::seeded(1)).is_empty());
    }
}
