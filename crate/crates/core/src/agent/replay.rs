//! Prioritized replay memory backed by a binary sum tree.
//!
//! Leaves hold p_i^alpha for raw priorities p_i (floored at eps), so sampling
//! probabilities follow P(i) = p_i^alpha / sum_j p_j^alpha. A parallel
//! max tree tracks the raw priority maximum for the enter-at-max-priority
//! rule. Internal nodes are recomputed from their children on every update.

use super::Transition;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BufferError {
    #[error("buffer holds {size} transitions, need {need}")]
    BufferTooSmall { size: usize, need: usize },
}

/// Result of a prioritized draw: buffer slots plus normalized
/// importance-sampling weights.
#[derive(Clone, Debug)]
pub struct SampledBatch {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

pub struct SumTreeBuffer {
    capacity: usize,
    size: usize,
    next: usize,
    alpha: f64,
    eps: f64,
    /// Sum tree over p^alpha, 1-indexed; leaves at [capacity, 2*capacity).
    tree: Vec<f64>,
    /// Max tree over raw priorities, same layout.
    max_tree: Vec<f64>,
    raw: Vec<f64>,
    items: Vec<Option<Transition>>,
}

impl SumTreeBuffer {
    pub fn new(capacity: usize, alpha: f64, eps: f64) -> Self {
        assert!(capacity >= 1);
        assert!(alpha >= 0.0);
        assert!(eps > 0.0, "priority floor must be positive");
        Self {
            capacity,
            size: 0,
            next: 0,
            alpha,
            eps,
            tree: vec![0.0; 2 * capacity],
            max_tree: vec![0.0; 2 * capacity],
            raw: vec![0.0; capacity],
            items: (0..capacity).map(|_| None).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, index: usize) -> &Transition {
        self.items[index].as_ref().expect("index points at a stored transition")
    }

    pub fn raw_priority(&self, index: usize) -> f64 {
        self.raw[index]
    }

    /// Root of the sum tree: total p^alpha mass.
    pub fn total_mass(&self) -> f64 {
        self.tree[1]
    }

    /// |root - direct leaf sum|, for auditing tree consistency.
    pub fn audit_root_error(&self) -> f64 {
        let direct: f64 = self.tree[self.capacity..].iter().sum();
        (self.tree[1] - direct).abs()
    }

    /// Largest raw priority currently stored (0 when empty).
    pub fn max_raw_priority(&self) -> f64 {
        self.max_tree[1]
    }

    /// Stores a transition at the max priority in the buffer (1 if empty),
    /// overwriting the oldest slot at capacity.
    pub fn push(&mut self, t: Transition) {
        let p = if self.size == 0 { 1.0 } else { self.max_raw_priority() };
        let idx = self.next;
        self.items[idx] = Some(t);
        self.next = (self.next + 1) % self.capacity;
        if self.size < self.capacity {
            self.size += 1;
        }
        self.set_priority(idx, p);
    }

    /// Sets the raw priority of a stored transition (floored at eps).
    pub fn set_priority(&mut self, index: usize, raw: f64) {
        assert!(index < self.size, "priority update outside stored range");
        let p = raw.max(self.eps);
        self.raw[index] = p;
        let leaf = self.capacity + index;
        self.tree[leaf] = p.powf(self.alpha);
        self.max_tree[leaf] = p;
        let mut node = leaf / 2;
        while node >= 1 {
            self.tree[node] = self.tree[2 * node] + self.tree[2 * node + 1];
            self.max_tree[node] = self.max_tree[2 * node].max(self.max_tree[2 * node + 1]);
            if node == 1 {
                break;
            }
            node /= 2;
        }
    }

    fn descend(&self, mut u: f64) -> usize {
        let mut node = 1usize;
        while node < self.capacity {
            let left = 2 * node;
            if u < self.tree[left] || self.tree[left + 1] <= 0.0 {
                node = left;
            } else {
                u -= self.tree[left];
                node = left + 1;
            }
        }
        (node - self.capacity).min(self.size.saturating_sub(1))
    }

    /// Stratified prioritized draw of k transitions with importance-sampling
    /// weights (N * P(i))^(-beta), normalized by the batch maximum.
    pub fn sample(
        &self,
        k: usize,
        beta: f64,
        rng: &mut impl Rng,
    ) -> Result<SampledBatch, BufferError> {
        if self.size < k || k == 0 {
            return Err(BufferError::BufferTooSmall { size: self.size, need: k.max(1) });
        }
        let total = self.total_mass();
        let seg = total / k as f64;
        let mut indices = Vec::with_capacity(k);
        let mut weights = Vec::with_capacity(k);
        let n = self.size as f64;
        let mut w_max = 0.0f64;
        for i in 0..k {
            let u = rng.random_range(seg * i as f64..seg * (i + 1) as f64);
            let idx = self.descend(u);
            let prob = self.tree[self.capacity + idx] / total;
            let w = (n * prob).powf(-beta);
            w_max = w_max.max(w);
            indices.push(idx);
            weights.push(w);
        }
        for w in &mut weights {
            *w /= w_max;
        }
        Ok(SampledBatch { indices, weights })
    }

    /// Uniform draw with unit weights (the non-prioritized baseline).
    pub fn sample_uniform(
        &self,
        k: usize,
        rng: &mut impl Rng,
    ) -> Result<SampledBatch, BufferError> {
        if self.size < k || k == 0 {
            return Err(BufferError::BufferTooSmall { size: self.size, need: k.max(1) });
        }
        let indices = (0..k).map(|_| rng.random_range(0..self.size)).collect();
        Ok(SampledBatch { indices, weights: vec![1.0; k] })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Belief, Observation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn marker(reward: f64) -> Transition {
        let obs = Arc::new(Observation {
            width: 1,
            height: 1,
            covered: vec![true],
            belief: vec![Belief::Free],
            robot: (0, 0),
        });
        Transition { obs: obs.clone(), action: 0, reward, next_obs: obs, done: false }
    }

    #[test]
    fn first_push_gets_priority_one() {
        let mut buf = SumTreeBuffer::new(8, 0.6, 1e-6);
        buf.push(marker(0.0));
        assert_eq!(buf.raw_priority(0), 1.0);
        assert_eq!(buf.len(), 1);
    }

    #[test]
    fn pushes_enter_at_current_max() {
        let mut buf = SumTreeBuffer::new(8, 1.0, 1e-6);
        buf.push(marker(0.0));
        buf.set_priority(0, 5.0);
        buf.push(marker(1.0));
        assert_eq!(buf.raw_priority(1), 5.0);
        buf.set_priority(0, 0.5);
        buf.push(marker(2.0));
        assert_eq!(buf.raw_priority(2), 5.0);
    }

    #[test]
    fn overwrites_oldest_at_capacity() {
        let mut buf = SumTreeBuffer::new(3, 0.6, 1e-6);
        for i in 0..4 {
            buf.push(marker(i as f64));
        }
        assert_eq!(buf.len(), 3);
        let rewards: Vec<f64> = (0..3).map(|i| buf.get(i).reward).collect();
        assert!(rewards.contains(&3.0));
        assert!(!rewards.contains(&0.0));
    }

    #[test]
    fn root_equals_direct_leaf_sum() {
        let mut buf = SumTreeBuffer::new(33, 0.6, 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..200 {
            buf.push(marker(i as f64));
            let idx = rng.random_range(0..buf.len());
            buf.set_priority(idx, rng.random_range(0.0..10.0f64));
        }
        assert!(buf.audit_root_error() < 1e-9);
    }

    #[test]
    fn equal_priorities_give_unit_weights() {
        let mut buf = SumTreeBuffer::new(16, 0.6, 1e-6);
        for i in 0..8 {
            buf.push(marker(i as f64));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = buf.sample(4, 0.7, &mut rng).unwrap();
        assert!(batch.weights.iter().all(|&w| (w - 1.0).abs() < 1e-12));
    }

    #[test]
    fn alpha_zero_samples_uniformly() {
        let mut buf = SumTreeBuffer::new(4, 0.0, 1e-6);
        buf.push(marker(0.0));
        buf.push(marker(1.0));
        buf.set_priority(0, 100.0);
        buf.set_priority(1, 0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 2];
        for _ in 0..20_000 {
            let batch = buf.sample(1, 1.0, &mut rng).unwrap();
            counts[batch.indices[0]] += 1;
        }
        let f0 = counts[0] as f64 / 20_000.0;
        assert!((f0 - 0.5).abs() < 0.02, "frequency {f0}");
    }

    #[test]
    fn sampling_frequencies_follow_priorities() {
        let mut buf = SumTreeBuffer::new(2, 1.0, 1e-6);
        buf.push(marker(0.0));
        buf.push(marker(1.0));
        buf.set_priority(0, 1.0);
        buf.set_priority(1, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut counts = [0usize; 2];
        for _ in 0..50_000 {
            let batch = buf.sample(2, 1.0, &mut rng).unwrap();
            for &i in &batch.indices {
                counts[i] += 1;
            }
        }
        let f0 = counts[0] as f64 / 100_000.0;
        assert!((f0 - 0.25).abs() < 0.01, "frequency {f0}");
    }

    #[test]
    fn sample_requires_enough_items() {
        let mut buf = SumTreeBuffer::new(8, 0.6, 1e-6);
        buf.push(marker(0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(matches!(
            buf.sample(2, 1.0, &mut rng),
            Err(BufferError::BufferTooSmall { size: 1, need: 2 })
        ));
    }

    #[test]
    fn priorities_respect_floor() {
        let mut buf = SumTreeBuffer::new(4, 0.6, 1e-6);
        buf.push(marker(0.0));
        buf.set_priority(0, 0.0);
        assert_eq!(buf.raw_priority(0), 1e-6);
        assert!(buf.total_mass() > 0.0);
    }
}
