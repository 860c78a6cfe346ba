//! Proportional prioritized experience replay.
//!
//! Raw priorities `|delta| + eps` are stored per slot; a sum tree holds
//! `priority^beta`, so sampling probability is `p_k^beta / sum_j p_j^beta`.

use rand::Rng;

use crate::error::{Error, Result};

/// One stored experience of a single agent.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    /// Joint action of all agents, normalized to `[-1, 1]`.
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// Last slot of an episode.
    pub terminal: bool,
}

/// Binary tree of partial sums over a fixed number of leaves.
#[derive(Clone, Debug)]
pub struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.next_power_of_two();
        Self {
            leaves,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.leaves + i]
    }

    /// Sets leaf `i`, recomputing ancestors from their children so that
    /// round-off never accumulates.
    pub fn set(&mut self, i: usize, value: f64) {
        let mut k = self.leaves + i;
        self.nodes[k] = value;
        while k > 1 {
            k /= 2;
            self.nodes[k] = self.nodes[2 * k] + self.nodes[2 * k + 1];
        }
    }

    /// Leaf whose cumulative range contains `mass` (`0 <= mass < total`).
    pub fn find(&self, mut mass: f64) -> usize {
        let mut k = 1;
        while k < self.leaves {
            let left = self.nodes[2 * k];
            if mass < left || self.nodes[2 * k + 1] == 0.0 {
                k *= 2;
            } else {
                mass -= left;
                k = 2 * k + 1;
            }
        }
        k - self.leaves
    }
}

/// Location of a sampled transition. `stamp` identifies the exact
/// transition so updates after eviction can be detected.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleIndex {
    pub slot: usize,
    pub stamp: u64,
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub indices: Vec<SampleIndex>,
    pub probabilities: Vec<f64>,
    pub transitions: Vec<Transition>,
}

#[derive(Clone, Debug)]
pub struct PriorityBuffer {
    capacity: usize,
    data: Vec<Transition>,
    stamps: Vec<u64>,
    priorities: Vec<f64>,
    tree: SumTree,
    next: usize,
    inserted: u64,
    max_priority: f64,
    eps: f64,
    beta: f64,
}

impl PriorityBuffer {
    pub fn new(capacity: usize, eps: f64, beta: f64) -> Self {
        assert!(capacity > 0 && eps > 0.0);
        Self {
            capacity,
            data: Vec::with_capacity(capacity.min(4096)),
            stamps: Vec::with_capacity(capacity.min(4096)),
            priorities: Vec::with_capacity(capacity.min(4096)),
            tree: SumTree::new(capacity),
            next: 0,
            inserted: 0,
            max_priority: 1.0,
            eps,
            beta,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn max_priority(&self) -> f64 {
        self.max_priority
    }

    /// Raw priority stored at `slot`.
    pub fn priority(&self, slot: usize) -> f64 {
        self.priorities[slot]
    }

    /// Sum of `priority^beta` as held by the tree root.
    pub fn total_mass(&self) -> f64 {
        self.tree.total()
    }

    pub fn transition(&self, slot: usize) -> &Transition {
        &self.data[slot]
    }

    /// Sampling probability of the transition in `slot`.
    pub fn probability(&self, slot: usize) -> f64 {
        self.tree.get(slot) / self.tree.total()
    }

    /// Inserts a transition with priority `|delta| + eps`, or the largest
    /// priority seen so far when `delta` is `None`. Evicts the oldest entry
    /// when full.
    pub fn push(&mut self, transition: Transition, delta: Option<f64>) {
        let priority = match delta {
            Some(d) => d.abs() + self.eps,
            None => self.max_priority,
        };
        let slot = self.next;
        if self.data.len() < self.capacity {
            self.data.push(transition);
            self.stamps.push(self.inserted);
            self.priorities.push(0.0);
        } else {
            self.data[slot] = transition;
            self.stamps[slot] = self.inserted;
        }
        self.inserted += 1;
        self.set_priority(slot, priority);
        self.next = (self.next + 1) % self.capacity;
    }

    fn set_priority(&mut self, slot: usize, priority: f64) {
        self.priorities[slot] = priority;
        self.tree.set(slot, priority.powf(self.beta));
        self.max_priority = self.max_priority.max(priority);
    }

    /// `k` independent proportional draws, with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Batch> {
        if self.len() < k || k == 0 {
            return Err(Error::NotEnoughSamples {
                len: self.len(),
                needed: k.max(1),
            });
        }
        let total = self.tree.total();
        let mut indices = Vec::with_capacity(k);
        let mut probabilities = Vec::with_capacity(k);
        let mut transitions = Vec::with_capacity(k);
        for _ in 0..k {
            let slot = self.sample_slot(total, rng);
            indices.push(SampleIndex {
                slot,
                stamp: self.stamps[slot],
            });
            probabilities.push(self.tree.get(slot) / total);
            transitions.push(self.data[slot].clone());
        }
        Ok(Batch {
            indices,
            probabilities,
            transitions,
        })
    }

    /// One proportional draw; returns the slot.
    pub fn sample_slot<R: Rng + ?Sized>(&self, total: f64, rng: &mut R) -> usize {
        let u: f64 = rng.random::<f64>() * total;
        self.tree.find(u).min(self.len() - 1)
    }

    /// Sets priority `|delta| + eps` for each sampled index. Indices whose
    /// transition has since been evicted are skipped; the number skipped is
    /// returned.
    pub fn update_priorities(&mut self, indices: &[SampleIndex], deltas: &[f64]) -> Result<usize> {
        if indices.len() != deltas.len() {
            return Err(Error::Shape {
                expected: indices.len(),
                actual: deltas.len(),
                context: "priority update",
            });
        }
        let mut skipped = 0;
        for (ix, &d) in indices.iter().zip(deltas) {
            if ix.slot >= self.len() || self.stamps[ix.slot] != ix.stamp {
                skipped += 1;
                continue;
            }
            if !d.is_finite() {
                return Err(Error::NonFinite("TD-error for priority update".into()));
            }
            self.set_priority(ix.slot, d.abs() + self.eps);
        }
        Ok(skipped)
    }
}

/// Importance-sampling weight `1 / (K P)^mu`.
pub fn is_weight(k: usize, probability: f64, mu: f64) -> Result<f64> {
    if !(probability > 0.0 && probability <= 1.0) {
        return Err(Error::Contract(format!(
            "sampling probability {probability} outside (0, 1]"
        )));
    }
    Ok((k as f64 * probability).powf(-mu))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use proptest::prelude::*;

    fn tr(tag: f64) -> Transition {
        Transition {
            state: vec![tag],
            action: vec![0.0],
            reward: tag,
            next_state: vec![tag],
            terminal: false,
        }
    }

    #[test]
    fn push_and_evict_fifo() {
        let mut b = PriorityBuffer::new(2, 1e-3, 0.6);
        b.push(tr(1.0), None);
        assert_eq!(b.len(), 1);
        b.push(tr(2.0), None);
        b.push(tr(3.0), None);
        assert_eq!(b.len(), 2);
        let rewards: Vec<f64> = (0..2).map(|i| b.transition(i).reward).collect();
        assert!(!rewards.contains(&1.0));
        assert!(rewards.contains(&2.0) && rewards.contains(&3.0));
    }

    #[test]
    fn new_transitions_take_max_priority() {
        let mut b = PriorityBuffer::new(8, 1e-3, 0.6);
        b.push(tr(0.0), Some(4.0));
        b.push(tr(1.0), None);
        assert_eq!(b.priority(1), 4.0 + 1e-3);
        assert_eq!(b.priority(0), b.priority(1));
        // A fresh transition is as likely as the most likely one.
        assert_eq!(b.probability(0), b.probability(1));
    }

    #[test]
    fn two_item_probability() {
        let mut b = PriorityBuffer::new(4, 1e-3, 0.6);
        b.push(tr(0.0), Some(1.0));
        b.push(tr(1.0), Some(0.0));
        let p1 = 1.001f64.powf(0.6) / (1.001f64.powf(0.6) + 0.001f64.powf(0.6));
        assert!((b.probability(0) - p1).abs() < 1e-12);
        assert!((p1 - 0.984).abs() < 1e-3);
    }

    #[test]
    fn sampling_needs_enough_items() {
        let mut b = PriorityBuffer::new(4, 1e-3, 0.6);
        b.push(tr(0.0), None);
        assert!(matches!(
            b.sample(2, &mut seeded_rng(0)),
            Err(Error::NotEnoughSamples { len: 1, needed: 2 })
        ));
    }

    #[test]
    fn zero_delta_keeps_floor() {
        let mut b = PriorityBuffer::new(4, 1e-3, 0.6);
        b.push(tr(0.0), None);
        b.push(tr(1.0), None);
        let batch = b.sample(2, &mut seeded_rng(1)).unwrap();
        b.update_priorities(&batch.indices, &[0.0, 0.0]).unwrap();
        for ix in &batch.indices {
            assert_eq!(b.priority(ix.slot), 1e-3);
        }
    }

    #[test]
    fn same_delta_leaves_distribution_unchanged() {
        let mut b = PriorityBuffer::new(4, 1e-3, 0.6);
        for (i, d) in [0.5, 2.0, 1.0].into_iter().enumerate() {
            b.push(tr(i as f64), Some(d));
        }
        let before: Vec<f64> = (0..3).map(|i| b.probability(i)).collect();
        let ix = [SampleIndex {
            slot: 1,
            stamp: 1,
        }];
        b.update_priorities(&ix, &[-2.0]).unwrap();
        let after: Vec<f64> = (0..3).map(|i| b.probability(i)).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn stale_indices_are_skipped() {
        let mut b = PriorityBuffer::new(2, 1e-3, 0.6);
        b.push(tr(0.0), Some(1.0));
        b.push(tr(1.0), Some(1.0));
        let batch = b.sample(2, &mut seeded_rng(3)).unwrap();
        b.push(tr(2.0), Some(1.0));
        b.push(tr(3.0), Some(1.0));
        let skipped = b.update_priorities(&batch.indices, &[9.0, 9.0]).unwrap();
        assert_eq!(skipped, 2);
        assert_eq!(b.max_priority(), 1.0 + 1e-3);
    }

    #[test]
    fn dominant_priority_is_sampled_at_its_probability() {
        let mut b = PriorityBuffer::new(16, 1e-3, 0.6);
        for i in 0..10 {
            b.push(tr(i as f64), Some(0.1));
        }
        b.update_priorities(&[SampleIndex { slot: 4, stamp: 4 }], &[50.0])
            .unwrap();
        let p = b.probability(4);
        let mut rng = seeded_rng(12);
        let draws = 200_000;
        let total = b.total_mass();
        let hits = (0..draws).filter(|_| b.sample_slot(total, &mut rng) == 4).count();
        assert!((hits as f64 / draws as f64 - p).abs() < 0.01, "{p}");
    }

    #[test]
    fn sampling_is_reproducible() {
        let mut b = PriorityBuffer::new(32, 1e-3, 0.6);
        for i in 0..20 {
            b.push(tr(i as f64), Some(i as f64 * 0.3));
        }
        let a = b.sample(8, &mut seeded_rng(5)).unwrap();
        let c = b.sample(8, &mut seeded_rng(5)).unwrap();
        assert_eq!(a.indices, c.indices);
        assert_eq!(a.probabilities, c.probabilities);
    }

    #[test]
    fn is_weight_examples() {
        assert_eq!(is_weight(2, 0.5, 0.4).unwrap(), 1.0);
        assert_eq!(is_weight(7, 0.01, 0.0).unwrap(), 1.0);
        assert!((is_weight(256, 1.0 / 256.0, 0.4).unwrap() - 1.0).abs() < 1e-12);
        assert!(is_weight(2, 0.0, 0.4).is_err());
        assert!(is_weight(2, -0.1, 0.4).is_err());
    }

    proptest! {
        #[test]
        fn tree_root_matches_stored_mass(
            ops in prop::collection::vec((0usize..3, 0.0f64..20.0), 1..300),
            cap in 1usize..40,
        ) {
            let mut b = PriorityBuffer::new(cap, 1e-3, 0.6);
            let mut rng = seeded_rng(0);
            for (kind, d) in ops {
                if kind == 0 || b.is_empty() {
                    b.push(tr(d), if kind == 1 { None } else { Some(d) });
                } else {
                    let batch = b.sample(1, &mut rng).unwrap();
                    b.update_priorities(&batch.indices, &[d]).unwrap();
                }
                let direct: f64 = (0..b.len()).map(|i| b.priority(i).powf(0.6)).sum();
                prop_assert!((b.total_mass() - direct).abs() <= 1e-9 * direct);
                prop_assert!((0..b.len()).all(|i| b.probability(i) > 0.0));
            }
        }
    }
}
