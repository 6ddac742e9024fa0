use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SumTree;
use crate::error::{Error, Result};
use crate::learning::TransitionSample;

/// Sampled transitions together with the slots they were read from.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub samples: Vec<TransitionSample>,
    pub slots: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BufferSummary {
    pub capacity: usize,
    pub len: usize,
    pub total_priority: f64,
    pub max_priority: f64,
    pub mean_priority: f64,
}

/// Windowed transition store with proportional prioritized sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    entries: Vec<TransitionSample>,
    next: usize,
    tree: SumTree,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        Ok(Self {
            entries: Vec::with_capacity(capacity),
            next: 0,
            tree: SumTree::new(capacity)?,
        })
    }

    pub fn capacity(&self) -> usize {
        self.tree.capacity()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, slot: usize) -> Option<&TransitionSample> {
        self.entries.get(slot)
    }

    pub fn priority(&self, slot: usize) -> Option<f64> {
        (slot < self.len()).then(|| self.tree.get(slot))
    }

    pub fn total_priority(&self) -> f64 {
        self.tree.total()
    }

    pub fn tree(&self) -> &SumTree {
        &self.tree
    }

    /// Stores `sample` with the current maximum priority (1 when empty or all
    /// zero), evicting the oldest entry at capacity.
    pub fn push(&mut self, sample: TransitionSample) -> usize {
        let max = self.tree.max();
        let priority = if self.is_empty() || max <= 0.0 { 1.0 } else { max };
        let slot = self.next;
        if slot == self.entries.len() {
            self.entries.push(sample);
        } else {
            self.entries[slot] = sample;
        }
        self.next = (self.next + 1) % self.capacity();
        self.tree
            .set(slot, priority)
            .expect("slot below capacity and priority positive");
        slot
    }

    /// Sets the priority of an occupied slot to `max(c_value, 0)`.
    pub fn set_priority(&mut self, slot: usize, c_value: f64) -> Result<()> {
        if slot >= self.len() {
            return Err(Error::InvalidSlot {
                slot,
                len: self.len(),
            });
        }
        self.tree.set(slot, c_value.max(0.0))
    }

    /// Stratified proportional sampling: the total mass is split into
    /// `batch_size` equal segments with one uniform draw in each.
    pub fn sample_prioritized<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Batch> {
        if self.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let total = self.tree.total();
        if total <= 0.0 {
            return Err(Error::ZeroMass);
        }
        let segment = total / batch_size as f64;
        let slots: Vec<usize> = (0..batch_size)
            .map(|i| {
                let mass = (i as f64 + rng.random::<f64>()) * segment;
                self.tree.find(mass.min(total))
            })
            .collect();
        Ok(self.batch(slots))
    }

    /// I.i.d. uniform draws over occupied slots.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch> {
        if self.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let slots = (0..batch_size)
            .map(|_| rng.random_range(0..self.len()))
            .collect();
        Ok(self.batch(slots))
    }

    fn batch(&self, slots: Vec<usize>) -> Batch {
        Batch {
            samples: slots.iter().map(|&i| self.entries[i]).collect(),
            slots,
        }
    }

    /// Probability of drawing each occupied slot under proportional sampling.
    pub fn sampling_probabilities(&self) -> Vec<f64> {
        let total = self.tree.total();
        (0..self.len()).map(|i| self.tree.get(i) / total).collect()
    }

    pub fn summary(&self) -> BufferSummary {
        let total = self.tree.total();
        BufferSummary {
            capacity: self.capacity(),
            len: self.len(),
            total_priority: total,
            max_priority: self.tree.max(),
            mean_priority: if self.is_empty() {
                0.0
            } else {
                total / self.len() as f64
            },
        }
    }
}
