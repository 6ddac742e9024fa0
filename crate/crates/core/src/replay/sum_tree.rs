use crate::error::{Error, Result};

/// Complete binary tree of partial sums (and maxima) over leaf priorities.
///
/// Node `1` is the root; node `i` has children `2i` and `2i + 1`; leaves
/// occupy `[leaves, 2 * leaves)`. Internal nodes are always recomputed as
/// `left + right`, so the sum invariant holds exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SumTree {
    capacity: usize,
    leaves: usize,
    sums: Vec<f64>,
    maxima: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("sum tree capacity must be positive".into()));
        }
        let leaves = capacity.next_power_of_two();
        Ok(Self {
            capacity,
            leaves,
            sums: vec![0.0; 2 * leaves],
            maxima: vec![0.0; 2 * leaves],
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total(&self) -> f64 {
        self.sums[1]
    }

    /// Largest leaf priority (0 for an all-zero tree).
    pub fn max(&self) -> f64 {
        self.maxima[1]
    }

    pub fn get(&self, slot: usize) -> f64 {
        self.sums[self.leaves + slot]
    }

    pub fn set(&mut self, slot: usize, priority: f64) -> Result<()> {
        if slot >= self.capacity {
            return Err(Error::InvalidSlot {
                slot,
                len: self.capacity,
            });
        }
        if !(priority >= 0.0 && priority.is_finite()) {
            return Err(Error::InvalidValue {
                what: "priority",
                detail: priority.to_string(),
            });
        }
        let mut i = self.leaves + slot;
        self.sums[i] = priority;
        self.maxima[i] = priority;
        while i > 1 {
            i /= 2;
            self.sums[i] = self.sums[2 * i] + self.sums[2 * i + 1];
            self.maxima[i] = self.maxima[2 * i].max(self.maxima[2 * i + 1]);
        }
        Ok(())
    }

    /// Leaf whose cumulative-priority interval contains `mass`. Never returns a
    /// zero-priority leaf while the total is positive.
    pub fn find(&self, mut mass: f64) -> usize {
        let mut i = 1;
        while i < self.leaves {
            let left = self.sums[2 * i];
            let right = self.sums[2 * i + 1];
            if mass < left || right <= 0.0 {
                i *= 2;
            } else {
                mass -= left;
                i = 2 * i + 1;
            }
        }
        i - self.leaves
    }

    /// Every internal node equals the sum (and max) of its children.
    pub fn is_consistent(&self) -> bool {
        (1..self.leaves).all(|i| {
            self.sums[i] == self.sums[2 * i] + self.sums[2 * i + 1]
                && self.maxima[i] == self.maxima[2 * i].max(self.maxima[2 * i + 1])
        }) && self.sums[self.leaves + self.capacity..]
            .iter()
            .all(|&p| p == 0.0)
    }
}
