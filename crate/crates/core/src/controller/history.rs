use std::collections::VecDeque;

use super::ControllerError;

/// Bounded FIFO memory of recent values for a single loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossHistory {
    values: VecDeque<f64>,
    capacity: usize,
}

impl LossHistory {
    pub fn new(capacity: usize) -> Result<Self, ControllerError> {
        if capacity == 0 {
            return Err(ControllerError::InvalidCapacity(capacity));
        }
        Ok(Self {
            values: VecDeque::with_capacity(capacity),
            capacity,
        })
    }

    /// Appends `value`, evicting the oldest entry once the buffer is full.
    pub fn push(&mut self, value: f64) -> Result<(), ControllerError> {
        if !value.is_finite() {
            return Err(ControllerError::NonFiniteLoss { value });
        }
        if self.values.len() == self.capacity {
            self.values.pop_front();
        }
        self.values.push_back(value);
        Ok(())
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().copied()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.values.iter().copied().collect()
    }

    pub fn clear(&mut self) {
        self.values.clear();
    }
}
