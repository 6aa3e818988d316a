use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

/// One remembered time step for every stream of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry<T> {
    /// batch × d
    pub key: Tensor<T>,
    /// batch × d; `None` when keys double as values (plain attention).
    pub value: Option<Tensor<T>>,
    /// Per-stream validity; cleared when that stream hits an article boundary.
    pub valid: Vec<bool>,
}

impl<T: Scalar> MemoryEntry<T> {
    pub fn value(&self) -> &Tensor<T> {
        self.value.as_ref().unwrap_or(&self.key)
    }
}

/// Ring buffer of the `capacity` most recent entries, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct SlidingMemory<T> {
    capacity: usize,
    entries: VecDeque<MemoryEntry<T>>,
}

impl<T: Scalar> SlidingMemory<T> {
    pub fn new(capacity: usize) -> Self {
        SlidingMemory {
            capacity,
            entries: VecDeque::with_capacity(capacity + 1),
        }
    }

    /// Single-stream memory holding `keys` (and optionally matching
    /// `values`), oldest first. Only the last `capacity` are kept.
    pub fn from_vectors(capacity: usize, keys: &[Vec<T>], values: Option<&[Vec<T>]>) -> Result<Self> {
        if let Some(v) = values {
            if v.len() != keys.len() {
                return Err(Error::shape(
                    "memory",
                    format!("{} keys but {} values", keys.len(), v.len()),
                ));
            }
        }
        let mut m = SlidingMemory::new(capacity);
        for (i, k) in keys.iter().enumerate() {
            let key = Tensor::matrix(1, k.len(), k.clone())?;
            let value = match values {
                Some(v) => Some(Tensor::matrix(1, v[i].len(), v[i].clone())?),
                None => None,
            };
            m.push(MemoryEntry {
                key,
                value,
                valid: vec![true],
            });
        }
        Ok(m)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &MemoryEntry<T>> {
        self.entries.iter()
    }

    /// Appends the newest entry, evicting the oldest beyond capacity.
    pub fn push(&mut self, entry: MemoryEntry<T>) {
        self.entries.push_back(entry);
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
    }

    /// Invalidates everything stream `row` has stored.
    pub fn clear_stream(&mut self, row: usize) {
        for e in &mut self.entries {
            e.valid[row] = false;
        }
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Number of valid entries for stream `row`.
    pub fn valid_count(&self, row: usize) -> usize {
        self.entries.iter().filter(|e| e.valid[row]).count()
    }
}
