//! Transition storage with uniform replay sampling.
//!
//! A fixed-capacity ring: once full, each store evicts the oldest
//! transition. Sampling draws indices independently and uniformly, so a
//! batch may repeat items; the stream of draws is deterministic per RNG
//! stream.

use rand::Rng;

use crate::error::{Error, Result};

/// One environment step as stored for learning. `done` marks true task
/// termination only — horizon truncations are stored with `done = false` so
/// their targets still bootstrap.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
}

impl Transition {
    pub fn validate(&self) -> Result<()> {
        if self.s.is_empty() || self.a.is_empty() || self.s.len() != self.s_next.len() {
            return Err(Error::Shape(format!(
                "transition shapes: state {}, action {}, next state {}",
                self.s.len(),
                self.a.len(),
                self.s_next.len()
            )));
        }
        let finite = self.r.is_finite()
            && self.s.iter().chain(&self.a).chain(&self.s_next).all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("transition contains a non-finite value".into()));
        }
        Ok(())
    }
}

/// FIFO ring buffer with uniform sampling.
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be at least 1".into()));
        }
        Ok(ReplayBuffer { items: Vec::new(), capacity, head: 0 })
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

    /// Insert a transition, evicting the oldest once at capacity.
    pub fn store(&mut self, t: Transition) -> Result<()> {
        t.validate()?;
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
        Ok(())
    }

    /// Draw `batch` transitions independently and uniformly.
    pub fn sample(&self, batch: usize, rng: &mut impl Rng) -> Result<Vec<&Transition>> {
        if batch == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.items.is_empty() {
            return Err(Error::State("cannot sample from an empty replay buffer".into()));
        }
        Ok((0..batch).map(|_| &self.items[rng.gen_range(0..self.items.len())]).collect())
    }

    /// The stored transitions in insertion-ring order (diagnostics).
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }
}
