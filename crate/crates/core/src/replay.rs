//! Replay storage: the population buffer (all designs), the individual
//! buffer (current design only), and the start-state buffer.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{DesignTransition, DesignVector, RngStream, State, Transition};
use crate::error::{Error, Result};

pub const DEFAULT_POPULATION_CAPACITY: usize = 1_000_000;
pub const DEFAULT_INDIVIDUAL_CAPACITY: usize = 100_000;

/// FIFO ring of design-tagged transitions from every design seen so far.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PopulationBuffer {
    entries: VecDeque<DesignTransition>,
    capacity: usize,
}

impl PopulationBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "capacity must be positive");
        Self {
            entries: VecDeque::new(),
            capacity,
        }
    }

    pub fn push(&mut self, item: DesignTransition) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(item);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&DesignTransition> {
        self.entries.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &DesignTransition> {
        self.entries.iter()
    }

    /// Uniform draws with replacement.
    pub fn sample(&self, n: usize, rng: &mut RngStream) -> Result<Vec<DesignTransition>> {
        if self.is_empty() {
            return Err(Error::EmptySource("population buffer"));
        }
        Ok((0..n)
            .map(|_| self.entries[rng.random_range(0..self.entries.len())].clone())
            .collect())
    }
}

/// FIFO ring of transitions collected with the current design.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndividualBuffer {
    entries: VecDeque<Transition>,
    capacity: usize,
}

impl IndividualBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "capacity must be positive");
        Self {
            entries: VecDeque::new(),
            capacity,
        }
    }

    pub fn push(&mut self, item: Transition) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(item);
    }

    /// Called at every design switch.
    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.entries.get(i)
    }
}

/// Every episode start state seen so far, with the design it came from.
/// Append-only.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StartStateBuffer {
    entries: Vec<(State, DesignVector)>,
}

impl StartStateBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, state: State, design: DesignVector) {
        self.entries.push((state, design));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(State, DesignVector)] {
        &self.entries
    }

    /// `n` uniform draws with replacement; the stored designs are ignored.
    pub fn sample_start_states(&self, n: usize, rng: &mut RngStream) -> Result<Vec<State>> {
        if self.is_empty() {
            return Err(Error::EmptySource("start-state buffer"));
        }
        Ok((0..n)
            .map(|_| self.entries[rng.random_range(0..self.entries.len())].0.clone())
            .collect())
    }
}

/// Number of population samples in a mixed batch: `pop_frac * batch`
/// rounded half up.
pub fn population_share(batch: usize, pop_frac: f64) -> usize {
    ((pop_frac * batch as f64) + 0.5).floor().min(batch as f64) as usize
}

/// Draws a batch for the individual networks: `round(pop_frac * batch)`
/// items from the population buffer (keeping their stored design) and the
/// rest from the individual buffer (tagged with `current`), shuffled.
///
/// An empty source hands its share to the other one.
pub fn sample_mixed(
    ind: &IndividualBuffer,
    pop: &PopulationBuffer,
    current: &DesignVector,
    batch: usize,
    pop_frac: f64,
    rng: &mut RngStream,
) -> Result<Vec<DesignTransition>> {
    assert!(batch > 0, "batch must be positive");
    assert!((0.0..=1.0).contains(&pop_frac), "pop_frac must lie in [0, 1]");
    if ind.is_empty() && pop.is_empty() {
        return Err(Error::EmptySource("individual and population buffers"));
    }
    let mut n_pop = population_share(batch, pop_frac);
    if pop.is_empty() {
        n_pop = 0;
    } else if ind.is_empty() {
        n_pop = batch;
    }
    let mut out = pop.sample(n_pop, rng).unwrap_or_default();
    out.reserve(batch - n_pop);
    for _ in n_pop..batch {
        let t = &ind.entries[rng.random_range(0..ind.len())];
        out.push(DesignTransition {
            transition: t.clone(),
            design: current.clone(),
        });
    }
    out.shuffle(rng);
    Ok(out)
}
