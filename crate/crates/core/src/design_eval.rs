//! Design fitness functions: the learned-critic objective, the simulated
//! rollout objective, and novelty for exploration.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::agent::NetworkSet;
use crate::domain::{DesignSpace, DesignVector, RngStream, State};
use crate::env::{rollout, Environment};
use crate::error::{Error, Result};
use crate::optim::DesignOptimizer;

pub const DEFAULT_START_STATES: usize = 256;
pub const DEFAULT_NOVELTY_NEIGHBORS: usize = 5;

/// Counts simulated episodes. Shared by training and by rollout-based
/// design evaluation.
#[derive(Debug, Default)]
pub struct RolloutCounter(AtomicU64);

impl RolloutCounter {
    pub fn new(start: u64) -> Self {
        Self(AtomicU64::new(start))
    }

    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// Frozen inputs of the critic-based objective.
#[derive(Debug)]
pub struct ObjectiveContext<'a> {
    pub networks: &'a NetworkSet,
    start_batch: Array2<f64>,
}

impl<'a> ObjectiveContext<'a> {
    pub fn new(networks: &'a NetworkSet, start_states: &[State]) -> Result<Self> {
        if start_states.is_empty() {
            return Err(Error::EmptySource("start-state batch"));
        }
        let dim = networks.state_dim;
        let mut batch = Array2::zeros((start_states.len(), dim));
        for (i, s) in start_states.iter().enumerate() {
            crate::error::check_dim(dim, s.0.len())?;
            batch.row_mut(i).assign(&ndarray::ArrayView1::from(&s.0));
        }
        Ok(Self { networks, start_batch: batch })
    }

    pub fn batch_size(&self) -> usize {
        self.start_batch.nrows()
    }
}

/// Mean critic value over the start batch with deterministic actions.
/// Never steps an environment.
pub fn q_objective(design: &DesignVector, ctx: &ObjectiveContext) -> Result<f64> {
    ctx.networks.mean_q_deterministic(&ctx.start_batch, design)
}

/// Mean return of `n_episodes` deterministic-policy episodes.
pub fn rollout_objective(
    design: &DesignVector,
    env: &dyn Environment,
    networks: &NetworkSet,
    n_episodes: usize,
    rng: &mut RngStream,
    counter: &RolloutCounter,
) -> Result<f64> {
    if n_episodes == 0 {
        return Err(Error::Optimization("rollout objective needs at least one episode".into()));
    }
    let mut total = 0.0;
    for _ in 0..n_episodes {
        let ep = rollout(env, design, rng, |s| networks.act(s, design, false, &mut RngStream::new(0, 0)))?;
        counter.add(1);
        total += ep.episode_return;
    }
    Ok(total / n_episodes as f64)
}

/// Mean distance from `design` to its `min(m, |evaluated|)` nearest
/// previously evaluated designs.
pub fn novelty_objective(design: &DesignVector, evaluated: &[DesignVector], m: usize) -> Result<f64> {
    if evaluated.is_empty() {
        return Err(Error::EmptySource("evaluated design set"));
    }
    if m == 0 {
        return Err(Error::Optimization("novelty needs m >= 1".into()));
    }
    let mut d: Vec<f64> = evaluated.iter().map(|e| design.distance(e)).collect();
    let k = m.min(d.len());
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, f64::total_cmp);
    }
    d[..k].sort_unstable_by(f64::total_cmp);
    Ok(d[..k].iter().sum::<f64>() / k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplorationStrategy {
    Random,
    Novelty,
}

/// Picks an exploration design. Novelty with no evaluated designs, or a
/// failed novelty search, falls back to a uniform sample.
pub fn select_exploration_design(
    strategy: ExplorationStrategy,
    space: &DesignSpace,
    evaluated: &[DesignVector],
    neighbors: usize,
    optimizer: &DesignOptimizer,
    rng: &mut RngStream,
) -> DesignVector {
    match strategy {
        ExplorationStrategy::Random => space.sample_uniform(rng),
        ExplorationStrategy::Novelty if evaluated.is_empty() => {
            log::warn!("novelty exploration with no evaluated designs; sampling uniformly");
            space.sample_uniform(rng)
        }
        ExplorationStrategy::Novelty => {
            let result = optimizer.maximize(
                |x| novelty_objective(x, evaluated, neighbors).unwrap_or(f64::NAN),
                space,
                rng,
            );
            match result {
                Ok(r) => r.best_design,
                Err(e) => {
                    log::warn!("novelty search failed ({e}); sampling uniformly");
                    space.sample_uniform(rng)
                }
            }
        }
    }
}
