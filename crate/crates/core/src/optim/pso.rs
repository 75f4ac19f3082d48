use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{OptResult, Tracker};
use crate::domain::{DesignSpace, DesignVector, RngStream};
use crate::error::{Error, Result};

/// Global-best particle swarm settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsoConfig {
    pub n_particles: usize,
    /// Swarm evaluations, counting the initial one.
    pub n_iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Maximum speed as a fraction of each dimension's span.
    pub velocity_clamp: f64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self::with_budget(700, 250)
    }
}

impl PsoConfig {
    pub fn with_budget(n_particles: usize, n_iterations: usize) -> Self {
        Self {
            n_particles,
            n_iterations,
            inertia: 0.7298,
            cognitive: 1.49618,
            social: 1.49618,
            velocity_clamp: 0.2,
        }
    }

    pub fn evaluations(&self) -> usize {
        self.n_particles * self.n_iterations
    }

    fn validate(&self) -> Result<()> {
        if self.n_particles < 2 || self.n_iterations < 1 {
            return Err(Error::Optimization(format!(
                "pso needs >= 2 particles and >= 1 iteration, got {} x {}",
                self.n_particles, self.n_iterations
            )));
        }
        Ok(())
    }
}

/// Maximizes `f` over the box. Positions start uniform with zero velocity;
/// every position is clamped to the bounds before it is evaluated. The
/// initial swarm evaluation counts as the first of `n_iterations`, so the
/// objective is called exactly `n_particles * n_iterations` times.
pub fn pso_maximize<F>(mut f: F, space: &DesignSpace, cfg: &PsoConfig, rng: &mut RngStream) -> Result<OptResult>
where
    F: FnMut(&DesignVector) -> f64,
{
    cfg.validate()?;
    let dim = space.dim();
    let vmax: Vec<f64> = (0..dim).map(|i| cfg.velocity_clamp * space.span(i)).collect();

    let mut positions: Vec<Vec<f64>> = (0..cfg.n_particles)
        .map(|_| space.sample_uniform(rng).0)
        .collect();
    let mut velocities = vec![vec![0.0; dim]; cfg.n_particles];
    let mut tracker = Tracker::default();

    let mut personal: Vec<(Vec<f64>, f64)> = Vec::with_capacity(cfg.n_particles);
    for x in &positions {
        let v = tracker.eval(&mut f, x);
        personal.push((x.clone(), v));
    }
    tracker.end_iteration();

    for _ in 1..cfg.n_iterations {
        let global = tracker.best_position().to_vec();
        for (p, (x, vel)) in positions.iter_mut().zip(velocities.iter_mut()).enumerate() {
            // no finite value seen yet: the swarm only drifts
            let attractor = if global.is_empty() { &personal[p].0 } else { &global };
            for d in 0..dim {
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                let v = cfg.inertia * vel[d]
                    + cfg.cognitive * r1 * (personal[p].0[d] - x[d])
                    + cfg.social * r2 * (attractor[d] - x[d]);
                vel[d] = v.clamp(-vmax[d], vmax[d]);
                x[d] += vel[d];
            }
            space.clamp_slice(x);
        }
        for (p, x) in positions.iter().enumerate() {
            let v = tracker.eval(&mut f, x);
            if v > personal[p].1 {
                personal[p] = (x.clone(), v);
            }
        }
        tracker.end_iteration();
    }
    tracker.finish()
}
