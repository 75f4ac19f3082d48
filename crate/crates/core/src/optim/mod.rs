//! Black-box maximizers over a box-constrained design space.

pub mod cmaes;
pub mod pso;

pub use cmaes::{cma_es_maximize, CmaEs};
pub use pso::{pso_maximize, PsoConfig};

use serde::{Deserialize, Serialize};

use crate::domain::{DesignSpace, DesignVector, RngStream};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub best_design: DesignVector,
    pub best_value: f64,
    /// Best value found so far, one entry per iteration.
    pub history: Vec<f64>,
    pub evaluations: usize,
}

/// Keeps the incumbent and evaluation count. Non-finite objective values
/// are recorded as `-inf` and never become the incumbent.
#[derive(Debug, Default)]
pub(crate) struct Tracker {
    best: Option<(Vec<f64>, f64)>,
    history: Vec<f64>,
    evaluations: usize,
}

impl Tracker {
    pub(crate) fn eval<F: FnMut(&DesignVector) -> f64>(&mut self, f: &mut F, x: &[f64]) -> f64 {
        let v = f(&DesignVector(x.to_vec()));
        self.evaluations += 1;
        if !v.is_finite() {
            return f64::NEG_INFINITY;
        }
        if self.best.as_ref().is_none_or(|(_, b)| v > *b) {
            self.best = Some((x.to_vec(), v));
        }
        v
    }

    pub(crate) fn end_iteration(&mut self) {
        self.history.push(self.best.as_ref().map_or(f64::NEG_INFINITY, |b| b.1));
    }

    /// Incumbent position, or the empty slice before any finite value.
    pub(crate) fn best_position(&self) -> &[f64] {
        self.best.as_ref().map_or(&[], |b| &b.0)
    }

    pub(crate) fn finish(self) -> Result<OptResult> {
        let (x, v) = self
            .best
            .ok_or_else(|| Error::Optimization("objective was non-finite at every candidate".into()))?;
        Ok(OptResult {
            best_design: DesignVector(x),
            best_value: v,
            history: self.history,
            evaluations: self.evaluations,
        })
    }
}

/// Exhaustive search on a regular grid with `resolution` nodes per axis.
pub fn grid_maximize<F>(mut f: F, space: &DesignSpace, resolution: usize) -> Result<OptResult>
where
    F: FnMut(&DesignVector) -> f64,
{
    if resolution < 2 {
        return Err(Error::Optimization(format!("grid resolution must be >= 2, got {resolution}")));
    }
    let dim = space.dim();
    let total = (resolution as u64)
        .checked_pow(dim as u32)
        .filter(|&t| t <= 50_000_000)
        .ok_or_else(|| Error::Optimization(format!("grid of {resolution}^{dim} nodes is too large")))?;
    let mut tracker = Tracker::default();
    let mut idx = vec![0usize; dim];
    let mut x = vec![0.0; dim];
    for _ in 0..total {
        for d in 0..dim {
            let t = idx[d] as f64 / (resolution - 1) as f64;
            x[d] = space.lower()[d] + t * space.span(d);
        }
        tracker.eval(&mut f, &x);
        for slot in idx.iter_mut() {
            *slot += 1;
            if *slot < resolution {
                break;
            }
            *slot = 0;
        }
    }
    tracker.end_iteration();
    tracker.finish()
}

/// Optimizer selection for the exploitation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignOptimizer {
    Pso(PsoConfig),
    CmaEs { population: usize, iterations: usize },
    Grid { resolution: usize },
}

impl DesignOptimizer {
    pub fn maximize<F>(&self, f: F, space: &DesignSpace, rng: &mut RngStream) -> Result<OptResult>
    where
        F: FnMut(&DesignVector) -> f64,
    {
        match self {
            Self::Pso(cfg) => pso_maximize(f, space, cfg, rng),
            Self::CmaEs { population, iterations } => cma_es_maximize(f, space, *population, *iterations, rng),
            Self::Grid { resolution } => grid_maximize(f, space, *resolution),
        }
    }

    /// Number of objective calls one `maximize` makes.
    pub fn evaluations(&self, dim: usize) -> usize {
        match self {
            Self::Pso(cfg) => cfg.evaluations(),
            Self::CmaEs { population, iterations } => population * iterations,
            Self::Grid { resolution } => resolution.pow(dim as u32),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_hits_nodes_and_finds_best() {
        let space = DesignSpace::uniform(2, 0.0, 1.0).unwrap();
        let mut calls = 0;
        let r = grid_maximize(
            |x| {
                calls += 1;
                -(x.0[0] - 0.25).powi(2) - (x.0[1] - 1.0).powi(2)
            },
            &space,
            5,
        )
        .unwrap();
        assert_eq!(calls, 25);
        assert_eq!(r.best_design.0, vec![0.25, 1.0]);
        assert_eq!(r.history.len(), 1);
    }

    #[test]
    fn optimizer_enum_dispatches() {
        let space = DesignSpace::uniform(1, -1.0, 1.0).unwrap();
        let f = |x: &DesignVector| -x.0[0].powi(2);
        for opt in [
            DesignOptimizer::Pso(PsoConfig::with_budget(10, 20)),
            DesignOptimizer::CmaEs { population: 6, iterations: 30 },
            DesignOptimizer::Grid { resolution: 21 },
        ] {
            let r = opt.maximize(f, &space, &mut RngStream::new(0, 0)).unwrap();
            assert!(r.best_design.0[0].abs() < 1e-2, "{opt:?}");
            assert_eq!(r.evaluations, opt.evaluations(1));
        }
    }

    #[test]
    fn tracker_ignores_non_finite() {
        let mut t = Tracker::default();
        let mut f = |x: &DesignVector| if x.0[0] > 0.0 { f64::NAN } else { 1.0 };
        assert_eq!(t.eval(&mut f, &[1.0]), f64::NEG_INFINITY);
        t.end_iteration();
        assert_eq!(t.eval(&mut f, &[-1.0]), 1.0);
        t.end_iteration();
        let r = t.finish().unwrap();
        assert_eq!(r.history, vec![f64::NEG_INFINITY, 1.0]);
        assert_eq!(r.evaluations, 2);
    }
}
