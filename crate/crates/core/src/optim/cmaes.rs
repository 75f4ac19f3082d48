//! (mu/mu_w, lambda) CMA-ES with full covariance and box clamping.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{OptResult, Tracker};
use crate::domain::{DesignSpace, DesignVector, RngStream};
use crate::error::{Error, Result};

const MAX_CONDITION: f64 = 1e14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmaEs {
    dim: usize,
    lambda: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c_1: f64,
    c_mu: f64,
    chi_n: f64,
    initial_sigma: f64,
    pub mean: Vec<f64>,
    pub sigma: f64,
    /// Row-major `dim x dim`.
    cov: Vec<f64>,
    p_sigma: Vec<f64>,
    p_c: Vec<f64>,
    pub generation: usize,
    pub restarts: usize,
}

impl CmaEs {
    /// Mean at the space center, step size 0.3 times the mean span.
    pub fn new(space: &DesignSpace, lambda: usize) -> Result<Self> {
        if lambda < 4 {
            return Err(Error::Optimization(format!("cma-es needs lambda >= 4, got {lambda}")));
        }
        let n = space.dim();
        let nf = n as f64;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| (mu as f64 + 0.5).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        let mean_span = (0..n).map(|i| space.span(i)).sum::<f64>() / nf;
        let initial_sigma = 0.3 * mean_span;
        Ok(Self {
            dim: n,
            lambda,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
            initial_sigma,
            mean: space.center().0,
            sigma: initial_sigma,
            cov: identity(n),
            p_sigma: vec![0.0; n],
            p_c: vec![0.0; n],
            generation: 0,
            restarts: 0,
        })
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    fn cov_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.cov)
    }

    /// `C = B diag(d^2) B^T`, or `None` when the covariance has degenerated.
    fn decompose(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        let c = self.cov_matrix();
        if !self.sigma.is_finite() || self.sigma <= 0.0 || c.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let c = (&c + c.transpose()) * 0.5;
        let eig = SymmetricEigen::new(c);
        let (min, max) = eig
            .eigenvalues
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if min <= 0.0 || max / min > MAX_CONDITION {
            return None;
        }
        Some((eig.eigenvectors, eig.eigenvalues.map(f64::sqrt)))
    }

    fn restart(&mut self, space: &DesignSpace, rng: &mut RngStream) -> Result<()> {
        if self.restarts >= 1 {
            return Err(Error::Optimization("cma-es covariance degenerated after restart".into()));
        }
        log::warn!("cma-es covariance degenerated at generation {}; restarting", self.generation);
        self.restarts += 1;
        self.mean = space.sample_uniform(rng).0;
        self.sigma = self.initial_sigma;
        self.cov = identity(self.dim);
        self.p_sigma = vec![0.0; self.dim];
        self.p_c = vec![0.0; self.dim];
        Ok(())
    }

    /// Samples `lambda` candidates, clamped into the space.
    pub fn ask(&mut self, space: &DesignSpace, rng: &mut RngStream) -> Result<Vec<DesignVector>> {
        let (b, d) = match self.decompose() {
            Some(bd) => bd,
            None => {
                self.restart(space, rng)?;
                self.decompose().expect("identity covariance decomposes")
            }
        };
        let mean = DVector::from_column_slice(&self.mean);
        Ok((0..self.lambda)
            .map(|_| {
                let z = DVector::from_fn(self.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                let y = &b * d.component_mul(&z);
                let mut x: Vec<f64> = (&mean + y * self.sigma).iter().copied().collect();
                space.clamp_slice(&mut x);
                DesignVector(x)
            })
            .collect())
    }

    /// Updates the distribution from evaluated candidates (higher is better).
    /// Non-finite values rank last.
    pub fn tell(&mut self, candidates: &[DesignVector], values: &[f64]) -> Result<()> {
        assert_eq!(candidates.len(), values.len());
        let n = self.dim;
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        let score = |i: usize| if values[i].is_finite() { values[i] } else { f64::NEG_INFINITY };
        order.sort_by(|&a, &b| score(b).total_cmp(&score(a)));

        let old_mean = DVector::from_column_slice(&self.mean);
        let ys: Vec<DVector<f64>> = order
            .iter()
            .take(self.weights.len())
            .map(|&i| (DVector::from_column_slice(candidates[i].values()) - &old_mean) / self.sigma)
            .collect();
        let y_w = ys
            .iter()
            .zip(&self.weights)
            .fold(DVector::zeros(n), |acc, (y, w)| acc + y * *w);
        let new_mean = &old_mean + &y_w * self.sigma;

        let cov = self.cov_matrix();
        let (b, d) = self
            .decompose()
            .ok_or_else(|| Error::Optimization("degenerate covariance in tell".into()))?;
        let inv_sqrt = &b * DMatrix::from_diagonal(&d.map(|v| 1.0 / v)) * b.transpose();

        let ps = DVector::from_column_slice(&self.p_sigma) * (1.0 - self.c_sigma)
            + &inv_sqrt * &y_w * (self.c_sigma * (2.0 - self.c_sigma) * self.mu_eff).sqrt();
        let gen = (self.generation + 1) as i32;
        let ps_norm = ps.norm();
        let h_sigma = ps_norm / (1.0 - (1.0 - self.c_sigma).powi(2 * gen)).sqrt()
            < (1.4 + 2.0 / (n as f64 + 1.0)) * self.chi_n;
        let h = if h_sigma { 1.0 } else { 0.0 };
        let pc = DVector::from_column_slice(&self.p_c) * (1.0 - self.c_c)
            + &y_w * (h * (self.c_c * (2.0 - self.c_c) * self.mu_eff).sqrt());

        let rank_mu = ys
            .iter()
            .zip(&self.weights)
            .fold(DMatrix::zeros(n, n), |acc, (y, w)| acc + y * y.transpose() * *w);
        let new_cov = &cov * (1.0 - self.c_1 - self.c_mu)
            + (&pc * pc.transpose() + &cov * ((1.0 - h) * self.c_c * (2.0 - self.c_c))) * self.c_1
            + rank_mu * self.c_mu;

        self.sigma *= ((self.c_sigma / self.d_sigma) * (ps_norm / self.chi_n - 1.0)).exp();
        self.mean = new_mean.iter().copied().collect();
        self.p_sigma = ps.iter().copied().collect();
        self.p_c = pc.iter().copied().collect();
        // row-major copy of a symmetric matrix
        self.cov = new_cov.transpose().iter().copied().collect();
        self.generation += 1;
        Ok(())
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    v
}

/// Runs `n_iterations` generations of `lambda` candidates; returns the best
/// candidate ever evaluated.
pub fn cma_es_maximize<F>(
    mut f: F,
    space: &DesignSpace,
    lambda: usize,
    n_iterations: usize,
    rng: &mut RngStream,
) -> Result<OptResult>
where
    F: FnMut(&DesignVector) -> f64,
{
    if n_iterations == 0 {
        return Err(Error::Optimization("cma-es needs at least one iteration".into()));
    }
    let mut es = CmaEs::new(space, lambda)?;
    let mut tracker = Tracker::default();
    for _ in 0..n_iterations {
        let candidates = es.ask(space, rng)?;
        let values: Vec<f64> = candidates.iter().map(|c| tracker.eval(&mut f, c.values())).collect();
        tracker.end_iteration();
        es.tell(&candidates, &values)?;
    }
    tracker.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_quadratic() {
        let space = DesignSpace::uniform(1, 0.0, 1.0).unwrap();
        let r = cma_es_maximize(|x| -(x.0[0] - 0.3).powi(2), &space, 8, 200, &mut RngStream::new(1, 0)).unwrap();
        assert!((r.best_design.0[0] - 0.3).abs() < 1e-3, "{:?}", r.best_design);
        assert_eq!(r.evaluations, 1600);
    }

    #[test]
    fn multi_dimensional_quadratic_with_bound_optimum() {
        let space = DesignSpace::uniform(4, 0.5, 2.0).unwrap();
        let target = [0.7, 1.9, 2.5, 1.1];
        let f = |x: &DesignVector| -x.0.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let r = cma_es_maximize(f, &space, 10, 300, &mut RngStream::new(2, 0)).unwrap();
        let want = [0.7, 1.9, 2.0, 1.1];
        for (got, w) in r.best_design.0.iter().zip(want) {
            assert!((got - w).abs() < 1e-3, "{:?}", r.best_design);
        }
    }

    #[test]
    fn deterministic_with_seed() {
        let space = DesignSpace::uniform(3, 0.0, 1.0).unwrap();
        let f = |x: &DesignVector| -x.0.iter().map(|v| (v - 0.4).powi(2)).sum::<f64>();
        let a = cma_es_maximize(f, &space, 6, 20, &mut RngStream::new(3, 0)).unwrap();
        let b = cma_es_maximize(f, &space, 6, 20, &mut RngStream::new(3, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_generation_returns_best_of_lambda() {
        let space = DesignSpace::uniform(2, 0.5, 2.0).unwrap();
        let mut seen = Vec::new();
        let r = cma_es_maximize(
            |x| {
                let v = x.0[0] - x.0[1];
                seen.push(v);
                v
            },
            &space,
            9,
            1,
            &mut RngStream::new(4, 0),
        )
        .unwrap();
        assert_eq!(seen.len(), 9);
        assert_eq!(r.best_value, seen.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        assert_eq!(r.evaluations, 9);
    }

    #[test]
    fn small_lambda_rejected() {
        let space = DesignSpace::uniform(1, 0.0, 1.0).unwrap();
        assert!(CmaEs::new(&space, 3).is_err());
    }

    #[test]
    fn degenerate_covariance_restarts_once_then_errors() {
        let space = DesignSpace::uniform(2, 0.0, 1.0).unwrap();
        let mut es = CmaEs::new(&space, 6).unwrap();
        let mut rng = RngStream::new(5, 0);
        es.cov = vec![1.0, 0.0, 0.0, 0.0];
        let c = es.ask(&space, &mut rng).unwrap();
        assert_eq!(c.len(), 6);
        assert_eq!(es.restarts, 1);
        es.cov = vec![f64::NAN; 4];
        assert!(matches!(es.ask(&space, &mut rng), Err(Error::Optimization(_))));
    }

    #[test]
    fn weights_sum_to_one() {
        let space = DesignSpace::uniform(5, 0.0, 1.0).unwrap();
        let es = CmaEs::new(&space, 12).unwrap();
        assert!((es.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(es.weights.windows(2).all(|w| w[0] > w[1]));
    }
}
