//! Post-hoc inspection: critic-objective grid slices, a two-component PCA
//! of the trained designs, and cross-seed summaries.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::coadapt::CoadaptRecord;
use crate::design_eval::{q_objective, ObjectiveContext};
use crate::domain::{DesignSpace, DesignVector};
use crate::error::{check_dim, Error, Result};

pub const DEFAULT_GRID_RESOLUTION: usize = 50;

/// Objective values on a regular grid over two design dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGrid {
    pub dims: (usize, usize),
    pub base: DesignVector,
    pub resolution: usize,
    pub axis_i: Vec<f64>,
    pub axis_j: Vec<f64>,
    /// `values[a][b]` is the objective at `(axis_i[a], axis_j[b])`.
    pub values: Vec<Vec<f64>>,
}

impl LandscapeGrid {
    /// `(value_i, value_j, objective)` in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.axis_i.iter().enumerate().flat_map(move |(a, &vi)| {
            self.axis_j.iter().enumerate().map(move |(b, &vj)| (vi, vj, self.values[a][b]))
        })
    }

    pub fn argmax(&self) -> (f64, f64, f64) {
        self.cells()
            .max_by(|x, y| x.2.total_cmp(&y.2))
            .expect("grid has at least 4 cells")
    }
}

fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

/// Critic objective over dimensions `dims` spanning their bounds, with the
/// other components taken from `base`.
pub fn landscape_slice(
    ctx: &ObjectiveContext,
    space: &DesignSpace,
    base: &DesignVector,
    dims: (usize, usize),
    resolution: usize,
) -> Result<LandscapeGrid> {
    check_dim(space.dim(), base.len())?;
    let (i, j) = dims;
    if i == j || i >= space.dim() || j >= space.dim() {
        return Err(Error::Domain(format!(
            "landscape dims {dims:?} must be distinct and below {}",
            space.dim()
        )));
    }
    if resolution < 2 {
        return Err(Error::Domain(format!("landscape resolution must be >= 2, got {resolution}")));
    }
    let base = space.clamp(base)?;
    let axis_i = axis(space.lower()[i], space.upper()[i], resolution);
    let axis_j = axis(space.lower()[j], space.upper()[j], resolution);
    let mut values = vec![vec![0.0; resolution]; resolution];
    let mut x = base.clone();
    for (a, &vi) in axis_i.iter().enumerate() {
        for (b, &vj) in axis_j.iter().enumerate() {
            x.0[i] = vi;
            x.0[j] = vj;
            let v = q_objective(&x, ctx)?;
            if !v.is_finite() {
                return Err(Error::Numeric(format!("objective non-finite at {:?}", x.0)));
            }
            values[a][b] = v;
        }
    }
    Ok(LandscapeGrid { dims, base, resolution, axis_i, axis_j, values })
}

/// Two leading principal directions of a design set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    pub components: [Vec<f64>; 2],
    /// Fraction of total variance along each component.
    pub explained: [f64; 2],
    /// Trace of the covariance (population normalization).
    pub total_variance: f64,
}

impl PcaModel {
    /// Eigen-decomposition of the mean-centred covariance. Each component
    /// is oriented so that its first non-negligible entry is positive.
    pub fn fit(designs: &[DesignVector]) -> Result<Self> {
        if designs.len() < 3 {
            return Err(Error::Degenerate(format!("pca needs >= 3 designs, got {}", designs.len())));
        }
        let dim = designs[0].len();
        if dim < 2 {
            return Err(Error::Degenerate("pca needs design dimension >= 2".into()));
        }
        for d in designs {
            check_dim(dim, d.len())?;
        }
        let n = designs.len() as f64;
        let mean: Vec<f64> = (0..dim).map(|k| designs.iter().map(|d| d.0[k]).sum::<f64>() / n).collect();
        let centred = DMatrix::from_fn(designs.len(), dim, |r, c| designs[r].0[c] - mean[c]);
        let cov = centred.transpose() * &centred / n;
        let total_variance = cov.trace();
        if total_variance <= 1e-24 {
            return Err(Error::Degenerate("all designs are identical".into()));
        }
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let component = |k: usize| -> Vec<f64> {
            let mut v: Vec<f64> = eig.eigenvectors.column(order[k]).iter().copied().collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
                if *first < 0.0 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
            }
            v
        };
        let explained = |k: usize| eig.eigenvalues[order[k]].max(0.0) / total_variance;
        Ok(Self {
            mean,
            components: [component(0), component(1)],
            explained: [explained(0), explained(1)],
            total_variance,
        })
    }

    pub fn project(&self, design: &DesignVector) -> Result<[f64; 2]> {
        check_dim(self.mean.len(), design.len())?;
        let c: Vec<f64> = design.0.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        let dot = |v: &[f64]| v.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>();
        Ok([dot(&self.components[0]), dot(&self.components[1])])
    }

    pub fn reconstruct(&self, coords: [f64; 2]) -> DesignVector {
        DesignVector(
            (0..self.mean.len())
                .map(|k| self.mean[k] + coords[0] * self.components[0][k] + coords[1] * self.components[1][k])
                .collect(),
        )
    }
}

/// One group of runs to summarize, e.g. one mode across seeds.
#[derive(Debug, Clone)]
pub struct RunGroup<'a> {
    pub label: String,
    pub runs: Vec<&'a [CoadaptRecord]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub design_index: usize,
    pub mode: String,
    pub mean_best: f64,
    /// Population standard deviation across seeds.
    pub std_best: f64,
    pub mean_rollouts: f64,
}

/// Running maximum of `best_return` in design order.
pub fn running_best(records: &[CoadaptRecord]) -> Vec<f64> {
    records
        .iter()
        .scan(f64::NEG_INFINITY, |best, r| {
            *best = best.max(r.best_return);
            Some(*best)
        })
        .collect()
}

/// Per design index and group: mean and spread of the running best return
/// across seeds, and the mean simulated-episode count.
pub fn compare_runs(groups: &[RunGroup]) -> Result<Vec<CompareRow>> {
    let mut rows = Vec::new();
    let mut seen = BTreeMap::new();
    for g in groups {
        if g.runs.is_empty() {
            return Err(Error::Alignment(format!("group `{}` has no runs", g.label)));
        }
        if seen.insert(g.label.clone(), ()).is_some() {
            return Err(Error::Alignment(format!("duplicate group label `{}`", g.label)));
        }
        let len = g.runs[0].len();
        for run in &g.runs {
            if run.len() != len {
                return Err(Error::Alignment(format!(
                    "group `{}`: runs have {} and {} designs",
                    g.label,
                    len,
                    run.len()
                )));
            }
            for (k, r) in run.iter().enumerate() {
                if r.design_index != k + 1 {
                    return Err(Error::Alignment(format!(
                        "group `{}`: record {k} has design index {}",
                        g.label, r.design_index
                    )));
                }
            }
        }
        let curves: Vec<Vec<f64>> = g.runs.iter().map(|r| running_best(r)).collect();
        let n = g.runs.len() as f64;
        for k in 0..len {
            let vals: Vec<f64> = curves.iter().map(|c| c[k]).collect();
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let rollouts = g.runs.iter().map(|r| r[k].cumulative_rollouts as f64).sum::<f64>() / n;
            rows.push(CompareRow {
                design_index: k + 1,
                mode: g.label.clone(),
                mean_best: mean,
                std_best: var.sqrt(),
                mean_rollouts: rollouts,
            });
        }
    }
    Ok(rows)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    if a.len() < 2 {
        return Err(Error::Degenerate("rank correlation needs >= 2 points".into()));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Degenerate("rank correlation of a constant sequence".into()));
    }
    Ok(cov / (va * vb).sqrt())
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut out = vec![0.0; x.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut end = k;
        while end + 1 < idx.len() && x[idx[end + 1]] == x[idx[k]] {
            end += 1;
        }
        let rank = (k + end) as f64 / 2.0 + 1.0;
        for &i in &idx[k..=end] {
            out[i] = rank;
        }
        k = end + 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{NetworkSet, SacConfig};
    use crate::coadapt::SelectionMode;
    use crate::domain::{RngStream, State};
    use proptest::prelude::*;
    use rand::Rng;

    fn net(constant: Option<f64>) -> NetworkSet {
        let cfg = SacConfig { hidden: vec![6], ..SacConfig::default() };
        let space = DesignSpace::uniform(3, 0.5, 2.0).unwrap();
        let mut n = NetworkSet::new(cfg, 2, 1, space, &mut RngStream::new(4, 0));
        if let Some(c) = constant {
            for q in [&mut n.q1, &mut n.q2] {
                let last = q.layers_mut().last_mut().unwrap();
                last.w.fill(0.0);
                last.b.fill(c);
            }
        }
        n
    }

    fn states() -> Vec<State> {
        vec![State(vec![0.1, -0.2]), State(vec![0.0, 0.3])]
    }

    #[test]
    fn constant_critic_flat_landscape() {
        let n = net(Some(3.5));
        let ss = states();
        let ctx = ObjectiveContext::new(&n, &ss).unwrap();
        let g = landscape_slice(&ctx, &n.design_space, &DesignVector(vec![1.0; 3]), (0, 2), 5).unwrap();
        assert_eq!(g.cells().count(), 25);
        assert!(g.cells().all(|c| (c.2 - 3.5).abs() < 1e-12));
    }

    #[test]
    fn resolution_two_hits_corners() {
        let n = net(None);
        let ss = states();
        let ctx = ObjectiveContext::new(&n, &ss).unwrap();
        let g = landscape_slice(&ctx, &n.design_space, &DesignVector(vec![1.0; 3]), (1, 0), 2).unwrap();
        assert_eq!(g.axis_i, vec![0.5, 2.0]);
        assert_eq!(g.axis_j, vec![0.5, 2.0]);
        let direct = q_objective(&DesignVector(vec![2.0, 0.5, 1.0]), &ctx).unwrap();
        assert_eq!(g.values[0][1], direct);
    }

    #[test]
    fn landscape_rejects_bad_dims() {
        let n = net(None);
        let ss = states();
        let ctx = ObjectiveContext::new(&n, &ss).unwrap();
        let base = DesignVector(vec![1.0; 3]);
        assert!(landscape_slice(&ctx, &n.design_space, &base, (1, 1), 3).is_err());
        assert!(landscape_slice(&ctx, &n.design_space, &base, (0, 3), 3).is_err());
        assert!(landscape_slice(&ctx, &n.design_space, &base, (0, 1), 1).is_err());
    }

    #[test]
    fn pca_on_a_line() {
        let dir = [1.0, -2.0, 0.5, 0.0, 3.0, 1.0];
        let norm = dir.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
        let designs: Vec<DesignVector> = (0..10)
            .map(|t| DesignVector(dir.iter().map(|d| 1.0 + 0.1 * t as f64 * d).collect()))
            .collect();
        let m = PcaModel::fit(&designs).unwrap();
        let cos: f64 = m.components[0].iter().zip(dir).map(|(a, b)| a * b / norm).sum();
        assert!(cos.abs() > 1.0 - 1e-9);
        assert!(m.explained[1] < 1e-9);
        assert!(m.components[0][0] > 0.0);
        let p = m.project(&DesignVector(m.mean.clone())).unwrap();
        assert!(p[0].abs() < 1e-12 && p[1].abs() < 1e-12);
    }

    #[test]
    fn pca_degenerate_inputs() {
        let same = vec![DesignVector(vec![1.0, 2.0]); 4];
        assert!(matches!(PcaModel::fit(&same), Err(Error::Degenerate(_))));
        assert!(matches!(PcaModel::fit(&same[..2]), Err(Error::Degenerate(_))));
        let one_d = vec![DesignVector(vec![1.0]), DesignVector(vec![2.0]), DesignVector(vec![3.0])];
        assert!(matches!(PcaModel::fit(&one_d), Err(Error::Degenerate(_))));
    }

    fn rec(index: usize, best: f64, rollouts: u64) -> CoadaptRecord {
        CoadaptRecord {
            design_index: index,
            design: DesignVector(vec![1.0]),
            mode: SelectionMode::Initial,
            returns: vec![best],
            best_return: best,
            objective_value: None,
            evaluations: 0,
            selection_rollouts: 0,
            duplicate: false,
            cumulative_rollouts: rollouts,
        }
    }

    #[test]
    fn compare_single_and_identical_seeds() {
        let a = vec![rec(1, 1.0, 10), rec(2, 0.5, 20), rec(3, 2.0, 30)];
        let rows = compare_runs(&[RunGroup { label: "q".into(), runs: vec![&a] }]).unwrap();
        assert_eq!(rows.iter().map(|r| r.mean_best).collect::<Vec<_>>(), vec![1.0, 1.0, 2.0]);
        assert!(rows.iter().all(|r| r.std_best == 0.0));
        let twin = compare_runs(&[RunGroup { label: "q".into(), runs: vec![&a, &a] }]).unwrap();
        assert_eq!(rows, twin);
        assert_eq!(rows[2].mean_rollouts, 30.0);
    }

    #[test]
    fn compare_rejects_misaligned_runs() {
        let a = vec![rec(1, 1.0, 10), rec(2, 0.5, 20)];
        let b = vec![rec(1, 1.0, 10)];
        let err = compare_runs(&[RunGroup { label: "q".into(), runs: vec![&a, &b] }]);
        assert!(matches!(err, Err(Error::Alignment(_))));
    }

    #[test]
    fn spearman_known_values() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(ranks(&[5.0, 1.0, 5.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    fn random_designs(seed: u64, n: usize, dim: usize) -> Vec<DesignVector> {
        let mut rng = RngStream::new(seed, 0);
        (0..n).map(|_| DesignVector((0..dim).map(|_| rng.random_range(0.5..2.0)).collect())).collect()
    }

    proptest! {
        #[test]
        fn pca_components_orthonormal(seed in 0u64..200, n in 3usize..15, dim in 2usize..7) {
            let m = PcaModel::fit(&random_designs(seed, n, dim)).unwrap();
            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            prop_assert!((dot(&m.components[0], &m.components[0]) - 1.0).abs() < 1e-9);
            prop_assert!((dot(&m.components[1], &m.components[1]) - 1.0).abs() < 1e-9);
            prop_assert!(dot(&m.components[0], &m.components[1]).abs() < 1e-9);
            prop_assert!(m.explained[0] >= m.explained[1]);
        }

        #[test]
        fn running_best_is_monotone(vals in prop::collection::vec(-10.0f64..10.0, 1..30)) {
            let recs: Vec<_> = vals.iter().enumerate().map(|(k, v)| rec(k + 1, *v, k as u64)).collect();
            let curve = running_best(&recs);
            prop_assert!(curve.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
