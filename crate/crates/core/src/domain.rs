//! Shared value types: design spaces, design vectors, states, actions,
//! transitions and seeded random streams.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Box bounds of the admissible design parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpace {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl DesignSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim(lower.len(), upper.len())?;
        if lower.is_empty() {
            return Err(Error::Domain("design space must have at least one dimension".into()));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Domain(format!(
                    "invalid bounds for dimension {i}: [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The same interval `[lo, hi]` in every one of `dim` dimensions.
    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn span(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn center(&self) -> DesignVector {
        DesignVector(
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(lo, hi)| 0.5 * (lo + hi))
                .collect(),
        )
    }

    pub fn contains(&self, design: &DesignVector) -> bool {
        design.len() == self.dim()
            && design
                .values()
                .iter()
                .enumerate()
                .all(|(i, &x)| x >= self.lower[i] && x <= self.upper[i])
    }

    /// Projects each component onto its interval.
    pub fn clamp(&self, design: &DesignVector) -> Result<DesignVector> {
        check_dim(self.dim(), design.len())?;
        Ok(DesignVector(
            design
                .values()
                .iter()
                .enumerate()
                .map(|(i, &x)| x.clamp(self.lower[i], self.upper[i]))
                .collect(),
        ))
    }

    /// In-place projection of a raw coordinate slice.
    pub(crate) fn clamp_slice(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }

    pub fn sample_uniform(&self, rng: &mut RngStream) -> DesignVector {
        DesignVector(
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(&lo, &hi)| lo + (hi - lo) * rng.random::<f64>())
                .collect(),
        )
    }

    /// Affine map of a design onto `[-1, 1]^d`; used for network conditioning.
    pub fn normalize_into(&self, design: &[f64], out: &mut [f64]) {
        for i in 0..design.len() {
            out[i] = 2.0 * (design[i] - self.lower[i]) / self.span(i) - 1.0;
        }
    }
}

/// A point in design space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DesignVector(pub Vec<f64>);

impl DesignVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn distance(&self, other: &DesignVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Environment observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct State(pub Vec<f64>);

impl State {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// Control signal with every component in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Action(pub Vec<f64>);

impl Action {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn in_range(&self) -> bool {
        self.0.iter().all(|a| (-1.0..=1.0).contains(a))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: State,
    pub a: Action,
    pub r: f64,
    pub s_next: State,
    pub done: bool,
}

/// A transition tagged with the design that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignTransition {
    pub transition: Transition,
    pub design: DesignVector,
}

/// Named sub-streams fanned out from one root seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamId {
    Env = 1,
    Policy = 2,
    Optimizer = 3,
    Exploration = 4,
    Replay = 5,
    Init = 6,
    InitialDesigns = 7,
    Analysis = 8,
    Evaluation = 9,
}

/// Serializable position of a [`RngStream`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    /// Word position, decimal encoded (u128).
    pub word_pos: String,
}

/// A reproducible random stream identified by `(seed, stream)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn named(seed: u64, id: StreamId) -> Self {
        Self::new(seed, id as u64)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Independent child stream; used to give parallel workers their own draws.
    pub fn fork(&mut self) -> Self {
        let child_seed = self.rng.next_u64();
        Self::new(child_seed, self.stream)
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            stream: self.stream,
            word_pos: self.rng.get_word_pos().to_string(),
        }
    }

    pub fn from_state(state: &RngState) -> Result<Self> {
        let pos: u128 = state
            .word_pos
            .parse()
            .map_err(|_| Error::Format(format!("bad rng word position `{}`", state.word_pos)))?;
        let mut s = Self::new(state.seed, state.stream);
        s.rng.set_word_pos(pos);
        Ok(s)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::RngCore;

    fn unit_space() -> DesignSpace {
        DesignSpace::uniform(1, 0.8, 2.0).unwrap()
    }

    #[test]
    fn clamp_projects_onto_bounds() {
        let space = unit_space();
        assert_eq!(space.clamp(&DesignVector(vec![3.0])).unwrap().0, vec![2.0]);
        assert_eq!(space.clamp(&DesignVector(vec![1.0])).unwrap().0, vec![1.0]);
        let space2 = DesignSpace::uniform(2, 0.8, 2.0).unwrap();
        assert_eq!(
            space2.clamp(&DesignVector(vec![0.5, 2.5])).unwrap().0,
            vec![0.8, 2.0]
        );
    }

    #[test]
    fn clamp_rejects_wrong_dimension() {
        let err = unit_space().clamp(&DesignVector(vec![1.0, 1.0])).unwrap_err();
        assert!(matches!(err, Error::Dimension { expected: 1, actual: 2 }));
    }

    #[test]
    fn invalid_bounds_rejected() {
        assert!(DesignSpace::new(vec![1.0], vec![1.0]).is_err());
        assert!(DesignSpace::new(vec![1.0, 0.0], vec![2.0]).is_err());
        assert!(DesignSpace::new(vec![], vec![]).is_err());
    }

    #[test]
    fn sample_uniform_narrow_span_contained() {
        let space = DesignSpace::new(vec![1.0], vec![1.0 + 1e-12]).unwrap();
        let mut rng = RngStream::new(3, 0);
        for _ in 0..100 {
            assert!(space.contains(&space.sample_uniform(&mut rng)));
        }
    }

    #[test]
    fn sample_uniform_is_deterministic() {
        let space = DesignSpace::uniform(3, 0.5, 2.0).unwrap();
        let a = space.sample_uniform(&mut RngStream::new(42, 0));
        let b = space.sample_uniform(&mut RngStream::new(42, 0));
        assert_eq!(a, b);
        let c = space.sample_uniform(&mut RngStream::new(42, 1));
        assert_ne!(a, c);
    }

    #[test]
    fn sample_uniform_mean_monte_carlo() {
        let space = DesignSpace::uniform(1, 0.0, 1.0).unwrap();
        let mut rng = RngStream::new(7, 0);
        let n = 10_000;
        let mean: f64 = (0..n).map(|_| space.sample_uniform(&mut rng).0[0]).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn rng_state_roundtrip_continues_sequence() {
        let mut a = RngStream::new(11, 4);
        for _ in 0..37 {
            a.next_u32();
        }
        let mut b = RngStream::from_state(&a.state()).unwrap();
        for _ in 0..10 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    proptest! {
        #[test]
        fn clamp_idempotent_and_contained(xs in proptest::collection::vec(-10.0f64..10.0, 3)) {
            let space = DesignSpace::uniform(3, 0.5, 2.0).unwrap();
            let once = space.clamp(&DesignVector(xs.clone())).unwrap();
            let twice = space.clamp(&once).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert!(space.contains(&once));
            for (i, x) in xs.iter().enumerate() {
                if (0.5..=2.0).contains(x) {
                    prop_assert_eq!(once.0[i], *x);
                }
            }
        }

        #[test]
        fn sampled_designs_in_bounds(seed in any::<u64>()) {
            let space = DesignSpace::new(vec![-1.0, 0.5, 10.0], vec![1.0, 4.0, 10.5]).unwrap();
            let mut rng = RngStream::new(seed, 0);
            for _ in 0..20 {
                prop_assert!(space.contains(&space.sample_uniform(&mut rng)));
            }
        }
    }
}
