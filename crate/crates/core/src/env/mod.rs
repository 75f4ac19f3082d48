//! Design-parameterized episodic environments.

mod gainfield;
mod gainline;
pub mod rewards;

use std::collections::BTreeMap;
use std::sync::Arc;

pub use gainfield::GainField2D;
pub use gainline::GainLine;

use crate::domain::{Action, DesignSpace, DesignVector, RngStream, State, Transition};
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub design_space: DesignSpace,
    /// Episode length in steps.
    pub horizon: usize,
    /// Integration step in seconds.
    pub dt: f64,
}

impl EnvSpec {
    pub fn design_dim(&self) -> usize {
        self.design_space.dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub s_next: State,
    pub reward: f64,
    pub done: bool,
}

/// An episodic task whose dynamics, rewards and start states depend on a
/// design vector.
///
/// Implementors provide the raw dynamics; `reset` and `step` add validation
/// and the horizon bookkeeping.
pub trait Environment: Send + Sync + std::fmt::Debug {
    fn id(&self) -> &str;

    fn spec(&self) -> &EnvSpec;

    /// The unscaled reference design; all ones for scale-factor designs.
    fn original_design(&self) -> DesignVector {
        let space = &self.spec().design_space;
        space
            .clamp(&DesignVector(vec![1.0; space.dim()]))
            .expect("dimension matches")
    }

    /// Draws `s0 ~ p(s0 | design)`. Inputs are already validated.
    fn start_state(&self, design: &DesignVector, rng: &mut RngStream) -> State;

    /// Deterministic transition and reward. Inputs are already validated.
    fn transition(&self, s: &State, a: &Action, design: &DesignVector) -> (State, f64);

    fn reset(&self, design: &DesignVector, rng: &mut RngStream) -> Result<State> {
        self.check_design(design)?;
        Ok(self.start_state(design, rng))
    }

    /// Advances one step. `step_index` counts steps taken in the episode
    /// including this one, so `done` is set when it reaches the horizon.
    fn step(
        &self,
        s: &State,
        a: &Action,
        design: &DesignVector,
        step_index: usize,
    ) -> Result<StepResult> {
        let spec = self.spec();
        check_dim(spec.state_dim, s.0.len())?;
        check_dim(spec.action_dim, a.0.len())?;
        check_dim(spec.design_dim(), design.len())?;
        if !s.is_finite() || !a.0.iter().all(|x| x.is_finite()) || !design.0.iter().all(|x| x.is_finite()) {
            return Err(Error::Domain("non-finite step input".into()));
        }
        if !a.in_range() {
            return Err(Error::Domain(format!("action outside [-1, 1]: {:?}", a.0)));
        }
        let (s_next, reward) = self.transition(s, a, design);
        if !reward.is_finite() || !s_next.is_finite() {
            return Err(Error::Numeric("environment produced a non-finite value".into()));
        }
        Ok(StepResult {
            s_next,
            reward,
            done: step_index >= spec.horizon,
        })
    }

    fn check_design(&self, design: &DesignVector) -> Result<()> {
        let space = &self.spec().design_space;
        check_dim(space.dim(), design.len())?;
        if !space.contains(design) {
            return Err(Error::Domain(format!(
                "design {:?} outside design space",
                design.0
            )));
        }
        Ok(())
    }
}

/// One recorded trajectory.
#[derive(Debug, Clone)]
pub struct Episode {
    pub start: State,
    pub transitions: Vec<Transition>,
    pub episode_return: f64,
}

/// Runs one full episode with the given controller.
pub fn rollout<F>(
    env: &dyn Environment,
    design: &DesignVector,
    rng: &mut RngStream,
    mut policy: F,
) -> Result<Episode>
where
    F: FnMut(&State) -> Result<Action>,
{
    let start = env.reset(design, rng)?;
    let horizon = env.spec().horizon;
    let mut transitions = Vec::with_capacity(horizon);
    let mut s = start.clone();
    let mut total = 0.0;
    for t in 1..=horizon {
        let a = policy(&s)?;
        let step = env.step(&s, &a, design, t)?;
        total += step.reward;
        transitions.push(Transition {
            s,
            a,
            r: step.reward,
            s_next: step.s_next.clone(),
            done: step.done,
        });
        s = step.s_next;
        if step.done {
            break;
        }
    }
    Ok(Episode {
        start,
        transitions,
        episode_return: total,
    })
}

type EnvCtor = Arc<dyn Fn() -> Box<dyn Environment> + Send + Sync>;

/// Maps string ids to environment constructors.
#[derive(Clone)]
pub struct EnvRegistry {
    ctors: BTreeMap<String, EnvCtor>,
}

impl EnvRegistry {
    pub fn empty() -> Self {
        Self {
            ctors: BTreeMap::new(),
        }
    }

    /// Registry holding `gainline` and `gainfield2d`.
    pub fn with_builtin() -> Self {
        let mut reg = Self::empty();
        reg.register(GainLine::ID, || Box::new(GainLine::new()));
        reg.register(GainField2D::ID, || Box::new(GainField2D::new()));
        reg
    }

    pub fn register<F>(&mut self, id: &str, ctor: F)
    where
        F: Fn() -> Box<dyn Environment> + Send + Sync + 'static,
    {
        self.ctors.insert(id.to_string(), Arc::new(ctor));
    }

    pub fn create(&self, id: &str) -> Result<Box<dyn Environment>> {
        self.ctors
            .get(id)
            .map(|ctor| ctor())
            .ok_or_else(|| Error::UnknownEnv(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ctors.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.ctors.keys().map(String::as_str)
    }
}

impl Default for EnvRegistry {
    fn default() -> Self {
        Self::with_builtin()
    }
}

impl std::fmt::Debug for EnvRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.ctors.keys()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn dv(v: &[f64]) -> DesignVector {
        DesignVector(v.to_vec())
    }

    fn constant_return(env: &dyn Environment, design: &DesignVector, action: &[f64]) -> f64 {
        let mut rng = RngStream::new(0, 0);
        rollout(env, design, &mut rng, |_| Ok(Action(action.to_vec())))
            .unwrap()
            .episode_return
    }

    #[test]
    fn gainline_step_examples() {
        let env = GainLine::new();
        let s0 = State(vec![0.0, 0.0]);
        let r = env.step(&s0, &Action(vec![1.0]), &dv(&[2.0, 0.5]), 1).unwrap();
        assert_abs_diff_eq!(r.s_next.0[1], 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(r.s_next.0[0], 0.04, epsilon = 1e-15);
        assert_abs_diff_eq!(r.reward, 0.004, epsilon = 1e-15);
        assert!(!r.done);

        let back = env.step(&s0, &Action(vec![-1.0]), &dv(&[1.0, 1.0]), 1).unwrap();
        assert_eq!(back.reward, 0.0);

        let null = env.step(&s0, &Action(vec![0.0]), &dv(&[1.0, 1.0]), 1).unwrap();
        assert_eq!(null.s_next, s0);
        assert_eq!(null.reward, 0.0);
    }

    #[test]
    fn done_only_at_horizon() {
        let env = GainLine::new();
        let s0 = State(vec![0.0, 0.0]);
        let a = Action(vec![0.5]);
        let d = dv(&[1.0, 1.0]);
        assert!(!env.step(&s0, &a, &d, 99).unwrap().done);
        assert!(env.step(&s0, &a, &d, 100).unwrap().done);
        let mut rng = RngStream::new(0, 0);
        let ep = rollout(&env, &d, &mut rng, |_| Ok(a.clone())).unwrap();
        assert_eq!(ep.transitions.len(), 100);
        assert!(ep.transitions[..99].iter().all(|t| !t.done));
        assert!(ep.transitions[99].done);
    }

    #[test]
    fn step_rejects_bad_inputs() {
        let env = GainLine::new();
        let d = dv(&[1.0, 1.0]);
        let s0 = State(vec![0.0, 0.0]);
        assert!(matches!(
            env.step(&State(vec![f64::NAN, 0.0]), &Action(vec![0.0]), &d, 1),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            env.step(&s0, &Action(vec![1.5]), &d, 1),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            env.step(&s0, &Action(vec![0.0, 0.0]), &d, 1),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn reset_rejects_out_of_bounds_design() {
        let env = GainLine::new();
        let mut rng = RngStream::new(0, 0);
        assert!(matches!(env.reset(&dv(&[3.0, 1.0]), &mut rng), Err(Error::Domain(_))));
        assert_eq!(env.reset(&dv(&[1.3, 0.7]), &mut rng).unwrap().0, vec![0.0, 0.0]);
    }

    #[test]
    fn gainfield_reset_offsets() {
        let env = GainField2D::new();
        let mut rng = RngStream::new(5, 0);
        for _ in 0..50 {
            let s = env.reset(&dv(&[1.0, 1.0, 1.0]), &mut rng).unwrap();
            assert_eq!(s.0[0], 0.0);
            assert!((-0.1..=0.1).contains(&s.0[1]));
            assert_eq!(&s.0[2..], &[0.0, 0.0]);
        }
        let s = env.reset(&dv(&[2.0, 1.0, 1.0]), &mut rng).unwrap();
        assert_abs_diff_eq!(s.0[0], 0.1, epsilon = 1e-15);
    }

    #[test]
    fn gainline_constant_push_matches_recurrence() {
        // closed-form steady approach: v_t = g (1 - 0.9^t), r_t = 0.01 v_t
        let env = GainLine::new();
        let g: f64 = 4.0;
        let expected: f64 = (1..=100).map(|t| 0.01 * g * (1.0 - 0.9f64.powi(t))).sum();
        let got = constant_return(&env, &dv(&[2.0, 0.5]), &[1.0]);
        assert_abs_diff_eq!(got, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(got, 3.640_009_56, epsilon = 1e-6);
    }

    #[test]
    fn gainline_return_monotone_in_gain() {
        let env = GainLine::new();
        let grid: Vec<f64> = (0..=6).map(|i| 0.5 + 0.25 * i as f64).collect();
        for &b in &grid {
            for w in grid.windows(2) {
                let lo = constant_return(&env, &dv(&[w[0], b]), &[1.0]);
                let hi = constant_return(&env, &dv(&[w[1], b]), &[1.0]);
                assert!(hi > lo, "not increasing in xi1");
                let lo2 = constant_return(&env, &dv(&[b, w[0]]), &[1.0]);
                let hi2 = constant_return(&env, &dv(&[b, w[1]]), &[1.0]);
                assert!(hi2 < lo2, "not decreasing in xi2");
            }
        }
    }

    #[test]
    fn gainfield_brute_force_optimum() {
        // 21^3 grid, scripted straight-line push along +x.
        let env = GainField2D::new();
        let axis: Vec<f64> = (0..21).map(|i| 0.5 + 0.075 * i as f64).collect();
        let mut best = (f64::NEG_INFINITY, vec![]);
        for &a in &axis {
            for &b in &axis {
                for &c in &axis {
                    let d = dv(&[a, b, c]);
                    let ret = constant_return(&env, &d, &[1.0, 0.0]);
                    if ret > best.0 {
                        best = (ret, d.0.clone());
                    }
                }
            }
        }
        assert_abs_diff_eq!(best.1[0], 2.0, epsilon = 1e-12);
        // 1.0 is not a grid node; the nearest node in energy terms is 1.025
        assert_abs_diff_eq!(best.1[1], 1.025, epsilon = 1e-12);
        assert_abs_diff_eq!(best.1[2], 0.5, epsilon = 1e-12);

        // refine xi2 on a grid that contains 1.0
        let fine: Vec<f64> = (0..=300).map(|i| 0.5 + 0.005 * i as f64).collect();
        let best_xi2 = fine
            .iter()
            .copied()
            .max_by(|&p, &q| {
                let rp = constant_return(&env, &dv(&[2.0, p, 0.5]), &[1.0, 0.0]);
                let rq = constant_return(&env, &dv(&[2.0, q, 0.5]), &[1.0, 0.0]);
                rp.partial_cmp(&rq).unwrap()
            })
            .unwrap();
        assert_abs_diff_eq!(best_xi2, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn registry_lookup() {
        let reg = EnvRegistry::with_builtin();
        assert_eq!(reg.create("gainline").unwrap().id(), "gainline");
        assert_eq!(reg.create("gainfield2d").unwrap().spec().design_dim(), 3);
        assert!(matches!(reg.create("hopper"), Err(Error::UnknownEnv(_))));
        let mut reg = EnvRegistry::empty();
        reg.register("custom", || Box::new(GainLine::new()));
        assert!(reg.contains("custom"));
    }

    #[test]
    fn original_design_is_all_ones() {
        assert_eq!(GainLine::new().original_design().0, vec![1.0, 1.0]);
        assert_eq!(GainField2D::new().original_design().0, vec![1.0, 1.0, 1.0]);
    }

    proptest! {
        #[test]
        fn step_is_pure(x in -5.0f64..5.0, v in -3.0f64..3.0, a in -1.0f64..1.0,
                        d1 in 0.5f64..2.0, d2 in 0.5f64..2.0) {
            let env = GainLine::new();
            let s = State(vec![x, v]);
            let d = dv(&[d1, d2]);
            let r1 = env.step(&s, &Action(vec![a]), &d, 3).unwrap();
            let r2 = env.step(&s, &Action(vec![a]), &d, 3).unwrap();
            prop_assert_eq!(r1.s_next.0[0].to_bits(), r2.s_next.0[0].to_bits());
            prop_assert_eq!(r1.reward.to_bits(), r2.reward.to_bits());
            prop_assert!(r1.reward >= 0.0);
            // max per-step reward is 0.01 * |v'| <= 0.01 * (0.9*3 + 0.4)
            prop_assert!(r1.reward <= 0.01 * (0.9 * 3.0 + 0.4) + 1e-12);
        }

        #[test]
        fn gainfield_energy_minimal_at_unit(x in -1.0f64..1.0, vx in -2.0f64..2.0, vy in -2.0f64..2.0,
                                             ax in -1.0f64..1.0, ay in -1.0f64..1.0,
                                             g in 0.5f64..2.0, dr in 0.5f64..2.0) {
            prop_assume!(ax != 0.0 || ay != 0.0);
            let env = GainField2D::new();
            let s = State(vec![x, 0.0, vx, vy]);
            let a = Action(vec![ax, ay]);
            let at = |xi2: f64| env.step(&s, &a, &dv(&[g, xi2, dr]), 1).unwrap().reward;
            prop_assert!(at(1.0) >= at(0.5));
            prop_assert!(at(1.0) >= at(2.0));
        }
    }
}
