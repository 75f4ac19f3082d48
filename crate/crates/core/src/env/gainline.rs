use super::{rewards::reward_forward_clipped, EnvSpec, Environment};
use crate::domain::{Action, DesignSpace, DesignVector, RngStream, State};

const DT: f64 = 0.1;
const DAMPING: f64 = 0.1;

/// Point mass on a line. The force gain is the ratio of the two design
/// parameters, so the best design is the corner `(2.0, 0.5)`.
///
/// State `(x, v)`, one action, `v' = 0.9 v + 0.1 (xi1 / xi2) a`,
/// `x' = x + 0.1 v'`, reward `max((x' - x) / 10, 0)`.
#[derive(Debug, Clone)]
pub struct GainLine {
    spec: EnvSpec,
}

impl GainLine {
    pub const ID: &'static str = "gainline";

    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                state_dim: 2,
                action_dim: 1,
                design_space: DesignSpace::uniform(2, 0.5, 2.0).expect("static bounds"),
                horizon: 100,
                dt: DT,
            },
        }
    }
}

impl Default for GainLine {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for GainLine {
    fn id(&self) -> &str {
        Self::ID
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn start_state(&self, _design: &DesignVector, _rng: &mut RngStream) -> State {
        State(vec![0.0, 0.0])
    }

    fn transition(&self, s: &State, a: &Action, design: &DesignVector) -> (State, f64) {
        let (x, v) = (s.0[0], s.0[1]);
        let gain = design.0[0] / design.0[1];
        let v_next = (1.0 - DAMPING) * v + DT * gain * a.0[0];
        let x_next = x + DT * v_next;
        (State(vec![x_next, v_next]), reward_forward_clipped(x_next - x))
    }
}
