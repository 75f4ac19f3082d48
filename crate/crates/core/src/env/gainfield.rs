use rand::Rng;

use super::{EnvSpec, Environment};
use crate::domain::{Action, DesignSpace, DesignVector, RngStream, State};

const DT: f64 = 0.1;

/// Planar point mass with three design parameters: actuator gain `xi1`,
/// an energy coefficient `xi2 + 1 / xi2` (minimal at `xi2 = 1`) and drag
/// `0.05 xi3`. The start position depends on the design.
///
/// State `(x, y, vx, vy)`, two actions.
#[derive(Debug, Clone)]
pub struct GainField2D {
    spec: EnvSpec,
}

impl GainField2D {
    pub const ID: &'static str = "gainfield2d";

    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                state_dim: 4,
                action_dim: 2,
                design_space: DesignSpace::uniform(3, 0.5, 2.0).expect("static bounds"),
                horizon: 100,
                dt: DT,
            },
        }
    }

    pub fn energy_coefficient(xi2: f64) -> f64 {
        xi2 + 1.0 / xi2
    }
}

impl Default for GainField2D {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for GainField2D {
    fn id(&self) -> &str {
        Self::ID
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn start_state(&self, design: &DesignVector, rng: &mut RngStream) -> State {
        let x0 = 0.1 * (design.0[0] - 1.0);
        let y0 = rng.random_range(-0.1..=0.1);
        State(vec![x0, y0, 0.0, 0.0])
    }

    fn transition(&self, s: &State, a: &Action, design: &DesignVector) -> (State, f64) {
        let gain = design.0[0];
        let energy = Self::energy_coefficient(design.0[1]);
        let drag = 0.05 * design.0[2];
        let (x, y, vx, vy) = (s.0[0], s.0[1], s.0[2], s.0[3]);
        let (ax, ay) = (a.0[0], a.0[1]);
        let vx_next = (1.0 - drag) * vx + DT * gain * ax;
        let vy_next = (1.0 - drag) * vy + DT * gain * ay;
        let x_next = x + DT * vx_next;
        let y_next = y + DT * vy_next;
        let reward = (x_next - x).max(0.0) - 0.05 * energy * (ax * ax + ay * ay);
        (State(vec![x_next, y_next, vx_next, vy_next]), reward)
    }
}
