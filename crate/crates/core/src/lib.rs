//! Joint optimization of an agent's design parameters and its control
//! policy. A design-conditioned soft actor-critic learns `Q(s, a, design)`;
//! candidate designs are then scored by the learned critic instead of by
//! simulated rollouts.

pub mod agent;
pub mod analysis;
pub mod coadapt;
pub mod design_eval;
pub mod domain;
pub mod env;
pub mod error;
pub mod exp;
pub mod optim;
pub mod replay;

pub use domain::{Action, DesignSpace, DesignTransition, DesignVector, RngStream, State, StreamId, Transition};
pub use error::{Error, Result};
