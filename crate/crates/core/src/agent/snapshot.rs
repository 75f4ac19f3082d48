//! Flat export of a [`NetworkSet`] for checkpoints.

use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::NetworkSet;
use crate::error::{Error, Result};

/// Integer counters that do not fit the flat `f64` block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkCounters {
    pub updates: u64,
    pub policy_step: u64,
    pub q1_step: u64,
    pub q2_step: u64,
    pub alpha_step: u64,
}

impl NetworkSet {
    pub fn counters(&self) -> NetworkCounters {
        NetworkCounters {
            updates: self.updates,
            policy_step: self.policy_opt.step,
            q1_step: self.q1_opt.step,
            q2_step: self.q2_opt.step,
            alpha_step: self.alpha_opt.step,
        }
    }

    /// Every real-valued parameter and optimizer moment, in a fixed order:
    /// temperature state, the five networks, then the three Adam states.
    pub fn export_flat(&self) -> Vec<f64> {
        let mut out = vec![self.log_alpha, self.alpha_opt.m, self.alpha_opt.v];
        for net in [&self.policy, &self.q1, &self.q2, &self.q1_target, &self.q2_target] {
            out.extend(net.params_flat());
        }
        for opt in [&self.policy_opt, &self.q1_opt, &self.q2_opt] {
            out.extend(opt.m.flat());
            out.extend(opt.v.flat());
        }
        out
    }

    /// Inverse of [`NetworkSet::export_flat`] on a set with the same shape.
    pub fn import_flat(&mut self, values: &[f64], counters: NetworkCounters) -> Result<()> {
        let expected = self.export_flat().len();
        if values.len() != expected {
            return Err(Error::Format(format!(
                "network block has {} values, expected {expected}",
                values.len()
            )));
        }
        self.log_alpha = values[0];
        self.alpha_opt.m = values[1];
        self.alpha_opt.v = values[2];
        let mut at = 3;
        for net in [&mut self.policy, &mut self.q1, &mut self.q2, &mut self.q1_target, &mut self.q2_target] {
            let n = net.num_params();
            net.set_params_flat(&values[at..at + n])?;
            at += n;
        }
        for opt in [&mut self.policy_opt, &mut self.q1_opt, &mut self.q2_opt] {
            at = read_adam(opt, values, at)?;
        }
        self.updates = counters.updates;
        self.policy_opt.step = counters.policy_step;
        self.q1_opt.step = counters.q1_step;
        self.q2_opt.step = counters.q2_step;
        self.alpha_opt.step = counters.alpha_step;
        Ok(())
    }
}

fn read_adam(opt: &mut Adam, values: &[f64], mut at: usize) -> Result<usize> {
    for moments in [&mut opt.m, &mut opt.v] {
        let n = moments.flat().len();
        moments.set_flat(&values[at..at + n])?;
        at += n;
    }
    Ok(at)
}
