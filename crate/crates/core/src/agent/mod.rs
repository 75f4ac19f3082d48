//! Design-conditioned actor-critic agents and the population/individual
//! two-tier training scheme.

pub mod adam;
pub mod mlp;
pub mod sac;
pub mod snapshot;
pub mod squash;

pub use mlp::Mlp;
pub use sac::{Batch, Losses, NetworkSet, SacConfig};
pub use snapshot::NetworkCounters;

use crate::domain::{DesignSpace, DesignVector, RngStream};
use crate::error::Result;
use crate::replay::{sample_mixed, IndividualBuffer, PopulationBuffer};

/// Population networks (trained on every design's experience) and the
/// individual copy specialized to the current design.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentPair {
    pub population: NetworkSet,
    pub individual: NetworkSet,
}

/// Update counts performed by one [`AgentPair::train_for_episode`] call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct UpdateCounts {
    pub individual: usize,
    pub population: usize,
}

impl AgentPair {
    pub fn new(
        cfg: SacConfig,
        state_dim: usize,
        action_dim: usize,
        design_space: DesignSpace,
        rng: &mut RngStream,
    ) -> Self {
        let population = NetworkSet::new(cfg, state_dim, action_dim, design_space, rng);
        Self {
            individual: population.clone(),
            population,
        }
    }

    /// Resets the individual networks (parameters, targets, temperature and
    /// optimizer state) to the population networks.
    pub fn clone_population_to_individual(&mut self) {
        self.individual.clone_from(&self.population);
    }

    /// The network set used to act and for design evaluation.
    pub fn acting(&self, population_only: bool) -> &NetworkSet {
        if population_only {
            &self.population
        } else {
            &self.individual
        }
    }

    /// Per-episode training: `updates_individual` steps on mixed batches for
    /// the individual networks and `updates_population` steps on pure
    /// population batches for the population networks.
    ///
    /// With `population_only`, only the population networks are trained,
    /// for `updates_individual` steps.
    pub fn train_for_episode(
        &mut self,
        ind: &IndividualBuffer,
        pop: &PopulationBuffer,
        current: &DesignVector,
        population_only: bool,
        rng: &mut RngStream,
    ) -> Result<UpdateCounts> {
        let cfg = self.population.cfg.clone();
        let space = self.population.design_space.clone();
        let mut counts = UpdateCounts::default();
        if population_only {
            for _ in 0..cfg.updates_individual {
                let items = sample_mixed(ind, pop, current, cfg.batch_size, 1.0, rng)?;
                self.population.update(&Batch::from_transitions(&items, &space)?, rng)?;
                counts.population += 1;
            }
            return Ok(counts);
        }
        for _ in 0..cfg.updates_individual {
            let items = sample_mixed(ind, pop, current, cfg.batch_size, cfg.population_fraction, rng)?;
            self.individual.update(&Batch::from_transitions(&items, &space)?, rng)?;
            counts.individual += 1;
        }
        for _ in 0..cfg.updates_population {
            let items = sample_mixed(ind, pop, current, cfg.batch_size, 1.0, rng)?;
            self.population.update(&Batch::from_transitions(&items, &space)?, rng)?;
            counts.population += 1;
        }
        Ok(counts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Action, DesignTransition, State, Transition};

    fn pair(updates: (usize, usize)) -> AgentPair {
        let cfg = SacConfig {
            hidden: vec![8],
            batch_size: 16,
            updates_individual: updates.0,
            updates_population: updates.1,
            ..SacConfig::default()
        };
        AgentPair::new(cfg, 2, 1, DesignSpace::uniform(2, 0.5, 2.0).unwrap(), &mut RngStream::new(0, 0))
    }

    fn t(x: f64) -> Transition {
        Transition {
            s: State(vec![x, 0.0]),
            a: Action(vec![0.5]),
            r: 0.1,
            s_next: State(vec![x + 0.1, 0.0]),
            done: false,
        }
    }

    fn buffers() -> (IndividualBuffer, PopulationBuffer) {
        let mut ind = IndividualBuffer::new(100);
        let mut pop = PopulationBuffer::new(100);
        for i in 0..10 {
            ind.push(t(i as f64));
            pop.push(DesignTransition { transition: t(i as f64), design: DesignVector(vec![1.5, 0.7]) });
        }
        (ind, pop)
    }

    #[test]
    fn clone_syncs_individual() {
        let mut p = pair((3, 2));
        let (ind, pop) = buffers();
        let d = DesignVector(vec![1.0, 1.0]);
        let mut rng = RngStream::new(1, 0);
        p.train_for_episode(&ind, &pop, &d, false, &mut rng).unwrap();
        assert_ne!(p.individual.policy, p.population.policy);
        p.clone_population_to_individual();
        assert_eq!(p.individual, p.population);
        let s = State(vec![0.2, -0.1]);
        let a_ind = p.individual.act(&s, &d, false, &mut rng).unwrap();
        let a_pop = p.population.act(&s, &d, false, &mut rng).unwrap();
        assert_eq!(a_ind, a_pop);
        p.clone_population_to_individual();
        assert_eq!(p.individual, p.population);
    }

    #[test]
    fn individual_update_leaves_population_untouched() {
        let mut p = pair((1, 0));
        let before = p.population.clone();
        let (ind, pop) = buffers();
        p.train_for_episode(&ind, &pop, &DesignVector(vec![1.0, 1.0]), false, &mut RngStream::new(2, 0))
            .unwrap();
        assert_eq!(p.population, before);
        assert_eq!(p.individual.updates, 1);
    }

    #[test]
    fn update_counts_follow_config() {
        let mut p = pair((10, 5));
        let (ind, pop) = buffers();
        let c = p
            .train_for_episode(&ind, &pop, &DesignVector(vec![1.0, 1.0]), false, &mut RngStream::new(3, 0))
            .unwrap();
        assert_eq!(c, UpdateCounts { individual: 10, population: 5 });
        assert_eq!((p.individual.updates, p.population.updates), (10, 5));
    }

    #[test]
    fn default_counts_are_1000_and_250() {
        let cfg = SacConfig::default();
        assert_eq!((cfg.updates_individual, cfg.updates_population), (1000, 250));
        assert_eq!(cfg.batch_size, 256);
        assert_eq!(cfg.hidden, vec![200, 200, 200]);
    }

    #[test]
    fn population_only_trains_single_set() {
        let mut p = pair((4, 2));
        let ind_before = p.individual.clone();
        let (ind, pop) = buffers();
        let c = p
            .train_for_episode(&ind, &pop, &DesignVector(vec![1.0, 1.0]), true, &mut RngStream::new(3, 0))
            .unwrap();
        assert_eq!(c, UpdateCounts { individual: 0, population: 4 });
        assert_eq!(p.individual, ind_before);
    }

    #[test]
    fn empty_population_buffer_falls_back_to_individual() {
        let mut p = pair((2, 0));
        let (ind, _) = buffers();
        let empty = PopulationBuffer::new(10);
        p.train_for_episode(&ind, &empty, &DesignVector(vec![1.0, 1.0]), false, &mut RngStream::new(3, 0))
            .unwrap();
        assert_eq!(p.individual.updates, 2);
    }
}
