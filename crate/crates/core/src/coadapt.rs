//! The outer design loop: train on a design for a scheduled number of
//! episodes, then pick the next design by exploitation or exploration.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentPair, SacConfig};
use crate::design_eval::{
    novelty_objective, q_objective, rollout_objective, select_exploration_design, ExplorationStrategy,
    ObjectiveContext, RolloutCounter, DEFAULT_NOVELTY_NEIGHBORS, DEFAULT_START_STATES,
};
use crate::domain::{DesignTransition, DesignVector, RngState, RngStream, StreamId};
use crate::env::{rollout, Environment};
use crate::error::{Error, Result};
use crate::optim::{CmaEs, DesignOptimizer, OptResult, PsoConfig};
use crate::replay::{
    IndividualBuffer, PopulationBuffer, StartStateBuffer, DEFAULT_INDIVIDUAL_CAPACITY, DEFAULT_POPULATION_CAPACITY,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// Exploit with the learned critic (no simulation during selection).
    QObjective,
    /// Exploit by simulating every candidate design.
    RolloutObjective,
    RandomOnly,
    /// One CMA-ES generation of rollout-scored candidates per design.
    EvoLoopCmaes,
}

impl RunMode {
    pub const ALL: [RunMode; 4] = [
        RunMode::QObjective,
        RunMode::RolloutObjective,
        RunMode::RandomOnly,
        RunMode::EvoLoopCmaes,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::QObjective => "q_objective",
            RunMode::RolloutObjective => "rollout_objective",
            RunMode::RandomOnly => "random_only",
            RunMode::EvoLoopCmaes => "evo_loop_cmaes",
        }
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RunMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(vec![format!("mode: unknown run mode `{s}`")]))
    }
}

/// How a design came to be trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Initial,
    Exploit,
    Explore,
    Baseline,
}

impl SelectionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionMode::Initial => "initial",
            SelectionMode::Exploit => "exploit",
            SelectionMode::Explore => "explore",
            SelectionMode::Baseline => "baseline",
        }
    }
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [SelectionMode::Initial, SelectionMode::Exploit, SelectionMode::Explore, SelectionMode::Baseline]
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Format(format!("unknown selection mode `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub n_initial_designs: usize,
    pub episodes_initial: usize,
    pub episodes_later: usize,
    pub max_designs: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            n_initial_designs: 5,
            episodes_initial: 30,
            episodes_later: 10,
            max_designs: 20,
        }
    }
}

impl Schedule {
    /// Episodes for the design at 1-based `index`.
    pub fn episodes_for(&self, index: usize) -> usize {
        if index <= self.n_initial_designs {
            self.episodes_initial
        } else {
            self.episodes_later
        }
    }

    pub fn total_episodes(&self) -> usize {
        (1..=self.max_designs).map(|i| self.episodes_for(i)).sum()
    }

    /// Selection label of the design at 1-based `index` in the proposed
    /// modes: the first design after the initial block is exploited, then
    /// exploit and explore alternate.
    pub fn parity_mode(&self, index: usize) -> SelectionMode {
        if index <= self.n_initial_designs {
            SelectionMode::Initial
        } else if (index - self.n_initial_designs) % 2 == 1 {
            SelectionMode::Exploit
        } else {
            SelectionMode::Explore
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoadaptConfig {
    pub mode: RunMode,
    pub schedule: Schedule,
    pub sac: SacConfig,
    /// Maximizer of the critic objective; also drives novelty search.
    pub exploit_optimizer: DesignOptimizer,
    /// Maximizer of the rollout objective.
    pub rollout_optimizer: DesignOptimizer,
    pub rollout_episodes: usize,
    pub start_states: usize,
    pub exploration: ExplorationStrategy,
    pub novelty_neighbors: usize,
    pub evo_population: usize,
    pub population_only: bool,
    pub population_capacity: usize,
    pub individual_capacity: usize,
    /// Seed of the random initial designs. Defaults to the run seed, so
    /// every mode sees the same initial designs for a given seed.
    pub initial_design_seed: Option<u64>,
}

impl Default for CoadaptConfig {
    fn default() -> Self {
        Self {
            mode: RunMode::QObjective,
            schedule: Schedule::default(),
            sac: SacConfig::default(),
            exploit_optimizer: DesignOptimizer::Pso(PsoConfig::default()),
            rollout_optimizer: DesignOptimizer::Pso(PsoConfig::with_budget(35, 30)),
            rollout_episodes: 1,
            start_states: DEFAULT_START_STATES,
            exploration: ExplorationStrategy::Random,
            novelty_neighbors: DEFAULT_NOVELTY_NEIGHBORS,
            evo_population: 9,
            population_only: false,
            population_capacity: DEFAULT_POPULATION_CAPACITY,
            individual_capacity: DEFAULT_INDIVIDUAL_CAPACITY,
            initial_design_seed: None,
        }
    }
}

impl CoadaptConfig {
    pub fn validate(&self, errors: &mut Vec<String>) {
        let s = &self.schedule;
        for (key, v) in [
            ("schedule.n_initial_designs", s.n_initial_designs),
            ("schedule.episodes_initial", s.episodes_initial),
            ("schedule.episodes_later", s.episodes_later),
            ("schedule.max_designs", s.max_designs),
            ("design_opt.start_states", self.start_states),
            ("design_opt.rollout_episodes", self.rollout_episodes),
            ("exploration.neighbors", self.novelty_neighbors),
            ("replay.population_capacity", self.population_capacity),
            ("replay.individual_capacity", self.individual_capacity),
        ] {
            if v == 0 {
                errors.push(format!("{key}: must be > 0"));
            }
        }
        if self.evo_population < 4 {
            errors.push("evo.population: must be >= 4".into());
        }
        self.sac.validate(errors);
    }
}

/// Outcome of training on one design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoadaptRecord {
    /// 1-based.
    pub design_index: usize,
    pub design: DesignVector,
    pub mode: SelectionMode,
    pub returns: Vec<f64>,
    pub best_return: f64,
    /// Objective value the selector assigned to this design, if any.
    pub objective_value: Option<f64>,
    /// Objective evaluations spent selecting this design.
    pub evaluations: usize,
    /// Simulated episodes spent selecting this design.
    pub selection_rollouts: u64,
    /// The design equals one trained on earlier.
    pub duplicate: bool,
    /// Simulated episodes so far, after this design's training.
    pub cumulative_rollouts: u64,
}

/// A selected design waiting to be trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingDesign {
    pub design: DesignVector,
    pub mode: SelectionMode,
    pub objective_value: Option<f64>,
    pub evaluations: usize,
    pub selection_rollouts: u64,
}

impl PendingDesign {
    fn plain(design: DesignVector, mode: SelectionMode) -> Self {
        Self { design, mode, objective_value: None, evaluations: 0, selection_rollouts: 0 }
    }
}

/// The run's independent random streams.
#[derive(Debug, Clone)]
pub struct Streams {
    pub env: RngStream,
    pub policy: RngStream,
    pub replay: RngStream,
    pub optimizer: RngStream,
    pub exploration: RngStream,
    pub evaluation: RngStream,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamStates {
    pub env: RngState,
    pub policy: RngState,
    pub replay: RngState,
    pub optimizer: RngState,
    pub exploration: RngState,
    pub evaluation: RngState,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self {
            env: RngStream::named(seed, StreamId::Env),
            policy: RngStream::named(seed, StreamId::Policy),
            replay: RngStream::named(seed, StreamId::Replay),
            optimizer: RngStream::named(seed, StreamId::Optimizer),
            exploration: RngStream::named(seed, StreamId::Exploration),
            evaluation: RngStream::named(seed, StreamId::Evaluation),
        }
    }

    pub fn states(&self) -> StreamStates {
        StreamStates {
            env: self.env.state(),
            policy: self.policy.state(),
            replay: self.replay.state(),
            optimizer: self.optimizer.state(),
            exploration: self.exploration.state(),
            evaluation: self.evaluation.state(),
        }
    }

    pub fn from_states(s: &StreamStates) -> Result<Self> {
        Ok(Self {
            env: RngStream::from_state(&s.env)?,
            policy: RngStream::from_state(&s.policy)?,
            replay: RngStream::from_state(&s.replay)?,
            optimizer: RngStream::from_state(&s.optimizer)?,
            exploration: RngStream::from_state(&s.exploration)?,
            evaluation: RngStream::from_state(&s.evaluation)?,
        })
    }
}

/// Per-episode progress, reported to a [`RunObserver`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeEvent {
    pub design_index: usize,
    pub mode: SelectionMode,
    /// 1-based within the design.
    pub episode: usize,
    pub episode_return: f64,
    pub cumulative_rollouts: u64,
}

/// Hooks for logging and checkpointing.
pub trait RunObserver {
    fn on_episode(&mut self, _event: &EpisodeEvent) -> Result<()> {
        Ok(())
    }

    /// Called after a design's training and the selection of its successor.
    fn on_design_complete(&mut self, _run: &Coadapt) -> Result<()> {
        Ok(())
    }
}

/// Observer that ignores everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoopObserver;

impl RunObserver for NoopObserver {}

/// The original design followed by uniform samples drawn from
/// `design_seed`.
pub fn initial_designs(env: &dyn Environment, n: usize, design_seed: u64) -> Vec<DesignVector> {
    let space = &env.spec().design_space;
    let mut rng = RngStream::named(design_seed, StreamId::InitialDesigns);
    let mut out = Vec::with_capacity(n);
    if n > 0 {
        out.push(env.original_design());
    }
    while out.len() < n {
        out.push(space.sample_uniform(&mut rng));
    }
    out
}

/// Full state of a co-adaptation run, resumable at design boundaries.
pub struct Coadapt {
    pub config: CoadaptConfig,
    pub env: Box<dyn Environment>,
    pub seed: u64,
    pub agents: AgentPair,
    pub population_buffer: PopulationBuffer,
    pub start_states: StartStateBuffer,
    pub streams: Streams,
    pub rollouts: RolloutCounter,
    pub records: Vec<CoadaptRecord>,
    pub initial: Vec<DesignVector>,
    pub pending: Option<PendingDesign>,
    pub cma: Option<CmaEs>,
}

impl fmt::Debug for Coadapt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Coadapt")
            .field("env", &self.env.id())
            .field("mode", &self.config.mode)
            .field("seed", &self.seed)
            .field("designs_done", &self.records.len())
            .field("rollouts", &self.rollouts.get())
            .finish()
    }
}

impl Coadapt {
    pub fn new(config: CoadaptConfig, env: Box<dyn Environment>, seed: u64) -> Result<Self> {
        let mut errors = Vec::new();
        config.validate(&mut errors);
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        let spec = env.spec().clone();
        let agents = AgentPair::new(
            config.sac.clone(),
            spec.state_dim,
            spec.action_dim,
            spec.design_space.clone(),
            &mut RngStream::named(seed, StreamId::Init),
        );
        let design_seed = config.initial_design_seed.unwrap_or(seed);
        let initial = initial_designs(env.as_ref(), config.schedule.n_initial_designs, design_seed);
        let pending = Some(PendingDesign::plain(initial[0].clone(), SelectionMode::Initial));
        Ok(Self {
            population_buffer: PopulationBuffer::new(config.population_capacity),
            start_states: StartStateBuffer::new(),
            streams: Streams::new(seed),
            rollouts: RolloutCounter::default(),
            records: Vec::new(),
            cma: None,
            config,
            env,
            seed,
            agents,
            initial,
            pending,
        })
    }

    pub fn is_finished(&self) -> bool {
        self.records.len() >= self.config.schedule.max_designs
    }

    /// Runs every remaining design.
    pub fn run(&mut self, observer: &mut dyn RunObserver) -> Result<Vec<CoadaptRecord>> {
        while !self.is_finished() {
            self.step_design(observer)?;
        }
        Ok(self.records.clone())
    }

    /// Trains on the pending design, then selects the next one unless the
    /// schedule is exhausted.
    pub fn step_design(&mut self, observer: &mut dyn RunObserver) -> Result<()> {
        let pending = self
            .pending
            .take()
            .ok_or_else(|| Error::Domain("no pending design; the run is finished".into()))?;
        let index = self.records.len() + 1;
        let episodes = self.config.schedule.episodes_for(index);
        let duplicate = self.records.iter().any(|r| r.design == pending.design);
        if duplicate {
            log::info!("design {index} repeats an earlier design {:?}", pending.design.0);
        }

        let mut individual = IndividualBuffer::new(self.config.individual_capacity);
        self.agents.clone_population_to_individual();
        let mut returns = Vec::with_capacity(episodes);
        for episode in 1..=episodes {
            let ret = run_training_episode(
                self.env.as_ref(),
                &pending.design,
                &mut self.agents,
                &mut individual,
                &mut self.population_buffer,
                &mut self.start_states,
                &mut self.streams,
                self.config.population_only,
            )?;
            self.rollouts.add(1);
            returns.push(ret);
            observer.on_episode(&EpisodeEvent {
                design_index: index,
                mode: pending.mode,
                episode,
                episode_return: ret,
                cumulative_rollouts: self.rollouts.get(),
            })?;
        }

        let best_return = returns.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        self.records.push(CoadaptRecord {
            design_index: index,
            design: pending.design,
            mode: pending.mode,
            returns,
            best_return,
            objective_value: pending.objective_value,
            evaluations: pending.evaluations,
            selection_rollouts: pending.selection_rollouts,
            duplicate,
            cumulative_rollouts: self.rollouts.get(),
        });
        if !self.is_finished() {
            self.pending = Some(self.select(index + 1)?);
        }
        observer.on_design_complete(self)
    }

    /// Chooses the design at 1-based `index`.
    fn select(&mut self, index: usize) -> Result<PendingDesign> {
        if index <= self.config.schedule.n_initial_designs {
            return Ok(PendingDesign::plain(self.initial[index - 1].clone(), SelectionMode::Initial));
        }
        let space = self.env.spec().design_space.clone();
        match self.config.mode {
            RunMode::RandomOnly => Ok(PendingDesign::plain(
                space.sample_uniform(&mut self.streams.exploration),
                SelectionMode::Baseline,
            )),
            RunMode::EvoLoopCmaes => self.evo_generation(),
            RunMode::QObjective | RunMode::RolloutObjective => match self.config.schedule.parity_mode(index) {
                SelectionMode::Exploit => self.exploit(),
                _ => {
                    let evaluated: Vec<DesignVector> = self.records.iter().map(|r| r.design.clone()).collect();
                    let design = select_exploration_design(
                        self.config.exploration,
                        &space,
                        &evaluated,
                        self.config.novelty_neighbors,
                        &self.config.exploit_optimizer,
                        &mut self.streams.exploration,
                    );
                    let novelty = novelty_objective(&design, &evaluated, self.config.novelty_neighbors).ok();
                    let mut p = PendingDesign::plain(design, SelectionMode::Explore);
                    if self.config.exploration == ExplorationStrategy::Novelty {
                        p.objective_value = novelty;
                    }
                    Ok(p)
                }
            },
        }
    }

    fn exploit(&mut self) -> Result<PendingDesign> {
        let space = self.env.spec().design_space.clone();
        let before = self.rollouts.get();
        let mut failure: Option<Error> = None;
        let networks = self.agents.acting(true);
        let outcome: Result<OptResult> = match self.config.mode {
            RunMode::QObjective => {
                let batch = self
                    .start_states
                    .sample_start_states(self.config.start_states, &mut self.streams.optimizer)?;
                let ctx = ObjectiveContext::new(networks, &batch)?;
                self.config.exploit_optimizer.maximize(
                    |x| capture(q_objective(x, &ctx), &mut failure),
                    &space,
                    &mut self.streams.optimizer,
                )
            }
            _ => {
                let env = self.env.as_ref();
                let eval_rng = &mut self.streams.evaluation;
                let counter = &self.rollouts;
                let n = self.config.rollout_episodes;
                self.config.rollout_optimizer.maximize(
                    |x| capture(rollout_objective(x, env, networks, n, eval_rng, counter), &mut failure),
                    &space,
                    &mut self.streams.optimizer,
                )
            }
        };
        if let Some(e) = failure {
            return Err(e);
        }
        let used = self.rollouts.get() - before;
        match outcome {
            Ok(r) => Ok(PendingDesign {
                design: r.best_design,
                mode: SelectionMode::Exploit,
                objective_value: Some(r.best_value),
                evaluations: r.evaluations,
                selection_rollouts: used,
            }),
            Err(e) => {
                log::warn!("design optimization failed ({e}); sampling uniformly");
                let mut p = PendingDesign::plain(space.sample_uniform(&mut self.streams.exploration), SelectionMode::Exploit);
                p.selection_rollouts = used;
                Ok(p)
            }
        }
    }

    fn evo_generation(&mut self) -> Result<PendingDesign> {
        let space = self.env.spec().design_space.clone();
        if self.cma.is_none() {
            self.cma = Some(CmaEs::new(&space, self.config.evo_population)?);
        }
        let cma = self.cma.as_mut().expect("initialized above");
        let candidates = cma.ask(&space, &mut self.streams.optimizer)?;
        let before = self.rollouts.get();
        let networks = self.agents.acting(true);
        let values = candidates
            .iter()
            .map(|c| {
                rollout_objective(
                    c,
                    self.env.as_ref(),
                    networks,
                    self.config.rollout_episodes,
                    &mut self.streams.evaluation,
                    &self.rollouts,
                )
            })
            .collect::<Result<Vec<f64>>>()?;
        cma.tell(&candidates, &values)?;
        let best = (0..values.len())
            .max_by(|&a, &b| values[a].total_cmp(&values[b]))
            .expect("lambda >= 4");
        Ok(PendingDesign {
            design: candidates[best].clone(),
            mode: SelectionMode::Baseline,
            objective_value: Some(values[best]),
            evaluations: candidates.len(),
            selection_rollouts: self.rollouts.get() - before,
        })
    }
}

fn capture(value: Result<f64>, failure: &mut Option<Error>) -> f64 {
    match value {
        Ok(v) => v,
        Err(e) => {
            if failure.is_none() {
                *failure = Some(e);
            }
            f64::NAN
        }
    }
}

/// One stochastic episode on `design`, stored in all three buffers,
/// followed by the per-episode network updates. Returns the episode return.
#[allow(clippy::too_many_arguments)]
pub fn run_training_episode(
    env: &dyn Environment,
    design: &DesignVector,
    agents: &mut AgentPair,
    individual: &mut IndividualBuffer,
    population: &mut PopulationBuffer,
    start_states: &mut StartStateBuffer,
    streams: &mut Streams,
    population_only: bool,
) -> Result<f64> {
    let acting = agents.acting(population_only);
    let policy_rng = &mut streams.policy;
    let episode = rollout(env, design, &mut streams.env, |s| acting.act(s, design, true, policy_rng))?;
    start_states.push(episode.start.clone(), design.clone());
    for t in episode.transitions {
        individual.push(t.clone());
        population.push(DesignTransition { transition: t, design: design.clone() });
    }
    agents.train_for_episode(individual, population, design, population_only, &mut streams.replay)?;
    Ok(episode.episode_return)
}

/// Trains a fresh agent pair on one fixed design. `after_episode` sees the
/// 1-based episode number, its return and the agents.
pub fn train_on_design<F>(
    sac: SacConfig,
    env: &dyn Environment,
    design: &DesignVector,
    episodes: usize,
    seed: u64,
    mut after_episode: F,
) -> Result<AgentPair>
where
    F: FnMut(usize, f64, &AgentPair) -> Result<()>,
{
    env.check_design(design)?;
    let spec = env.spec();
    let mut agents = AgentPair::new(
        sac,
        spec.state_dim,
        spec.action_dim,
        spec.design_space.clone(),
        &mut RngStream::named(seed, StreamId::Init),
    );
    let mut streams = Streams::new(seed);
    let mut individual = IndividualBuffer::new(DEFAULT_INDIVIDUAL_CAPACITY);
    let mut population = PopulationBuffer::new(DEFAULT_POPULATION_CAPACITY);
    let mut start_states = StartStateBuffer::new();
    for episode in 1..=episodes {
        let ret = run_training_episode(
            env,
            design,
            &mut agents,
            &mut individual,
            &mut population,
            &mut start_states,
            &mut streams,
            false,
        )?;
        after_episode(episode, ret, &agents)?;
    }
    Ok(agents)
}

/// Return of one deterministic episode under `agents`' acting networks.
pub fn evaluate_deterministic(
    env: &dyn Environment,
    agents: &AgentPair,
    design: &DesignVector,
    population_only: bool,
    rng: &mut RngStream,
) -> Result<f64> {
    let net = agents.acting(population_only);
    let mut unused = RngStream::new(0, 0);
    Ok(rollout(env, design, rng, |s| net.act(s, design, false, &mut unused))?.episode_return)
}
