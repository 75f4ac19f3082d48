//! Run configuration as a flat `dotted.key = value` TOML file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use toml::Value;

use crate::agent::SacConfig;
use crate::coadapt::{CoadaptConfig, RunMode, Schedule};
use crate::design_eval::ExplorationStrategy;
use crate::env::EnvRegistry;
use crate::error::{Error, Result};
use crate::optim::{DesignOptimizer, PsoConfig};
use crate::replay::{DEFAULT_INDIVIDUAL_CAPACITY, DEFAULT_POPULATION_CAPACITY};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Pso,
    CmaEs,
}

impl OptimizerKind {
    fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Pso => "pso",
            OptimizerKind::CmaEs => "cmaes",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: String,
    pub mode: RunMode,
    /// Number of seeds; seeds run from `seed_offset` upwards.
    pub seeds: usize,
    pub seed_offset: u64,
    pub output_dir: PathBuf,
    pub population_only: bool,
    pub schedule: Schedule,
    pub initial_design_seed: Option<u64>,
    pub sac: SacConfig,
    pub population_capacity: usize,
    pub individual_capacity: usize,
    pub optimizer: OptimizerKind,
    pub particles: usize,
    pub iterations: usize,
    pub pso: PsoConfig,
    pub start_states: usize,
    pub rollout_particles: usize,
    pub rollout_iterations: usize,
    pub rollout_episodes: usize,
    pub exploration: ExplorationStrategy,
    pub neighbors: usize,
    pub evo_population: usize,
    pub checkpoint_buffers: bool,
    /// Checkpoint after every this many designs (and always at the end).
    pub checkpoint_every: usize,
}

impl RunConfig {
    pub fn new(env: &str) -> Self {
        let c = CoadaptConfig::default();
        Self {
            env: env.to_string(),
            mode: RunMode::QObjective,
            seeds: 5,
            seed_offset: 0,
            output_dir: PathBuf::from("runs"),
            population_only: false,
            schedule: Schedule::default(),
            initial_design_seed: None,
            sac: SacConfig::default(),
            population_capacity: DEFAULT_POPULATION_CAPACITY,
            individual_capacity: DEFAULT_INDIVIDUAL_CAPACITY,
            optimizer: OptimizerKind::Pso,
            particles: 700,
            iterations: 250,
            pso: PsoConfig::default(),
            start_states: c.start_states,
            rollout_particles: 35,
            rollout_iterations: 30,
            rollout_episodes: 1,
            exploration: ExplorationStrategy::Random,
            neighbors: c.novelty_neighbors,
            evo_population: 9,
            checkpoint_buffers: false,
            checkpoint_every: 1,
        }
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|k| self.seed_offset + k).collect()
    }

    fn optimizer_with(&self, particles: usize, iterations: usize) -> DesignOptimizer {
        match self.optimizer {
            OptimizerKind::Pso => DesignOptimizer::Pso(PsoConfig { n_particles: particles, n_iterations: iterations, ..self.pso.clone() }),
            OptimizerKind::CmaEs => DesignOptimizer::CmaEs { population: particles, iterations },
        }
    }

    pub fn coadapt_config(&self) -> CoadaptConfig {
        CoadaptConfig {
            mode: self.mode,
            schedule: self.schedule.clone(),
            sac: self.sac.clone(),
            exploit_optimizer: self.optimizer_with(self.particles, self.iterations),
            rollout_optimizer: self.optimizer_with(self.rollout_particles, self.rollout_iterations),
            rollout_episodes: self.rollout_episodes,
            start_states: self.start_states,
            exploration: self.exploration,
            novelty_neighbors: self.neighbors,
            evo_population: self.evo_population,
            population_only: self.population_only,
            population_capacity: self.population_capacity,
            individual_capacity: self.individual_capacity,
            initial_design_seed: self.initial_design_seed,
        }
    }

    /// Every key with its value, in file order. Optional keys appear only
    /// when set.
    pub fn to_flat(&self) -> Vec<(&'static str, Value)> {
        let int = |v: usize| Value::Integer(v as i64);
        let s = &self.sac;
        let mut out = vec![
            ("env", Value::String(self.env.clone())),
            ("mode", Value::String(self.mode.as_str().into())),
            ("seeds", int(self.seeds)),
            ("seed_offset", Value::Integer(self.seed_offset as i64)),
            ("output_dir", Value::String(self.output_dir.to_string_lossy().into_owned())),
            ("population_only", Value::Boolean(self.population_only)),
            ("schedule.n_initial_designs", int(self.schedule.n_initial_designs)),
            ("schedule.episodes_initial", int(self.schedule.episodes_initial)),
            ("schedule.episodes_later", int(self.schedule.episodes_later)),
            ("schedule.max_designs", int(self.schedule.max_designs)),
        ];
        if let Some(seed) = self.initial_design_seed {
            out.push(("schedule.initial_design_seed", Value::Integer(seed as i64)));
        }
        out.extend([
            ("sac.hidden", Value::Array(s.hidden.iter().map(|&h| int(h)).collect())),
            ("sac.learning_rate", Value::Float(s.learning_rate)),
            ("sac.gamma", Value::Float(s.gamma)),
            ("sac.tau", Value::Float(s.tau)),
            ("sac.twin_critics", Value::Boolean(s.twin_critics)),
            ("sac.auto_entropy", Value::Boolean(s.auto_entropy)),
            ("sac.initial_alpha", Value::Float(s.initial_alpha)),
        ]);
        if let Some(t) = s.target_entropy {
            out.push(("sac.target_entropy", Value::Float(t)));
        }
        out.extend([
            ("sac.batch_size", int(s.batch_size)),
            ("sac.updates_individual", int(s.updates_individual)),
            ("sac.updates_population", int(s.updates_population)),
            ("sac.population_fraction", Value::Float(s.population_fraction)),
            ("replay.population_capacity", int(self.population_capacity)),
            ("replay.individual_capacity", int(self.individual_capacity)),
            ("design_opt.optimizer", Value::String(self.optimizer.as_str().into())),
            ("design_opt.particles", int(self.particles)),
            ("design_opt.iterations", int(self.iterations)),
            ("design_opt.start_states", int(self.start_states)),
            ("design_opt.rollout_particles", int(self.rollout_particles)),
            ("design_opt.rollout_iterations", int(self.rollout_iterations)),
            ("design_opt.rollout_episodes", int(self.rollout_episodes)),
            ("pso.inertia", Value::Float(self.pso.inertia)),
            ("pso.cognitive", Value::Float(self.pso.cognitive)),
            ("pso.social", Value::Float(self.pso.social)),
            ("pso.velocity_clamp", Value::Float(self.pso.velocity_clamp)),
            ("exploration.strategy", Value::String(exploration_str(self.exploration).into())),
            ("exploration.neighbors", int(self.neighbors)),
            ("evo.population", int(self.evo_population)),
            ("checkpoint.buffers", Value::Boolean(self.checkpoint_buffers)),
            ("checkpoint.every", int(self.checkpoint_every)),
        ]);
        out
    }

    /// Canonical file text: one `key = value` line per setting.
    pub fn to_toml_string(&self) -> String {
        self.to_flat().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of the canonical text.
    pub fn digest(&self) -> String {
        hex(&Sha256::digest(self.to_toml_string().as_bytes()))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parses `text` and applies `key=value` overrides on top.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(vec![format!("parse error: {}", e.message())]))?;
        let mut flat = BTreeMap::new();
        flatten("", table, &mut flat);
        for o in overrides {
            let (k, v) = parse_override(o)?;
            flat.insert(k, v);
        }
        Self::from_flat(flat)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn from_flat(mut flat: BTreeMap<String, Value>) -> Result<Self> {
        let mut errors = Vec::new();
        let env = match flat.remove("env") {
            Some(Value::String(s)) if !s.is_empty() => s,
            Some(_) => {
                errors.push("env: expected a non-empty string".to_string());
                String::new()
            }
            None => {
                errors.push("env: missing required key".to_string());
                String::new()
            }
        };
        let mut c = Self::new(&env);
        for (key, value) in flat {
            if let Err(msg) = c.apply(&key, value) {
                errors.push(format!("{key}: {msg}"));
            }
        }
        c.validate_into(&mut errors);
        if errors.is_empty() {
            Ok(c)
        } else {
            Err(Error::Config(errors))
        }
    }

    fn apply(&mut self, key: &str, v: Value) -> std::result::Result<(), String> {
        match key {
            "mode" => self.mode = string(&v)?.parse().map_err(|_| format!("unknown run mode `{}`", string(&v).unwrap_or_default()))?,
            "seeds" => self.seeds = uint(&v)?,
            "seed_offset" => self.seed_offset = uint(&v)? as u64,
            "output_dir" => self.output_dir = PathBuf::from(string(&v)?),
            "population_only" => self.population_only = boolean(&v)?,
            "schedule.n_initial_designs" => self.schedule.n_initial_designs = uint(&v)?,
            "schedule.episodes_initial" => self.schedule.episodes_initial = uint(&v)?,
            "schedule.episodes_later" => self.schedule.episodes_later = uint(&v)?,
            "schedule.max_designs" => self.schedule.max_designs = uint(&v)?,
            "schedule.initial_design_seed" => self.initial_design_seed = Some(uint(&v)? as u64),
            "sac.hidden" => {
                self.sac.hidden = match &v {
                    Value::Array(items) => items.iter().map(uint).collect::<std::result::Result<_, _>>()?,
                    _ => return Err("expected an array of integers".into()),
                }
            }
            "sac.learning_rate" => self.sac.learning_rate = float(&v)?,
            "sac.gamma" => self.sac.gamma = float(&v)?,
            "sac.tau" => self.sac.tau = float(&v)?,
            "sac.twin_critics" => self.sac.twin_critics = boolean(&v)?,
            "sac.auto_entropy" => self.sac.auto_entropy = boolean(&v)?,
            "sac.initial_alpha" => self.sac.initial_alpha = float(&v)?,
            "sac.target_entropy" => self.sac.target_entropy = Some(float(&v)?),
            "sac.batch_size" => self.sac.batch_size = uint(&v)?,
            "sac.updates_individual" => self.sac.updates_individual = uint(&v)?,
            "sac.updates_population" => self.sac.updates_population = uint(&v)?,
            "sac.population_fraction" => self.sac.population_fraction = float(&v)?,
            "replay.population_capacity" => self.population_capacity = uint(&v)?,
            "replay.individual_capacity" => self.individual_capacity = uint(&v)?,
            "design_opt.optimizer" => {
                self.optimizer = match string(&v)?.as_str() {
                    "pso" => OptimizerKind::Pso,
                    "cmaes" => OptimizerKind::CmaEs,
                    other => return Err(format!("unknown optimizer `{other}` (pso|cmaes)")),
                }
            }
            "design_opt.particles" => self.particles = uint(&v)?,
            "design_opt.iterations" => self.iterations = uint(&v)?,
            "design_opt.start_states" => self.start_states = uint(&v)?,
            "design_opt.rollout_particles" => self.rollout_particles = uint(&v)?,
            "design_opt.rollout_iterations" => self.rollout_iterations = uint(&v)?,
            "design_opt.rollout_episodes" => self.rollout_episodes = uint(&v)?,
            "pso.inertia" => self.pso.inertia = float(&v)?,
            "pso.cognitive" => self.pso.cognitive = float(&v)?,
            "pso.social" => self.pso.social = float(&v)?,
            "pso.velocity_clamp" => self.pso.velocity_clamp = float(&v)?,
            "exploration.strategy" => {
                self.exploration = match string(&v)?.as_str() {
                    "random" => ExplorationStrategy::Random,
                    "novelty" => ExplorationStrategy::Novelty,
                    other => return Err(format!("unknown strategy `{other}` (random|novelty)")),
                }
            }
            "exploration.neighbors" => self.neighbors = uint(&v)?,
            "evo.population" => self.evo_population = uint(&v)?,
            "checkpoint.buffers" => self.checkpoint_buffers = boolean(&v)?,
            "checkpoint.every" => self.checkpoint_every = uint(&v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    fn validate_into(&self, errors: &mut Vec<String>) {
        if self.seeds == 0 {
            errors.push("seeds: must be > 0".into());
        }
        if self.checkpoint_every == 0 {
            errors.push("checkpoint.every: must be > 0".into());
        }
        let min_particles = match self.optimizer {
            OptimizerKind::Pso => 2,
            OptimizerKind::CmaEs => 4,
        };
        for (key, v, min) in [
            ("design_opt.particles", self.particles, min_particles),
            ("design_opt.rollout_particles", self.rollout_particles, min_particles),
            ("design_opt.iterations", self.iterations, 1),
            ("design_opt.rollout_iterations", self.rollout_iterations, 1),
        ] {
            if v < min {
                errors.push(format!("{key}: must be >= {min}"));
            }
        }
        if !(self.pso.velocity_clamp > 0.0) {
            errors.push("pso.velocity_clamp: must be > 0".into());
        }
        self.coadapt_config().validate(errors);
    }

    /// Checks that the environment id resolves.
    pub fn validate_env(&self, registry: &EnvRegistry) -> Result<()> {
        if registry.contains(&self.env) {
            Ok(())
        } else {
            let known: Vec<&str> = registry.ids().collect();
            Err(Error::Config(vec![format!("env: unknown environment `{}` (known: {})", self.env, known.join(", "))]))
        }
    }
}

fn exploration_str(e: ExplorationStrategy) -> &'static str {
    match e {
        ExplorationStrategy::Random => "random",
        ExplorationStrategy::Novelty => "novelty",
    }
}

fn flatten(prefix: &str, table: toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other);
            }
        }
    }
}

/// `key=value`, where the value is read as a TOML literal and otherwise
/// taken as a bare string.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(vec![format!("override `{s}`: expected key=value")]))?;
    let key = k.trim().to_string();
    let raw = v.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((key, value))
}

fn string(v: &Value) -> std::result::Result<String, String> {
    v.as_str().map(str::to_string).ok_or_else(|| format!("expected a string, got `{v}`"))
}

fn uint(v: &Value) -> std::result::Result<usize, String> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(format!("expected a non-negative integer, got `{v}`")),
    }
}

fn float(v: &Value) -> std::result::Result<f64, String> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(format!("expected a number, got `{v}`")),
    }
}

fn boolean(v: &Value) -> std::result::Result<bool, String> {
    v.as_bool().ok_or_else(|| format!("expected true or false, got `{v}`"))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
