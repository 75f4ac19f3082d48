//! Binary run checkpoints.
//!
//! Layout: the 6-byte magic `CDCKPT`, a little-endian `u32` format version,
//! a little-endian `u64` metadata length, the metadata as JSON, then every
//! real-valued block as little-endian `f64`s in this order: population
//! networks, start states, and (optionally) the population buffer.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::agent::NetworkCounters;
use crate::coadapt::{Coadapt, CoadaptRecord, PendingDesign, StreamStates, Streams};
use crate::design_eval::RolloutCounter;
use crate::domain::{Action, DesignTransition, DesignVector, State, Transition};
use crate::env::EnvRegistry;
use crate::error::{Error, Result};
use crate::optim::CmaEs;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"CDCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Byte lengths of the append-only logs when the checkpoint was written.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogOffsets {
    pub episodes: u64,
    pub designs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Canonical configuration text.
    pub config: String,
    pub seed: u64,
    pub records: Vec<CoadaptRecord>,
    pub streams: StreamStates,
    pub rollouts: u64,
    pub initial: Vec<DesignVector>,
    pub pending: Option<PendingDesign>,
    pub cma: Option<CmaEs>,
    pub counters: NetworkCounters,
    pub state_dim: usize,
    pub action_dim: usize,
    pub design_dim: usize,
    pub network_values: usize,
    pub start_states: usize,
    /// `None` when the buffer was not saved.
    pub population_transitions: Option<usize>,
    pub logs: LogOffsets,
}

impl CheckpointMeta {
    fn start_state_width(&self) -> usize {
        self.state_dim + self.design_dim
    }

    fn transition_width(&self) -> usize {
        2 * self.state_dim + self.action_dim + 2 + self.design_dim
    }
}

/// Writes `run` to `path` atomically (temp file, then rename).
pub fn write_checkpoint(path: &Path, run: &Coadapt, config: &RunConfig, logs: LogOffsets) -> Result<()> {
    let spec = run.env.spec();
    let network = run.agents.population.export_flat();
    let mut data = network.clone();
    for (s, d) in run.start_states.entries() {
        data.extend_from_slice(&s.0);
        data.extend_from_slice(&d.0);
    }
    let population_transitions = if config.checkpoint_buffers {
        for item in run.population_buffer.iter() {
            let t = &item.transition;
            data.extend_from_slice(&t.s.0);
            data.extend_from_slice(&t.a.0);
            data.push(t.r);
            data.extend_from_slice(&t.s_next.0);
            data.push(if t.done { 1.0 } else { 0.0 });
            data.extend_from_slice(&item.design.0);
        }
        Some(run.population_buffer.len())
    } else {
        None
    };
    let meta = CheckpointMeta {
        config: config.to_toml_string(),
        seed: run.seed,
        records: run.records.clone(),
        streams: run.streams.states(),
        rollouts: run.rollouts.get(),
        initial: run.initial.clone(),
        pending: run.pending.clone(),
        cma: run.cma.clone(),
        counters: run.agents.population.counters(),
        state_dim: spec.state_dim,
        action_dim: spec.action_dim,
        design_dim: spec.design_dim(),
        network_values: network.len(),
        start_states: run.start_states.len(),
        population_transitions,
        logs,
    };
    let json = serde_json::to_vec(&meta)?;
    let mut bytes = Vec::with_capacity(18 + json.len() + 8 * data.len());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for v in &data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads the metadata and the raw `f64` payload.
pub fn read_checkpoint(path: &Path) -> Result<(CheckpointMeta, Vec<f64>)> {
    let bytes = fs::read(path)?;
    let bad = |m: &str| Error::Format(format!("{}: {m}", path.display()));
    if bytes.len() < 18 || &bytes[..6] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let meta_len = u64::from_le_bytes(bytes[10..18].try_into().unwrap()) as usize;
    let body = bytes.get(18..18 + meta_len).ok_or_else(|| bad("truncated metadata"))?;
    let meta: CheckpointMeta = serde_json::from_slice(body)?;
    let rest = &bytes[18 + meta_len..];
    if rest.len() % 8 != 0 {
        return Err(bad("payload is not a whole number of f64 values"));
    }
    let data: Vec<f64> = rest.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let expected = meta.network_values
        + meta.start_states * meta.start_state_width()
        + meta.population_transitions.unwrap_or(0) * meta.transition_width();
    if data.len() != expected {
        return Err(bad(&format!("payload has {} values, expected {expected}", data.len())));
    }
    Ok((meta, data))
}

/// Rebuilds a run from a checkpoint. The buffers must have been saved.
pub fn restore(path: &Path, registry: &EnvRegistry) -> Result<(RunConfig, Coadapt, LogOffsets)> {
    rebuild(path, registry, true)
}

/// Like [`restore`] but accepts checkpoints without replay buffers; the
/// population buffer of the result is then empty. Enough for inspecting
/// networks, start states and records.
pub fn load_for_analysis(path: &Path, registry: &EnvRegistry) -> Result<(RunConfig, Coadapt)> {
    rebuild(path, registry, false).map(|(c, run, _)| (c, run))
}

fn rebuild(path: &Path, registry: &EnvRegistry, need_buffers: bool) -> Result<(RunConfig, Coadapt, LogOffsets)> {
    let (meta, data) = read_checkpoint(path)?;
    let config = RunConfig::from_toml_str(&meta.config)?;
    if need_buffers && meta.population_transitions.is_none() {
        return Err(Error::Format(format!(
            "{}: checkpoint has no replay buffers; rerun with checkpoint.buffers = true to make runs resumable",
            path.display()
        )));
    }
    let n_transitions = meta.population_transitions.unwrap_or(0);
    let env = registry.create(&config.env)?;
    let spec = env.spec().clone();
    if (spec.state_dim, spec.action_dim, spec.design_dim()) != (meta.state_dim, meta.action_dim, meta.design_dim) {
        return Err(Error::Format(format!("{}: dimensions do not match environment `{}`", path.display(), config.env)));
    }
    let mut run = Coadapt::new(config.coadapt_config(), env, meta.seed)?;

    let (net, mut rest) = data.split_at(meta.network_values);
    run.agents.population.import_flat(net, meta.counters)?;
    run.agents.clone_population_to_individual();

    let (sd, ad, dd) = (meta.state_dim, meta.action_dim, meta.design_dim);
    for _ in 0..meta.start_states {
        let (row, tail) = rest.split_at(sd + dd);
        run.start_states.push(State(row[..sd].to_vec()), DesignVector(row[sd..].to_vec()));
        rest = tail;
    }
    for _ in 0..n_transitions {
        let (row, tail) = rest.split_at(meta.transition_width());
        let mut at = 0;
        let mut take = |n: usize| {
            let out = row[at..at + n].to_vec();
            at += n;
            out
        };
        let s = State(take(sd));
        let a = Action(take(ad));
        let r = take(1)[0];
        let s_next = State(take(sd));
        let done = take(1)[0] != 0.0;
        let design = DesignVector(take(dd));
        run.population_buffer.push(DesignTransition { transition: Transition { s, a, r, s_next, done }, design });
        rest = tail;
    }

    run.streams = Streams::from_states(&meta.streams)?;
    run.rollouts = RolloutCounter::new(meta.rollouts);
    run.records = meta.records;
    run.initial = meta.initial;
    run.pending = meta.pending;
    run.cma = meta.cma;
    Ok((config, run, meta.logs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coadapt::{NoopObserver, RunMode};

    fn tiny(buffers: bool) -> RunConfig {
        let mut c = RunConfig::new("gainline");
        c.mode = RunMode::QObjective;
        c.schedule.n_initial_designs = 2;
        c.schedule.episodes_initial = 2;
        c.schedule.episodes_later = 1;
        c.schedule.max_designs = 4;
        c.sac.hidden = vec![8, 8];
        c.sac.batch_size = 16;
        c.sac.updates_individual = 3;
        c.sac.updates_population = 2;
        c.particles = 6;
        c.iterations = 3;
        c.start_states = 8;
        c.checkpoint_buffers = buffers;
        c
    }

    fn start(c: &RunConfig) -> Coadapt {
        let env = EnvRegistry::with_builtin().create(&c.env).unwrap();
        Coadapt::new(c.coadapt_config(), env, 3).unwrap()
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let c = tiny(true);
        let mut full = start(&c);
        let expected = full.run(&mut NoopObserver).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.bin");
        let mut part = start(&c);
        part.step_design(&mut NoopObserver).unwrap();
        part.step_design(&mut NoopObserver).unwrap();
        part.step_design(&mut NoopObserver).unwrap();
        write_checkpoint(&path, &part, &c, LogOffsets { episodes: 7, designs: 9 }).unwrap();
        drop(part);

        let (c2, mut resumed, logs) = restore(&path, &EnvRegistry::with_builtin()).unwrap();
        assert_eq!(c2, c);
        assert_eq!(logs, LogOffsets { episodes: 7, designs: 9 });
        let got = resumed.run(&mut NoopObserver).unwrap();
        assert_eq!(got, expected);
        assert_eq!(resumed.agents, full.agents);
    }

    #[test]
    fn without_buffers_resume_is_refused() {
        let c = tiny(false);
        let mut run = start(&c);
        run.step_design(&mut NoopObserver).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.bin");
        write_checkpoint(&path, &run, &c, LogOffsets::default()).unwrap();
        let (meta, _) = read_checkpoint(&path).unwrap();
        assert_eq!(meta.records.len(), 1);
        let err = restore(&path, &EnvRegistry::with_builtin()).unwrap_err();
        assert!(err.to_string().contains("checkpoint.buffers"));
        let (_, loaded) = load_for_analysis(&path, &EnvRegistry::with_builtin()).unwrap();
        assert_eq!(loaded.agents.population, run.agents.population);
        assert_eq!(loaded.start_states.entries(), run.start_states.entries());
        assert!(loaded.population_buffer.is_empty());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        fs::write(&path, b"CDCKPTxx").unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Format(_))));
        fs::write(&path, b"hello world, not a checkpoint").unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Format(_))));

        let c = tiny(true);
        let mut run = start(&c);
        run.step_design(&mut NoopObserver).unwrap();
        write_checkpoint(&path, &run, &c, LogOffsets::default()).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Format(_))));
    }
}
