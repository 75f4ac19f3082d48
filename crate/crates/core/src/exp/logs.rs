//! Per-run log files: `episodes.csv`, `designs.jsonl` and the checkpoint.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::checkpoint::{write_checkpoint, LogOffsets};
use super::config::RunConfig;
use crate::coadapt::{Coadapt, CoadaptRecord, EpisodeEvent, RunObserver};
use crate::error::{Error, Result};

pub const EPISODES_FILE: &str = "episodes.csv";
pub const DESIGNS_FILE: &str = "designs.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_FILE: &str = "config.toml";

pub const EPISODES_FORMAT: &str = "episodes/1";
pub const DESIGNS_FORMAT: &str = "designs/1";
pub const EPISODES_HEADER: &str = "run_id,design_index,mode,episode,return,cumulative_rollouts";

/// Streams episode rows and design records to disk and checkpoints the run
/// after every `checkpoint.every` designs.
pub struct FileObserver {
    run_id: String,
    dir: PathBuf,
    config: RunConfig,
    episodes: File,
    designs: File,
    offsets: LogOffsets,
}

impl FileObserver {
    /// Starts fresh logs in `dir`, replacing any existing ones.
    pub fn create(dir: &Path, run_id: &str, config: &RunConfig) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let mut episodes = File::create(dir.join(EPISODES_FILE))?;
        let header = format!("#format={EPISODES_FORMAT}\n{EPISODES_HEADER}\n");
        episodes.write_all(header.as_bytes())?;
        let mut designs = File::create(dir.join(DESIGNS_FILE))?;
        let designs_header = format!("#format={DESIGNS_FORMAT}\n");
        designs.write_all(designs_header.as_bytes())?;
        Ok(Self {
            run_id: run_id.to_string(),
            dir: dir.to_path_buf(),
            config: config.clone(),
            episodes,
            designs,
            offsets: LogOffsets { episodes: header.len() as u64, designs: designs_header.len() as u64 },
        })
    }

    /// Reopens logs for appending after cutting them back to `offsets`,
    /// dropping anything written after the checkpoint.
    pub fn reopen(dir: &Path, run_id: &str, config: &RunConfig, offsets: LogOffsets) -> Result<Self> {
        let open = |name: &str, len: u64| -> Result<File> {
            let path = dir.join(name);
            let f = OpenOptions::new().append(true).open(&path)?;
            let actual = f.metadata()?.len();
            if actual < len {
                return Err(Error::Format(format!(
                    "{} is shorter ({actual} bytes) than the checkpoint expects ({len})",
                    path.display()
                )));
            }
            f.set_len(len)?;
            Ok(f)
        };
        Ok(Self {
            run_id: run_id.to_string(),
            dir: dir.to_path_buf(),
            config: config.clone(),
            episodes: open(EPISODES_FILE, offsets.episodes)?,
            designs: open(DESIGNS_FILE, offsets.designs)?,
            offsets,
        })
    }

    pub fn offsets(&self) -> LogOffsets {
        self.offsets
    }

    pub fn checkpoint(&self, run: &Coadapt) -> Result<()> {
        write_checkpoint(&self.dir.join(CHECKPOINT_FILE), run, &self.config, self.offsets)
    }
}

impl RunObserver for FileObserver {
    fn on_episode(&mut self, e: &EpisodeEvent) -> Result<()> {
        let line = format!(
            "{},{},{},{},{},{}\n",
            self.run_id,
            e.design_index,
            e.mode.as_str(),
            e.episode,
            e.episode_return,
            e.cumulative_rollouts
        );
        self.episodes.write_all(line.as_bytes())?;
        self.episodes.flush()?;
        self.offsets.episodes += line.len() as u64;
        Ok(())
    }

    fn on_design_complete(&mut self, run: &Coadapt) -> Result<()> {
        let record = run.records.last().expect("a design just completed");
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        self.designs.write_all(line.as_bytes())?;
        self.designs.flush()?;
        self.offsets.designs += line.len() as u64;
        if run.records.len().is_multiple_of(self.config.checkpoint_every) || run.is_finished() {
            self.checkpoint(run)?;
        }
        Ok(())
    }
}

/// Reads every record of a `designs.jsonl` file, checking its format line.
pub fn read_designs(path: &Path) -> Result<Vec<CoadaptRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if n == 0 {
            if line != format!("#format={DESIGNS_FORMAT}") {
                return Err(Error::Format(format!("{}:1: missing or unsupported format line", path.display())));
            }
            continue;
        }
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(record);
    }
    Ok(out)
}

/// One data row of `episodes.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRow {
    pub run_id: String,
    pub design_index: usize,
    pub mode: String,
    pub episode: usize,
    pub episode_return: f64,
    pub cumulative_rollouts: u64,
}

/// Parses an `episodes.csv` file, checking its format line and header.
pub fn read_episodes(path: &Path) -> Result<Vec<EpisodeRow>> {
    let text = fs::read_to_string(path)?;
    let bad = |n: usize, m: &str| Error::Format(format!("{}:{n}: {m}", path.display()));
    let mut lines = text.lines();
    if lines.next() != Some(&format!("#format={EPISODES_FORMAT}")) {
        return Err(bad(1, "missing or unsupported format line"));
    }
    if lines.next() != Some(EPISODES_HEADER) {
        return Err(bad(2, "unexpected header"));
    }
    lines
        .enumerate()
        .map(|(k, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let n = k + 3;
            if f.len() != 6 {
                return Err(bad(n, "expected 6 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(n, &format!("bad number `{s}`")));
            Ok(EpisodeRow {
                run_id: f[0].to_string(),
                design_index: num(f[1])? as usize,
                mode: f[2].to_string(),
                episode: num(f[3])? as usize,
                episode_return: num(f[4])?,
                cumulative_rollouts: num(f[5])? as u64,
            })
        })
        .collect()
}
