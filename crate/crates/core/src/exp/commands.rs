//! The experiment commands behind the command-line tool.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::checkpoint::{load_for_analysis, restore};
use super::config::RunConfig;
use super::logs::{read_designs, FileObserver, CHECKPOINT_FILE, CONFIG_FILE, DESIGNS_FILE};
use super::manifest::Manifest;
use crate::analysis::{compare_runs, landscape_slice, CompareRow, LandscapeGrid, PcaModel, RunGroup};
use crate::coadapt::{Coadapt, CoadaptRecord};
use crate::design_eval::ObjectiveContext;
use crate::domain::{DesignVector, RngStream, StreamId};
use crate::env::EnvRegistry;
use crate::error::{Error, Result};

pub fn seed_dir(output: &Path, seed: u64) -> PathBuf {
    output.join(format!("seed_{seed}"))
}

pub fn run_id(config: &RunConfig, seed: u64) -> String {
    format!("{}_{}_s{seed}", config.env, config.mode)
}

/// Runs one seed into `<output_dir>/seed_<seed>`.
pub fn run_seed(config: &RunConfig, seed: u64, registry: &EnvRegistry) -> Result<Vec<CoadaptRecord>> {
    config.validate_env(registry)?;
    let dir = seed_dir(&config.output_dir, seed);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(CONFIG_FILE), config.to_toml_string())?;
    let mut observer = FileObserver::create(&dir, &run_id(config, seed), config)?;
    let mut run = Coadapt::new(config.coadapt_config(), registry.create(&config.env)?, seed)?;
    log::info!("seed {seed}: {} designs into {}", config.schedule.max_designs, dir.display());
    let records = run.run(&mut observer)?;
    Manifest::new(Some(config), vec![seed]).write(&dir)?;
    Ok(records)
}

/// Runs every seed in turn, then writes the top-level manifest.
pub fn run_all(config: &RunConfig, registry: &EnvRegistry) -> Result<Vec<Vec<CoadaptRecord>>> {
    let out = config
        .seed_list()
        .into_iter()
        .map(|seed| run_seed(config, seed, registry))
        .collect::<Result<Vec<_>>>()?;
    finalize_output(config)?;
    Ok(out)
}

/// Writes the configuration and manifest at the output root.
pub fn finalize_output(config: &RunConfig) -> Result<Manifest> {
    fs::create_dir_all(&config.output_dir)?;
    fs::write(config.output_dir.join(CONFIG_FILE), config.to_toml_string())?;
    Manifest::new(Some(config), config.seed_list()).write(&config.output_dir)
}

/// Continues a seed directory from its last checkpoint.
pub fn resume_seed(dir: &Path, registry: &EnvRegistry) -> Result<Vec<CoadaptRecord>> {
    let (config, mut run, offsets) = restore(&dir.join(CHECKPOINT_FILE), registry)?;
    let mut observer = FileObserver::reopen(dir, &run_id(&config, run.seed), &config, offsets)?;
    log::info!("resuming {} after design {}", dir.display(), run.records.len());
    let records = run.run(&mut observer)?;
    Manifest::new(Some(&config), vec![run.seed]).write(dir)?;
    Ok(records)
}

#[derive(Debug, Clone)]
pub struct LandscapeOptions {
    pub dims: (usize, usize),
    pub resolution: usize,
    /// Values for the dimensions not on the grid; defaults to the design
    /// with the highest return in the run.
    pub base: Option<Vec<f64>>,
    pub batch_seed: u64,
    /// Start-state batch size; defaults to the run's `design_opt.start_states`.
    pub start_states: Option<usize>,
}

#[derive(Serialize)]
struct LandscapeSummary<'a> {
    format: &'static str,
    run_dir: String,
    batch_seed: u64,
    start_states: usize,
    argmax: [f64; 3],
    grid: &'a LandscapeGrid,
}

/// Critic objective over two design dimensions, from a run's final
/// population networks. Writes `landscape.csv` and `landscape.json`.
pub fn landscape(run_dir: &Path, out_dir: &Path, opts: &LandscapeOptions, registry: &EnvRegistry) -> Result<LandscapeGrid> {
    let checkpoint = run_dir.join(CHECKPOINT_FILE);
    if !checkpoint.is_file() {
        return Err(Error::Format(format!(
            "{}: no {CHECKPOINT_FILE}; point at a seed directory (seed_<k>) of a finished or interrupted run",
            run_dir.display()
        )));
    }
    let (config, run) = load_for_analysis(&checkpoint, registry)?;
    let n = opts.start_states.unwrap_or(config.start_states);
    let mut rng = RngStream::named(opts.batch_seed, StreamId::Analysis);
    let states = run.start_states.sample_start_states(n, &mut rng)?;
    let ctx = ObjectiveContext::new(&run.agents.population, &states)?;
    let base = match &opts.base {
        Some(b) => DesignVector(b.clone()),
        None => best_design(&run.records).ok_or(Error::EmptySource("design records"))?,
    };
    let space = &run.env.spec().design_space;
    let grid = landscape_slice(&ctx, space, &base, opts.dims, opts.resolution)?;

    fs::create_dir_all(out_dir)?;
    let (i, j) = grid.dims;
    let mut csv = format!("#format=landscape/1\nx{i},x{j},objective\n");
    for (a, b, v) in grid.cells() {
        csv.push_str(&format!("{a},{b},{v}\n"));
    }
    fs::write(out_dir.join("landscape.csv"), csv)?;
    let (ai, aj, av) = grid.argmax();
    let summary = LandscapeSummary {
        format: "landscape/1",
        run_dir: run_dir.display().to_string(),
        batch_seed: opts.batch_seed,
        start_states: n,
        argmax: [ai, aj, av],
        grid: &grid,
    };
    fs::write(out_dir.join("landscape.json"), serde_json::to_string_pretty(&summary)?)?;
    Manifest::refresh(out_dir)?;
    Ok(grid)
}

fn best_design(records: &[CoadaptRecord]) -> Option<DesignVector> {
    records
        .iter()
        .max_by(|a, b| a.best_return.total_cmp(&b.best_return))
        .map(|r| r.design.clone())
}

#[derive(Serialize)]
struct PcaSummary<'a> {
    format: &'static str,
    run_dir: String,
    model: &'a PcaModel,
}

/// Projects a run's designs onto their two principal directions. Writes
/// `pca.csv` (objective = best training return on the design) and `pca.json`.
pub fn pca(run_dir: &Path, out_dir: &Path) -> Result<PcaModel> {
    let records = read_designs(&run_dir.join(DESIGNS_FILE))?;
    let designs: Vec<DesignVector> = records.iter().map(|r| r.design.clone()).collect();
    let model = PcaModel::fit(&designs)?;
    fs::create_dir_all(out_dir)?;
    let mut csv = String::from("#format=pca/1\ndesign_index,pc1,pc2,objective,mode\n");
    for r in &records {
        let [p1, p2] = model.project(&r.design)?;
        csv.push_str(&format!("{},{p1},{p2},{},{}\n", r.design_index, r.best_return, r.mode.as_str()));
    }
    fs::write(out_dir.join("pca.csv"), csv)?;
    let summary = PcaSummary { format: "pca/1", run_dir: run_dir.display().to_string(), model: &model };
    fs::write(out_dir.join("pca.json"), serde_json::to_string_pretty(&summary)?)?;
    Manifest::refresh(out_dir)?;
    Ok(model)
}

/// Seed directories of an output directory, or the directory itself when
/// it is a single seed.
fn seed_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join(DESIGNS_FILE).is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(DESIGNS_FILE).is_file())
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(Error::Format(format!("{}: no runs found", dir.display())));
    }
    Ok(out)
}

/// Summarizes several output directories side by side, one group per
/// directory. Groups are labelled by run mode, or by directory name when
/// two directories share a mode. Writes `compare.csv`.
pub fn compare(dirs: &[PathBuf], out_dir: &Path) -> Result<Vec<CompareRow>> {
    let mut loaded = Vec::new();
    for dir in dirs {
        let seeds = seed_dirs(dir)?;
        let config = RunConfig::load(&seeds[0].join(CONFIG_FILE), &[])?;
        let runs = seeds.iter().map(|s| read_designs(&s.join(DESIGNS_FILE))).collect::<Result<Vec<_>>>()?;
        loaded.push((dir, config.mode.to_string(), runs));
    }
    let mut counts = BTreeMap::new();
    for (_, mode, _) in &loaded {
        *counts.entry(mode.clone()).or_insert(0) += 1;
    }
    let groups: Vec<RunGroup> = loaded
        .iter()
        .map(|(dir, mode, runs)| RunGroup {
            label: if counts[mode] > 1 { dir_label(dir) } else { mode.clone() },
            runs: runs.iter().map(Vec::as_slice).collect(),
        })
        .collect();
    let rows = compare_runs(&groups)?;
    fs::create_dir_all(out_dir)?;
    let mut csv = String::from("#format=compare/1\ndesign_index,mode,mean_best,std_best,mean_rollouts\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{},{}\n", r.design_index, r.mode, r.mean_best, r.std_best, r.mean_rollouts));
    }
    fs::write(out_dir.join("compare.csv"), csv)?;
    Manifest::refresh(out_dir)?;
    Ok(rows)
}

fn dir_label(dir: &Path) -> String {
    dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| dir.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coadapt::RunMode;
    use crate::exp::logs::{read_episodes, EPISODES_FILE};

    fn tiny(out: &Path, mode: RunMode) -> RunConfig {
        let mut c = RunConfig::new("gainline");
        c.mode = mode;
        c.seeds = 2;
        c.output_dir = out.to_path_buf();
        c.schedule.n_initial_designs = 3;
        c.schedule.episodes_initial = 2;
        c.schedule.episodes_later = 1;
        c.schedule.max_designs = 5;
        c.sac.hidden = vec![8, 8];
        c.sac.batch_size = 16;
        c.sac.updates_individual = 2;
        c.sac.updates_population = 1;
        c.particles = 5;
        c.iterations = 3;
        c.start_states = 8;
        c.checkpoint_buffers = true;
        c
    }

    #[test]
    fn run_writes_logs_manifest_and_checkpoint() {
        let tmp = tempfile::tempdir().unwrap();
        let c = tiny(&tmp.path().join("q"), RunMode::QObjective);
        let reg = EnvRegistry::with_builtin();
        let all = run_all(&c, &reg).unwrap();
        assert_eq!(all.len(), 2);
        let dir = seed_dir(&c.output_dir, 1);
        let records = read_designs(&dir.join(DESIGNS_FILE)).unwrap();
        assert_eq!(records, all[1]);
        let rows = read_episodes(&dir.join(EPISODES_FILE)).unwrap();
        assert_eq!(rows.len(), c.schedule.total_episodes());
        assert_eq!(rows.last().unwrap().cumulative_rollouts, records.last().unwrap().cumulative_rollouts);
        let root = Manifest::read(&c.output_dir).unwrap();
        assert!(root.files.contains_key("seed_0/checkpoint.bin"));
        assert_eq!(root.seeds, vec![0, 1]);
    }

    #[test]
    fn resume_after_crash_reproduces_logs() {
        let tmp = tempfile::tempdir().unwrap();
        let reg = EnvRegistry::with_builtin();
        let c = tiny(&tmp.path().join("full"), RunMode::QObjective);
        run_seed(&c, 0, &reg).unwrap();
        let full = seed_dir(&c.output_dir, 0);

        let mut cut_cfg = c.clone();
        cut_cfg.output_dir = tmp.path().join("cut");
        let cut = seed_dir(&cut_cfg.output_dir, 0);
        fs::create_dir_all(&cut).unwrap();
        fs::write(cut.join(CONFIG_FILE), cut_cfg.to_toml_string()).unwrap();
        let mut obs = FileObserver::create(&cut, &run_id(&cut_cfg, 0), &cut_cfg).unwrap();
        let mut run = Coadapt::new(cut_cfg.coadapt_config(), reg.create("gainline").unwrap(), 0).unwrap();
        for _ in 0..3 {
            run.step_design(&mut obs).unwrap();
        }
        drop(obs);
        let mut episodes = fs::OpenOptions::new().append(true).open(cut.join(EPISODES_FILE)).unwrap();
        std::io::Write::write_all(&mut episodes, b"gainline_q_objective_s0,4,explore,1,0.5").unwrap();

        let resumed = resume_seed(&cut, &reg).unwrap();
        assert_eq!(resumed.len(), c.schedule.max_designs);
        for f in [EPISODES_FILE, DESIGNS_FILE] {
            assert_eq!(fs::read(full.join(f)).unwrap(), fs::read(cut.join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn analysis_commands_write_outputs() {
        let tmp = tempfile::tempdir().unwrap();
        let reg = EnvRegistry::with_builtin();
        let q = tiny(&tmp.path().join("q"), RunMode::QObjective);
        let r = tiny(&tmp.path().join("r"), RunMode::RandomOnly);
        run_all(&q, &reg).unwrap();
        run_all(&r, &reg).unwrap();

        let out = tmp.path().join("analysis");
        let opts = LandscapeOptions { dims: (0, 1), resolution: 4, base: None, batch_seed: 0, start_states: None };
        let grid = landscape(&seed_dir(&q.output_dir, 0), &out, &opts, &reg).unwrap();
        assert_eq!(grid.values.len(), 4);
        let text = fs::read_to_string(out.join("landscape.csv")).unwrap();
        assert_eq!(text.lines().count(), 2 + 16);

        pca(&seed_dir(&q.output_dir, 0), &out).unwrap();
        let text = fs::read_to_string(out.join("pca.csv")).unwrap();
        assert_eq!(text.lines().count(), 2 + 5);

        let rows = compare(&[q.output_dir.clone(), r.output_dir.clone()], &out).unwrap();
        assert_eq!(rows.len(), 10);
        assert!(rows.iter().any(|row| row.mode == "random_only"));
        let m = Manifest::read(&out).unwrap();
        for f in ["landscape.csv", "landscape.json", "pca.csv", "pca.json", "compare.csv"] {
            assert!(m.files.contains_key(f), "{f}");
        }

        let dup = compare(&[q.output_dir.clone(), q.output_dir.clone()], &out);
        assert!(dup.is_err(), "same directory twice gives duplicate labels");
    }
}
