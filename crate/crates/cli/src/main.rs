use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use codesign::analysis::DEFAULT_GRID_RESOLUTION;
use codesign::env::EnvRegistry;
use codesign::exp::{self, LandscapeOptions, RunConfig};

#[derive(Parser)]
#[command(name = "codesign", version, about = "Design and policy co-optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run co-adaptation for every configured seed.
    Run(RunArgs),
    /// Continue interrupted runs from their last checkpoint.
    Resume {
        /// A seed directory or an output directory holding seed_* directories.
        dir: PathBuf,
    },
    /// Critic objective over a grid of two design dimensions.
    Landscape(LandscapeArgs),
    /// Principal-component projection of a run's designs.
    Pca {
        run_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-design summary of several output directories.
    Compare {
        #[arg(required = true, num_args = 1..)]
        dirs: Vec<PathBuf>,
        #[arg(long, default_value = "compare")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file with flat dotted keys.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a setting, e.g. `--set sac.gamma=0.95`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    /// Number of seeds.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    seed_offset: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Run seeds as separate processes at the same time.
    #[arg(long)]
    parallel: bool,
    /// Run only this seed (used by `--parallel` children).
    #[arg(long, hide = true)]
    only_seed: Option<u64>,
}

#[derive(Args)]
struct LandscapeArgs {
    run_dir: PathBuf,
    #[arg(long, num_args = 2, default_values_t = [0, 1])]
    dims: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_GRID_RESOLUTION)]
    resolution: usize,
    /// Comma-separated design for the dimensions not on the grid.
    #[arg(long, value_delimiter = ',')]
    base: Option<Vec<f64>>,
    /// Seed of the start-state batch.
    #[arg(long, default_value_t = 0)]
    batch_seed: u64,
    #[arg(long)]
    start_states: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let registry = EnvRegistry::with_builtin();
    match cli.command {
        Cmd::Run(args) => run(args, &registry),
        Cmd::Resume { dir } => resume(&dir, &registry),
        Cmd::Landscape(a) => {
            let opts = LandscapeOptions {
                dims: (a.dims[0], a.dims[1]),
                resolution: a.resolution,
                base: a.base,
                batch_seed: a.batch_seed,
                start_states: a.start_states,
            };
            let out = a.out.unwrap_or_else(|| a.run_dir.join("landscape"));
            let grid = exp::landscape(&a.run_dir, &out, &opts, &registry)?;
            let (x, y, v) = grid.argmax();
            println!("landscape maximum {v} at x{}={x}, x{}={y}; wrote {}", grid.dims.0, grid.dims.1, out.display());
            Ok(())
        }
        Cmd::Pca { run_dir, out } => {
            let out = out.unwrap_or_else(|| run_dir.join("pca"));
            let model = exp::pca(&run_dir, &out)?;
            println!(
                "explained variance {:.3}, {:.3}; wrote {}",
                model.explained[0],
                model.explained[1],
                out.display()
            );
            Ok(())
        }
        Cmd::Compare { dirs, out } => {
            let rows = exp::compare(&dirs, &out)?;
            println!("{} rows; wrote {}", rows.len(), out.join("compare.csv").display());
            Ok(())
        }
    }
}

fn load_config(args: &RunArgs) -> Result<RunConfig> {
    let text = match &args.config {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    let mut overrides = args.set.clone();
    let mut flag = |key: &str, v: Option<String>| {
        if let Some(v) = v {
            overrides.push(format!("{key}={}", toml_string_or_literal(&v)));
        }
    };
    flag("env", args.env.clone());
    flag("mode", args.mode.clone());
    flag("seeds", args.seeds.map(|s| s.to_string()));
    flag("seed_offset", args.seed_offset.map(|s| s.to_string()));
    flag("output_dir", args.output.as_ref().map(|p| p.display().to_string()));
    Ok(RunConfig::from_toml_with_overrides(&text, &overrides)?)
}

/// Quotes values that would otherwise be read as something other than a
/// string, so `--output 123` stays a path.
fn toml_string_or_literal(v: &str) -> String {
    if v.parse::<u64>().is_ok() {
        v.to_string()
    } else {
        format!("{v:?}")
    }
}

fn run(args: RunArgs, registry: &EnvRegistry) -> Result<()> {
    let config = load_config(&args)?;
    config.validate_env(registry)?;
    if let Some(seed) = args.only_seed {
        exp::run_seed(&config, seed, registry)?;
        return Ok(());
    }
    if !args.parallel {
        exp::run_all(&config, registry)?;
        println!("{} seeds; wrote {}", config.seeds, config.output_dir.display());
        return Ok(());
    }

    // Children read the canonical config written at the output root.
    exp::finalize_output(&config)?;
    let config_path = config.output_dir.join("config.toml");
    let exe = std::env::current_exe()?;
    let children = config
        .seed_list()
        .into_iter()
        .map(|seed| {
            let child = Command::new(&exe)
                .arg("run")
                .arg("--config")
                .arg(&config_path)
                .arg("--only-seed")
                .arg(seed.to_string())
                .spawn()
                .with_context(|| format!("starting seed {seed}"))?;
            Ok((seed, child))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut failed = Vec::new();
    for (seed, mut child) in children {
        if !child.wait()?.success() {
            failed.push(seed);
        }
    }
    exp::finalize_output(&config)?;
    if !failed.is_empty() {
        bail!("seeds {failed:?} failed");
    }
    println!("{} seeds; wrote {}", config.seeds, config.output_dir.display());
    Ok(())
}

fn resume(dir: &Path, registry: &EnvRegistry) -> Result<()> {
    let checkpoint = Path::new("checkpoint.bin");
    if dir.join(checkpoint).is_file() {
        exp::resume_seed(dir, registry)?;
        return Ok(());
    }
    let mut seeds: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(checkpoint).is_file())
        .collect();
    seeds.sort();
    if seeds.is_empty() {
        bail!("{}: no checkpoint.bin found here or in any subdirectory", dir.display());
    }
    for s in &seeds {
        exp::resume_seed(s, registry)?;
    }
    exp::Manifest::refresh(dir)?;
    println!("resumed {} runs under {}", seeds.len(), dir.display());
    Ok(())
}
