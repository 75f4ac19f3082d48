//! Experiment layer: configuration files, on-disk logs, checkpoints,
//! manifests and the commands that tie them together.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod logs;
pub mod manifest;

pub use checkpoint::{load_for_analysis, read_checkpoint, restore, write_checkpoint, CheckpointMeta, LogOffsets};
pub use commands::{
    compare, finalize_output, landscape, pca, resume_seed, run_all, run_id, run_seed, seed_dir, LandscapeOptions,
};
pub use config::{parse_override, OptimizerKind, RunConfig};
pub use logs::{read_designs, read_episodes, EpisodeRow, FileObserver};
pub use manifest::Manifest;
