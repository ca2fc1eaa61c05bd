//! Config-driven pipeline: experiment configuration, binary checkpoints,
//! staged runs with resumption, and report emission.

pub mod checkpoint;
pub mod config;
pub mod report;
pub mod stages;

pub use checkpoint::{load_checkpoint, load_verified, save_checkpoint, LoadedCheckpoint};
pub use config::{ExperimentConfig, Metric, Mode};
pub use report::{emit_report, read_records, render_table, rows_from_records, Record, Report, ReportRow, SeedReport};
pub use stages::{backbone_extra_tokens, base_vocab, medians, run_pipeline, run_seed, Stage};
