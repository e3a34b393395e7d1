//! The `synth`, `train`, `attack` and `analyze` commands, their JSON configuration
//! and the deterministic report they write.
//!
//! All outputs of a command go under one output directory:
//!
//! | file | written by |
//! |---|---|
//! | `dataset/<class>/*.ppm` | synth |
//! | `model.ckpt`, `train_curve.tsv` | train |
//! | `campaigns.json`, `fooling_rates.tsv`, `adversarial/**.ppm` | attack |
//! | `embedding_{tsne,pca}.tsv`, `topk_distances.tsv`, `target_histograms.tsv`, `target_totals.tsv` | analyze |
//! | `report.json` | every command merges its own section |
//! | `timings.json` | wall-clock seconds per command, kept out of the report |

mod commands;
mod config;
mod report;

use std::path::Path;
use std::time::Instant;

pub use commands::{
    cmd_analyze, cmd_attack, cmd_synth, cmd_train, default_campaign, default_checkpoint, default_dataset,
    feature_distances, memorize, AnalysisSummary, AttackSummary, CampaignAnalysis, CampaignArtifact, FeatureDistances,
    FoolingRow, MemorizationSummary, SplitInfo, SynthSummary, TrainSummary, CAMPAIGN_FILE, CHECKPOINT_FILE, DATASET_DIR,
};
pub use config::{AnalysisSection, AttackSection, MemorizationSection, ModelSection, RunConfig, SynthSection, TrainSection};
pub use report::{merge_section, read_json, write_json, Tsv, REPORT_FILE, TIMINGS_FILE};

use crate::error::Result;

/// Runs `f` and records its wall-clock seconds under `name` in `<out>/timings.json`.
pub fn timed<T>(out: &Path, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let value = f()?;
    merge_section(&out.join(TIMINGS_FILE), name, &start.elapsed().as_secs_f64())?;
    Ok(value)
}
