//! Pipeline stages. Each reads the previous stage's files from the output
//! directory (or explicit paths) and writes its own.

mod eval;
mod infer;
mod label;
mod synth;
mod train;

use std::path::PathBuf;

use buildloss_core::dataset::{load_buildings, LoadedBuildings, UsageGroups};
use buildloss_core::LinkType;

pub use eval::{cmd_eval, EvalRun, TaskEval};
pub use infer::{cmd_infer, InferRun, TaskInference};
pub use label::{cmd_label, label_data, LabelRun, TaskLabels};
pub use synth::{cmd_synth, SynthRun};
pub use train::{cmd_train, TaskModel, TrainRun};

use crate::config::PipelineConfig;
use crate::error::PipelineError;
use crate::output::{read_text, require_file};

pub mod files {
    pub const BUILDINGS: &str = "buildings.geojson";
    pub const METADATA: &str = "metadata.csv";
    pub const SAMPLES: &str = "samples.csv";
    pub const TRUTH_BUILDINGS: &str = "truth_buildings.csv";
    pub const TRUTH_SAMPLES: &str = "truth_samples.csv";
    pub const HIDDEN: &str = "hidden_buildings.csv";
    pub const IMPUTED: &str = "imputed_metadata.csv";
    pub const DETECTIONS: &str = "detections.csv";
    pub const LABEL_REPORT: &str = "label_report.json";
    pub const SPLITS: &str = "splits.csv";
}

pub fn tag(link: LinkType) -> &'static str {
    match link {
        LinkType::O2I => "o2i",
        LinkType::I2I => "i2i",
    }
}

/// `<stem>_<task>.<ext>` inside the output directory.
pub fn task_file(config: &PipelineConfig, stem: &str, link: LinkType, ext: &str) -> PathBuf {
    config.out_dir().join(format!("{stem}_{}.{ext}", tag(link)))
}

/// Footprints joined with the given metadata file.
fn load_footprints(
    config: &PipelineConfig,
    metadata: PathBuf,
) -> Result<LoadedBuildings, PipelineError> {
    let geo = config.input(&config.paths.buildings, files::BUILDINGS);
    require_file(&geo, "buildings file")?;
    require_file(&metadata, "metadata file")?;
    let loaded = load_buildings(
        &read_text(&geo)?,
        Some(&read_text(&metadata)?),
        &UsageGroups::default(),
    )
    .map_err(|e| PipelineError::from(e).in_file(&geo))?;
    for w in &loaded.report.warnings {
        log::warn!("{w}");
    }
    Ok(loaded)
}

/// Footprints joined with the imputed attributes written by `label`.
fn load_imputed(config: &PipelineConfig) -> Result<LoadedBuildings, PipelineError> {
    load_footprints(config, config.out_dir().join(files::IMPUTED))
}

/// Runs label, train, infer and eval in order.
pub fn cmd_run(config: &PipelineConfig) -> Result<EvalRun, PipelineError> {
    cmd_label(config)?;
    cmd_train(config)?;
    cmd_infer(config)?;
    cmd_eval(config)
}
