//! Pipeline orchestration for building loss classification: configuration,
//! stage commands and file formats shared by the `buildloss` binary.

pub mod config;
pub mod error;
pub mod output;
pub mod stages;

pub use config::{Mode, ModelChoice, PipelineConfig, Task};
pub use error::PipelineError;
