use std::path::Path;

use buildloss_core::dataset::DatasetError;
use buildloss_core::forest::ForestError;
use buildloss_core::geoplane::GeoError;
use buildloss_core::losslab::LossError;
use buildloss_core::metrics::MetricsError;
use buildloss_core::ssl::SslError;
use buildloss_core::synthcity::SynthError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Training(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Io { .. } | PipelineError::Data(_) => 3,
            PipelineError::Training(_) => 4,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Prefixes a data error with the file it came from.
    pub fn in_file(self, path: &Path) -> Self {
        match self {
            PipelineError::Data(m) => PipelineError::Data(format!("{}: {m}", path.display())),
            other => other,
        }
    }
}

impl From<DatasetError> for PipelineError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Forest(f) => f.into(),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<GeoError> for PipelineError {
    fn from(e: GeoError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<LossError> for PipelineError {
    fn from(e: LossError) -> Self {
        match e {
            LossError::InvalidConfig(m) => PipelineError::Config(m),
            other => PipelineError::Data(format!("loss labeling: {other}")),
        }
    }
}

impl From<MetricsError> for PipelineError {
    fn from(e: MetricsError) -> Self {
        PipelineError::Data(format!("metrics: {e}"))
    }
}

impl From<ForestError> for PipelineError {
    fn from(e: ForestError) -> Self {
        match e {
            ForestError::InvalidConfig(m) => PipelineError::Config(m),
            other => PipelineError::Training(other.to_string()),
        }
    }
}

impl From<SslError> for PipelineError {
    fn from(e: SslError) -> Self {
        match e {
            SslError::InvalidConfig(m) => PipelineError::Config(m),
            SslError::Training(f) => f.into(),
            other => PipelineError::Training(other.to_string()),
        }
    }
}

impl From<SynthError> for PipelineError {
    fn from(e: SynthError) -> Self {
        PipelineError::Config(e.to_string())
    }
}
