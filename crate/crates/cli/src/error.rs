use hgat_core::features::FeatureError;
use hgat_core::graph::GraphError;
use hgat_core::metrics::MetricsError;
use hgat_core::model::ModelError;
use hgat_core::synth::SynthError;
use hgat_core::train::TrainError;
use thiserror::Error;

/// Process exit statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Success = 0,
    Input = 1,
    Config = 2,
    Numerical = 3,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit(&self) -> Exit {
        match self {
            CliError::Input(_) => Exit::Input,
            CliError::Config(_) => Exit::Config,
            CliError::Numerical(_) => Exit::Numerical,
        }
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => m.into(),
            TrainError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            TrainError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Spec(_) => CliError::Config(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}
