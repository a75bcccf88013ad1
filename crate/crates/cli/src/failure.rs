use std::fmt;

use ddi_core::chemgraph::SmilesError;
use ddi_core::config::ConfigError;
use ddi_core::data::DataError;
use ddi_core::model::ModelError;
use ddi_core::numerics::CheckpointError;
use ddi_core::pipeline::PipelineError;

/// A failed command and its exit-code class.
#[derive(Debug)]
pub enum Failure {
    Input(String),
    Numeric(String),
    Mismatch(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Numeric(_) => 3,
            Failure::Mismatch(_) => 4,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        Failure::Input(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Input(m) | Failure::Numeric(m) | Failure::Mismatch(m) => f.write_str(m),
        }
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<SmilesError> for Failure {
    fn from(e: SmilesError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Numerics(_) => Failure::Numeric(e.to_string()),
            ModelError::ConfigMismatch(_) | ModelError::MissingParam(_) => {
                Failure::Mismatch(e.to_string())
            }
            _ => Failure::Input(e.to_string()),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Model(m) => m.into(),
            PipelineError::Data(d) => d.into(),
            PipelineError::Smiles(s) => s.into(),
            PipelineError::NonFiniteLoss { .. } | PipelineError::Numerics(_) => {
                Failure::Numeric(e.to_string())
            }
            PipelineError::ConfigMismatch(_) => Failure::Mismatch(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}
