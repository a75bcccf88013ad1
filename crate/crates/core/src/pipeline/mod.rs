//! Two-phase training, evaluation metrics, the ASA case-study report and the
//! three-variant ablation.

mod ablate;
pub mod metrics;
mod report;
mod train;

use thiserror::Error;

use crate::chemgraph::SmilesError;
use crate::data::DataError;
use crate::model::{Model, ModelConfig, ModelError};
use crate::numerics::{Checkpoint, CheckpointError, NumericsError};

pub use ablate::{ablate, AblationDelta, AblationReport, AblationRow, AblationRun};
pub use metrics::MetricError;
pub use report::{
    asa_report, evaluate, predict_records, AsaReport, AttentionRecord, BinaryMetrics, HoldoutRow,
    MetricsReport, MulticlassMetrics, PredictionRow, Provenance, ReferenceRow, HIGHLIGHTED_HOLDOUT,
    THRESHOLD,
};
pub use train::{train, EpochLog, Phase, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no cached graph for SMILES {0:?}")]
    MissingGraph(String),
    #[error("non-finite loss {loss} in {phase:?} phase, epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        phase: Phase,
        epoch: u32,
        batch: usize,
        loss: f64,
    },
    #[error("checkpoint does not match: {0}")]
    ConfigMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Smiles(#[from] SmilesError),
}

/// Checkpoint carrying the model config under `meta.model`, plus `extra`
/// merged into the metadata.
pub fn to_checkpoint(model: &Model<f32>, extra: serde_json::Value) -> Checkpoint {
    let mut meta = serde_json::json!({ "model": model.config });
    if let (Some(m), serde_json::Value::Object(e)) = (meta.as_object_mut(), extra) {
        m.extend(e);
    }
    Checkpoint {
        meta,
        params: model.params.clone(),
    }
}

pub fn model_from_checkpoint(ck: &Checkpoint) -> Result<Model<f32>, PipelineError> {
    let cfg = ck.meta.get("model").ok_or_else(|| {
        PipelineError::ConfigMismatch("checkpoint metadata has no model config".into())
    })?;
    let cfg: ModelConfig = serde_json::from_value(cfg.clone())
        .map_err(|e| PipelineError::ConfigMismatch(e.to_string()))?;
    Ok(Model::from_params(cfg, ck.params.clone())?)
}
