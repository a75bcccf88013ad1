//! Siamese NNConv encoder and the three pair-combination architectures.
//!
//! All variants share one encoder applied to both molecules and the same two
//! MLP heads on the 128-d concatenation of the pooled molecule vectors:
//!
//! * **Concat**: encode → mean-pool → concat → heads.
//! * **CrossAtt**: encode → four-head cross-attention in both directions
//!   (residual + layer norm) → mean-pool → concat → heads.
//! * **Ternary**: CrossAtt, then one convolution over the combined two-molecule
//!   graph whose inter-molecular edges join each atom to its top-k most
//!   cosine-similar partner atoms.

mod batch;
mod forward;
mod init;
mod interaction;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chemgraph::{ATOM_DIM, BOND_DIM};
use crate::numerics::NumericsError;
use crate::rng::DropoutKey;

pub use batch::{GraphBatch, PairBatch};
pub use forward::{
    attention_summary, mean_pool, AttentionMaps, AttentionSummary, BnUpdate, ForwardOptions, Model,
    Outputs, PairPrediction, ParamCount, BN_EPS, BN_MOMENTUM, LN_EPS,
};
pub use interaction::{build_interaction_graph, InteractionEdge};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Concat,
    CrossAtt,
    Ternary,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Concat, Variant::CrossAtt, Variant::Ternary];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Concat => "concat",
            Variant::CrossAtt => "crossatt",
            Variant::Ternary => "ternary",
        }
    }

    pub fn has_attention(self) -> bool {
        !matches!(self, Variant::Concat)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "concat" => Ok(Variant::Concat),
            "crossatt" => Ok(Variant::CrossAtt),
            "ternary" => Ok(Variant::Ternary),
            _ => Err(ModelError::UnknownVariant(s.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub hidden_dim: usize,
    pub n_mp_layers: usize,
    pub n_heads: usize,
    pub dropout_p: f64,
    pub n_classes: usize,
    pub atom_dim: usize,
    pub bond_dim: usize,
    pub topk: usize,
    pub head_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Concat,
            hidden_dim: 64,
            n_mp_layers: 3,
            n_heads: 4,
            dropout_p: 0.2,
            n_classes: 86,
            atom_dim: ATOM_DIM,
            bond_dim: BOND_DIM,
            topk: 3,
            head_hidden: 256,
        }
    }
}

impl ModelConfig {
    pub fn with_variant(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.hidden_dim == 0
            || self.n_heads == 0
            || !self.hidden_dim.is_multiple_of(self.n_heads)
        {
            return bad(format!(
                "hidden_dim {} must be a positive multiple of n_heads {}",
                self.hidden_dim, self.n_heads
            ));
        }
        if self.topk == 0 {
            return bad("topk must be at least 1".into());
        }
        if self.n_mp_layers == 0 || self.n_classes == 0 || self.head_hidden == 0 {
            return bad("layer, class and head sizes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        if self.atom_dim != ATOM_DIM || self.bond_dim != BOND_DIM {
            return bad(format!(
                "feature widths must be {ATOM_DIM}/{BOND_DIM}, got {}/{}",
                self.atom_dim, self.bond_dim
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.n_heads
    }
}

/// Train mode draws dropout masks from the given key; eval mode disables
/// dropout and uses frozen batch-norm statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train(DropoutKey),
    Eval,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("unknown variant {0:?} (expected concat, crossatt or ternary)")]
    UnknownVariant(String),
    #[error("parameter {0} missing from store")]
    MissingParam(String),
    #[error("variant {0} has no attention maps")]
    VariantHasNoAttention(Variant),
    #[error("cannot pool an empty graph")]
    EmptyGraph,
    #[error("checkpoint does not match the model config: {0}")]
    ConfigMismatch(String),
}
