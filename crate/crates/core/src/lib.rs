//! Drug–drug interaction prediction with siamese message-passing encoders.
//!
//! * [`config`]: TOML run configuration.
//! * [`chemgraph`]: SMILES subset parser, atom/bond featurization, graph cache.
//! * [`numerics`]: tape-based autodiff over dense matrices, losses, Adam.
//! * [`model`]: shared NNConv encoder and the Concat / CrossAtt / Ternary
//!   pair combiners.
//! * [`data`]: pair tables, negative sampling, splits, ASA holdout, reference
//!   pairs and the planted-mechanism synthetic benchmark.
//! * [`pipeline`]: two-phase training, metrics, reports and ablations.

pub mod chemgraph;
pub mod config;
pub mod container;
pub mod data;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod rng;
