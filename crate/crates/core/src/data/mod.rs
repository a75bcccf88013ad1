//! Pair tables, negative sampling, the ASA holdout, the pair-level split,
//! curated reference pairs, prepared bundles and the planted-mechanism
//! synthetic benchmark.
//!
//! Pair file format (UTF-8, comma-delimited, header required):
//!
//! ```text
//! drug1_id,drug2_id,smiles1,smiles2,type_code
//! DB00945,DB00682,CC(=O)Oc1ccccc1C(=O)O,<smiles>,12
//! ```
//!
//! `type_code` is an interaction type in `0..=85`; prepared splits also carry
//! sampled negatives with `type_code = -1`. The binary label is derived:
//! `1` exactly when `type_code >= 0`.

mod bundle;
mod pairs;
mod reference;
mod synthetic;

use thiserror::Error;

use crate::chemgraph::CacheError;

pub use bundle::{
    prepare, BundleCounts, DatasetBundle, FileDigest, Manifest, PrepareOptions, MANIFEST_FILE,
};
pub use pairs::{
    drug_universe, extract_asa_holdout, load_pairs, read_pairs, sample_negatives,
    sample_negatives_from, split, write_pairs, AsaHoldout, Drug, NegativeStats, PairRecord,
    SplitSpec, PAIR_HEADER,
};
pub use reference::{
    load_reference_pairs, read_reference_pairs, ReferencePair, REFERENCE_DRUGS, REFERENCE_HEADER,
};
pub use synthetic::{generate_synthetic, SyntheticSpec, SYNTHETIC_ELEMENTS};

pub const ASA_ID: &str = "DB00945";
pub const ASA_SMILES: &str = "CC(=O)Oc1ccccc1C(=O)O";
pub const N_TYPES: usize = 86;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },
    #[error("{path}:{line}: type code {code} outside -1..=85")]
    InvalidTypeCode { path: String, line: u64, code: i64 },
    #[error("{path}:{line}: missing SMILES")]
    MissingSmiles { path: String, line: u64 },
    #[error("{0}")]
    MissingReferenceData(String),
    #[error("every candidate pair is a known positive; no negatives can be drawn")]
    NoNegativeCandidates,
    #[error("output directory {0} already exists")]
    OutputExists(String),
    #[error("bundle file {file} does not match its manifest checksum")]
    ChecksumMismatch { file: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

pub(crate) fn io_error(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}
