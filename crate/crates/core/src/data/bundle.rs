use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pairs::drug_universe;
use super::reference::missing_reference_message;
use super::{
    extract_asa_holdout, io_error, load_pairs, load_reference_pairs, read_pairs,
    read_reference_pairs, sample_negatives, split, write_pairs, DataError, NegativeStats,
    PairRecord, ReferencePair, SplitSpec, ASA_ID, ASA_SMILES, REFERENCE_HEADER,
};
use crate::chemgraph::{strip_stereo, FeatureSchema, GraphCache};
use crate::container::sha256_hex;

pub const MANIFEST_FILE: &str = "manifest.json";
const TRAIN_FILE: &str = "train.csv";
const TEST_FILE: &str = "test.csv";
const ASA_FILE: &str = "asa_holdout.csv";
const REFERENCE_FILE: &str = "reference.csv";
const CACHE_FILE: &str = "graph_cache.bin";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self, DataError> {
        let bytes = fs::read(path).map_err(io_error(path))?;
        Ok(Self {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleCounts {
    pub positives: usize,
    pub negatives: usize,
    pub combined: usize,
    pub unique_drugs: usize,
    pub asa_pairs: usize,
    pub asa_types: usize,
    pub train: usize,
    pub test: usize,
    pub cached_graphs: usize,
    pub other_element_atoms: usize,
    pub reference_pairs: usize,
}

/// Structured summary written next to every prepared bundle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub split: SplitSpec,
    pub asa_id: String,
    pub strip_stereo: bool,
    pub counts: BundleCounts,
    pub negative_sampling: NegativeStats,
    pub inputs: BTreeMap<String, FileDigest>,
    /// SHA-256 of each bundle file, keyed by file name.
    pub files: BTreeMap<String, String>,
}

#[derive(Clone, Debug)]
pub struct DatasetBundle {
    pub train: Vec<PairRecord>,
    pub test: Vec<PairRecord>,
    pub asa_holdout: Vec<PairRecord>,
    pub reference: Vec<ReferencePair>,
    pub cache: GraphCache,
    pub manifest: Manifest,
}

#[derive(Clone, Debug)]
pub struct PrepareOptions {
    pub pairs: PathBuf,
    pub reference: Option<PathBuf>,
    pub out: PathBuf,
    pub split: SplitSpec,
    pub strip_stereo: bool,
    pub asa_id: String,
}

impl PrepareOptions {
    pub fn new(pairs: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            pairs: pairs.into(),
            reference: None,
            out: out.into(),
            split: SplitSpec::default(),
            strip_stereo: false,
            asa_id: ASA_ID.to_string(),
        }
    }
}

fn csv_bytes(records: &[PairRecord]) -> Result<Vec<u8>, DataError> {
    let mut buf = Vec::new();
    write_pairs(&mut buf, records)?;
    Ok(buf)
}

fn reference_bytes(rows: &[ReferencePair]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REFERENCE_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.partner_name.as_str(),
            r.drugbank_id.as_str(),
            r.smiles.as_str(),
            &r.label.to_string(),
            r.mechanism.as_str(),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

impl DatasetBundle {
    /// Builds a bundle in memory: negatives drawn away from `asa_id`, the ASA
    /// pairs held out, the remainder split, all SMILES featurized.
    pub fn build(
        positives: Vec<PairRecord>,
        reference: Vec<ReferencePair>,
        split_spec: &SplitSpec,
        asa_id: &str,
    ) -> Result<Self, DataError> {
        split_spec.validate().map_err(DataError::Manifest)?;
        if let Some(neg) = positives.iter().find(|p| p.type_code < 0) {
            return Err(DataError::Manifest(format!(
                "input must list positive pairs only; found type_code -1 for {}/{}",
                neg.drug1_id, neg.drug2_id
            )));
        }
        let unique_drugs = drug_universe(&positives).len();
        let (negatives, stats) = sample_negatives(&positives, Some(asa_id), split_spec.seed)?;
        let n_pos = positives.len();
        let n_neg = negatives.len();
        let mut combined = positives;
        combined.extend(negatives);
        let n_combined = combined.len();
        let holdout = extract_asa_holdout(combined, asa_id);
        let (train, test) = split(holdout.remainder, split_spec);
        let mut smiles: Vec<&str> = Vec::new();
        for p in train.iter().chain(test.iter()).chain(holdout.pairs.iter()) {
            smiles.push(&p.smiles1);
            smiles.push(&p.smiles2);
        }
        smiles.extend(reference.iter().map(|r| r.smiles.as_str()));
        if !reference.is_empty() {
            smiles.push(ASA_SMILES);
        }
        let cache = GraphCache::build(smiles, &FeatureSchema::default())?;
        let counts = BundleCounts {
            positives: n_pos,
            negatives: n_neg,
            combined: n_combined,
            unique_drugs,
            asa_pairs: holdout.pairs.len(),
            asa_types: holdout.distinct_types,
            train: train.len(),
            test: test.len(),
            cached_graphs: cache.len(),
            other_element_atoms: cache.other_element_atoms(),
            reference_pairs: reference.len(),
        };
        Ok(Self {
            train,
            test,
            asa_holdout: holdout.pairs,
            reference,
            cache,
            manifest: Manifest {
                format_version: FORMAT_VERSION,
                split: split_spec.clone(),
                asa_id: asa_id.to_string(),
                strip_stereo: false,
                counts,
                negative_sampling: stats,
                inputs: BTreeMap::new(),
                files: BTreeMap::new(),
            },
        })
    }

    /// Writes the bundle into a fresh directory. Files are staged in a
    /// sibling directory and renamed into place, so a failure leaves no
    /// partial output.
    pub fn write(&mut self, out: &Path) -> Result<(), DataError> {
        if out.exists() {
            return Err(DataError::OutputExists(out.display().to_string()));
        }
        let name = out
            .file_name()
            .ok_or_else(|| DataError::Manifest(format!("bad output path {}", out.display())))?;
        let stage = out.with_file_name(format!(
            ".{}.partial-{}",
            name.to_string_lossy(),
            std::process::id()
        ));
        let result = self
            .write_files(&stage)
            .and_then(|()| fs::rename(&stage, out).map_err(io_error(out)));
        if result.is_err() {
            let _ = fs::remove_dir_all(&stage);
        }
        result
    }

    fn write_files(&mut self, dir: &Path) -> Result<(), DataError> {
        fs::create_dir_all(dir).map_err(io_error(dir))?;
        let mut files = BTreeMap::new();
        let mut put = |file: &str, bytes: Vec<u8>| -> Result<(), DataError> {
            let path = dir.join(file);
            fs::write(&path, &bytes).map_err(io_error(&path))?;
            files.insert(file.to_string(), sha256_hex(&bytes));
            Ok(())
        };
        put(TRAIN_FILE, csv_bytes(&self.train)?)?;
        put(TEST_FILE, csv_bytes(&self.test)?)?;
        put(ASA_FILE, csv_bytes(&self.asa_holdout)?)?;
        if !self.reference.is_empty() {
            put(REFERENCE_FILE, reference_bytes(&self.reference))?;
        }
        let mut cache = Vec::new();
        self.cache.write_to(&mut cache)?;
        put(CACHE_FILE, cache)?;
        self.manifest.files = files;
        let json = serde_json::to_vec_pretty(&self.manifest)
            .map_err(|e| DataError::Manifest(e.to_string()))?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, json).map_err(io_error(&path))
    }

    /// Loads a prepared bundle, verifying every file against the manifest.
    pub fn load(dir: &Path) -> Result<Self, DataError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read(&path).map_err(io_error(&path))?;
        let manifest: Manifest =
            serde_json::from_slice(&text).map_err(|e| DataError::Manifest(e.to_string()))?;
        let read = |file: &str| -> Result<Option<Vec<u8>>, DataError> {
            let Some(want) = manifest.files.get(file) else {
                return Ok(None);
            };
            let p = dir.join(file);
            let bytes = fs::read(&p).map_err(io_error(&p))?;
            if &sha256_hex(&bytes) != want {
                return Err(DataError::ChecksumMismatch {
                    file: file.to_string(),
                });
            }
            Ok(Some(bytes))
        };
        let pairs = |file: &str| -> Result<Vec<PairRecord>, DataError> {
            let bytes =
                read(file)?.ok_or_else(|| DataError::Manifest(format!("{file} not listed")))?;
            read_pairs(&bytes[..], &dir.join(file).display().to_string())
        };
        let train = pairs(TRAIN_FILE)?;
        let test = pairs(TEST_FILE)?;
        let asa_holdout = pairs(ASA_FILE)?;
        let reference = match read(REFERENCE_FILE)? {
            Some(bytes) => read_reference_pairs(&bytes[..], REFERENCE_FILE)?,
            None => Vec::new(),
        };
        let cache_bytes = read(CACHE_FILE)?
            .ok_or_else(|| DataError::Manifest(format!("{CACHE_FILE} not listed")))?;
        let cache = GraphCache::read_from(&cache_bytes[..])?;
        Ok(Self {
            train,
            test,
            asa_holdout,
            reference,
            cache,
            manifest,
        })
    }

    /// SHA-256 over the manifest's file checksums; identifies the bundle
    /// content in downstream provenance.
    pub fn fingerprint(&self) -> String {
        let joined: Vec<String> = self
            .manifest
            .files
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        sha256_hex(joined.join("\n").as_bytes())
    }

    pub fn require_reference(&self) -> Result<&[ReferencePair], DataError> {
        if self.reference.is_empty() {
            return Err(DataError::MissingReferenceData(missing_reference_message()));
        }
        Ok(&self.reference)
    }
}

/// Reads the pair file (and optional reference file), builds the bundle and
/// writes it to `opts.out`.
pub fn prepare(opts: &PrepareOptions) -> Result<DatasetBundle, DataError> {
    let mut positives = load_pairs(&opts.pairs)?;
    if opts.strip_stereo {
        for p in positives.iter_mut() {
            p.smiles1 = strip_stereo(&p.smiles1);
            p.smiles2 = strip_stereo(&p.smiles2);
        }
    }
    let mut reference = match &opts.reference {
        Some(path) => load_reference_pairs(path)?,
        None => Vec::new(),
    };
    if opts.strip_stereo {
        for r in reference.iter_mut() {
            r.smiles = strip_stereo(&r.smiles);
        }
    }
    let mut bundle = DatasetBundle::build(positives, reference, &opts.split, &opts.asa_id)?;
    bundle.manifest.strip_stereo = opts.strip_stereo;
    bundle
        .manifest
        .inputs
        .insert("pairs".into(), FileDigest::of(&opts.pairs)?);
    if let Some(path) = &opts.reference {
        bundle
            .manifest
            .inputs
            .insert("reference".into(), FileDigest::of(path)?);
    }
    bundle.write(&opts.out)?;
    Ok(bundle)
}
