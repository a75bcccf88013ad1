use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{featurize_atoms, featurize_bonds, parse_smiles, FeatureSchema, MolGraph, SmilesError};
use crate::container::{self, ArrayRef, BlobWriter, ContainerError};

pub const GRAPH_CACHE_KIND: &str = "graph-cache";
pub const GRAPH_CACHE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cannot parse SMILES {smiles:?}: {source}")]
    Smiles {
        smiles: String,
        #[source]
        source: SmilesError,
    },
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cache file lists a graph that violates its invariants: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CachedGraph {
    pub graph: MolGraph,
    pub atom_features: Array2<f32>,
    /// One row per directed arc, `2k` and `2k + 1` for bond `k`.
    pub bond_features: Array2<f32>,
    pub other_elements: usize,
}

impl CachedGraph {
    pub fn from_smiles(smiles: &str, schema: &FeatureSchema) -> Result<Self, SmilesError> {
        let graph = parse_smiles(smiles)?;
        Ok(Self::from_graph(graph, schema))
    }

    pub fn from_graph(graph: MolGraph, schema: &FeatureSchema) -> Self {
        let atoms = featurize_atoms(&graph, schema);
        let bond_features = featurize_bonds(&graph, schema);
        Self {
            graph,
            atom_features: atoms.matrix,
            bond_features,
            other_elements: atoms.other_elements,
        }
    }
}

/// Exact-string keyed map from SMILES to featurized graphs. Immutable once
/// built; lookups need no synchronization.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphCache {
    schema: FeatureSchema,
    entries: BTreeMap<String, CachedGraph>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    graph: MolGraph,
    atoms: ArrayRef,
    bonds: ArrayRef,
    other_elements: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema: FeatureSchema,
    entries: Vec<Entry>,
}

impl GraphCache {
    /// Parses and featurizes every distinct SMILES string.
    pub fn build<I, S>(smiles: I, schema: &FeatureSchema) -> Result<Self, CacheError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut entries = BTreeMap::new();
        for s in smiles {
            let s = s.as_ref();
            if entries.contains_key(s) {
                continue;
            }
            let g = CachedGraph::from_smiles(s, schema).map_err(|source| CacheError::Smiles {
                smiles: s.to_string(),
                source,
            })?;
            entries.insert(s.to_string(), g);
        }
        Ok(Self {
            schema: schema.clone(),
            entries,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn get(&self, smiles: &str) -> Option<&CachedGraph> {
        self.entries.get(smiles)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &CachedGraph)> {
        self.entries.iter()
    }

    /// Atoms across the cache whose element fell outside the vocabulary.
    pub fn other_element_atoms(&self) -> usize {
        self.entries.values().map(|e| e.other_elements).sum()
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<(), CacheError> {
        let mut blob = BlobWriter::default();
        let entries = self
            .entries
            .values()
            .map(|e| Entry {
                graph: e.graph.clone(),
                atoms: blob.push(&e.atom_features),
                bonds: blob.push(&e.bond_features),
                other_elements: e.other_elements,
            })
            .collect();
        let header = Header {
            schema: self.schema.clone(),
            entries,
        };
        container::write(
            w,
            GRAPH_CACHE_KIND,
            GRAPH_CACHE_VERSION,
            &header,
            &blob.into_bytes(),
        )?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self, CacheError> {
        let (header, blob): (Header, Vec<u8>) =
            container::read(r, GRAPH_CACHE_KIND, GRAPH_CACHE_VERSION)?;
        let mut entries = BTreeMap::new();
        for e in header.entries {
            e.graph.validate().map_err(CacheError::Invalid)?;
            let atom_features = container::read_array(&blob, &e.atoms)?;
            let bond_features = container::read_array(&blob, &e.bonds)?;
            if atom_features.nrows() != e.graph.n_atoms()
                || bond_features.nrows() != 2 * e.graph.n_bonds()
            {
                return Err(CacheError::Invalid(format!(
                    "feature rows disagree with graph {}",
                    e.graph.smiles
                )));
            }
            entries.insert(
                e.graph.smiles.clone(),
                CachedGraph {
                    graph: e.graph,
                    atom_features,
                    bond_features,
                    other_elements: e.other_elements,
                },
            );
        }
        Ok(Self {
            schema: header.schema,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CacheError> {
        let io = |source| CacheError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        self.write_to(&mut w)?;
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, CacheError> {
        let f = File::open(path).map_err(|source| CacheError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::read_from(std::io::BufReader::new(f))
    }
}
