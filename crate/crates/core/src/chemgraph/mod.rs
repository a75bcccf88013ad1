//! Molecular graphs from SMILES, and their fixed-width atom/bond features.
//!
//! Supported SMILES subset:
//!
//! * organic-subset atoms `B C N O P S F Cl Br I` and aromatic `b c n o p s`;
//! * bracket atoms `[Sym Hn ±c]` with any element symbol, optional explicit
//!   hydrogen count and formal charge (`+`, `++`, `+2`, `-`, `--`, `-2`);
//!   aromatic bracket symbols `b c n o p s se as`;
//! * branches `( )`, ring closures `0-9` and `%nn`, bond symbols `- = # :`.
//!
//! Rejected with [`SmilesError::Unsupported`]: stereo (`/ \ @`), isotopes,
//! atom classes, wildcards `*`, quadruple bonds `$`, and dot-disconnected
//! fragments. Aromaticity is taken as written; implicit bonds between two
//! aromatic atoms are aromatic only when they lie on a ring.

mod cache;
mod features;
mod smiles;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{CacheError, CachedGraph, GraphCache, GRAPH_CACHE_KIND, GRAPH_CACHE_VERSION};
pub use features::{
    featurize_atoms, featurize_bonds, AtomFeatures, FeatureSchema, ATOM_DIM, BOND_DIM,
    ELEMENT_VOCABULARY,
};
pub use smiles::{parse_smiles, strip_stereo};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SmilesError {
    #[error("unsupported SMILES feature at position {position}: {what}")]
    Unsupported { position: usize, what: String },
    #[error("malformed SMILES at position {position}: {what}")]
    Malformed { position: usize, what: String },
}

impl SmilesError {
    pub fn position(&self) -> usize {
        match self {
            SmilesError::Unsupported { position, .. } | SmilesError::Malformed { position, .. } => {
                *position
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    pub fn slot(self) -> usize {
        match self {
            BondOrder::Single => 0,
            BondOrder::Double => 1,
            BondOrder::Triple => 2,
            BondOrder::Aromatic => 3,
        }
    }

    fn valence(self) -> u32 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomRecord {
    pub element: String,
    pub degree: u32,
    pub formal_charge: i32,
    pub is_aromatic: bool,
    pub implicit_hydrogens: u32,
    pub in_ring: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BondRecord {
    /// Atom indices with `endpoints.0 < endpoints.1`.
    pub endpoints: (usize, usize),
    pub order: BondOrder,
    pub in_ring: bool,
}

/// Heavy-atom graph of one molecule. Bonds are stored once; directed arcs
/// are `2k: i→j` and `2k+1: j→i` for bond `k = (i, j)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MolGraph {
    pub atoms: Vec<AtomRecord>,
    pub bonds: Vec<BondRecord>,
    pub smiles: String,
}

impl MolGraph {
    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn n_bonds(&self) -> usize {
        self.bonds.len()
    }

    /// Directed arcs `(src, dst)` in featurization order.
    pub fn arcs(&self) -> Vec<(usize, usize)> {
        self.bonds
            .iter()
            .flat_map(|b| {
                [
                    (b.endpoints.0, b.endpoints.1),
                    (b.endpoints.1, b.endpoints.0),
                ]
            })
            .collect()
    }

    /// Checks every structural invariant; returns a description of the
    /// first violation.
    /// Relabels atom `i` as `perm[i]`; bonds keep their order.
    pub fn permuted(&self, perm: &[usize]) -> MolGraph {
        assert_eq!(perm.len(), self.n_atoms(), "permutation length");
        let mut atoms = self.atoms.clone();
        for (old, &new) in perm.iter().enumerate() {
            atoms[new] = self.atoms[old].clone();
        }
        let bonds = self
            .bonds
            .iter()
            .map(|b| {
                let (i, j) = (perm[b.endpoints.0], perm[b.endpoints.1]);
                BondRecord {
                    endpoints: (i.min(j), i.max(j)),
                    ..b.clone()
                }
            })
            .collect();
        MolGraph {
            atoms,
            bonds,
            smiles: self.smiles.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.atoms.is_empty() {
            return Err("molecule has no atoms".into());
        }
        let n = self.atoms.len();
        let mut seen = std::collections::HashSet::new();
        let mut degree = vec![0u32; n];
        for b in &self.bonds {
            let (i, j) = b.endpoints;
            if i >= j || j >= n {
                return Err(format!("bad bond endpoints ({i}, {j})"));
            }
            if !seen.insert((i, j)) {
                return Err(format!("duplicate bond ({i}, {j})"));
            }
            if b.order == BondOrder::Aromatic
                && !(self.atoms[i].is_aromatic && self.atoms[j].is_aromatic)
            {
                return Err(format!(
                    "aromatic bond ({i}, {j}) between non-aromatic atoms"
                ));
            }
            degree[i] += 1;
            degree[j] += 1;
        }
        for (i, a) in self.atoms.iter().enumerate() {
            if a.degree != degree[i] {
                return Err(format!(
                    "atom {i} degree {} != incident bonds {}",
                    a.degree, degree[i]
                ));
            }
        }
        let ring = smiles::ring_bonds(
            n,
            &self.bonds.iter().map(|b| b.endpoints).collect::<Vec<_>>(),
        );
        for (k, b) in self.bonds.iter().enumerate() {
            if b.in_ring != ring[k] {
                return Err(format!("bond {k} ring flag inconsistent"));
            }
        }
        Ok(())
    }
}
