use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::MolGraph;

pub const ATOM_DIM: usize = 31;
pub const BOND_DIM: usize = 12;

/// Element one-hot order; anything else lands in the trailing "other" slot.
pub const ELEMENT_VOCABULARY: [&str; 16] = [
    "C", "N", "O", "S", "F", "Cl", "Br", "I", "P", "B", "Si", "Se", "As", "Pt", "Fe", "Hg",
];

/// Frozen feature layout.
///
/// Atom row (31):
///
/// | slots  | content                                            |
/// |--------|----------------------------------------------------|
/// | 0–16   | element one-hot over [`ELEMENT_VOCABULARY`] + other |
/// | 17–22  | heavy-atom degree one-hot 0..=5 (clipped)          |
/// | 23–27  | formal charge one-hot −2..=+2 (clipped)            |
/// | 28     | aromatic flag                                      |
/// | 29     | in-ring flag                                       |
/// | 30     | implicit H count, clipped to 3, divided by 3       |
///
/// Bond row (12):
///
/// | slots | content                                                    |
/// |-------|------------------------------------------------------------|
/// | 0–3   | order one-hot: single, double, triple, aromatic            |
/// | 4     | in-ring flag                                               |
/// | 5     | ring bond with both endpoints aromatic                     |
/// | 6–11  | endpoint degree sum one-hot 2..=7 (clipped)                |
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub atom_dim: usize,
    pub bond_dim: usize,
    pub element_vocabulary: Vec<String>,
}

impl Default for FeatureSchema {
    fn default() -> Self {
        Self {
            atom_dim: ATOM_DIM,
            bond_dim: BOND_DIM,
            element_vocabulary: ELEMENT_VOCABULARY.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[cfg(test)]
pub(crate) const ELEMENT_SLOTS: usize = ELEMENT_VOCABULARY.len() + 1;
#[cfg(test)]
pub(crate) const DEGREE_OFFSET: usize = ELEMENT_SLOTS;
#[cfg(test)]
pub(crate) const CHARGE_OFFSET: usize = DEGREE_OFFSET + 6;
#[cfg(test)]
pub(crate) const AROMATIC_SLOT: usize = CHARGE_OFFSET + 5;
#[cfg(test)]
pub(crate) const RING_SLOT: usize = AROMATIC_SLOT + 1;
#[cfg(test)]
pub(crate) const HYDROGEN_SLOT: usize = RING_SLOT + 1;

impl FeatureSchema {
    /// Sizes of the atom blocks, in slot order.
    pub fn atom_blocks(&self) -> [usize; 6] {
        [self.element_vocabulary.len() + 1, 6, 5, 1, 1, 1]
    }

    pub fn bond_blocks(&self) -> [usize; 4] {
        [4, 1, 1, 6]
    }

    pub fn element_slot(&self, element: &str) -> Option<usize> {
        self.element_vocabulary.iter().position(|e| e == element)
    }
}

/// Atom feature matrix plus how many atoms fell into the "other" element slot.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomFeatures {
    pub matrix: Array2<f32>,
    pub other_elements: usize,
}

pub fn featurize_atoms(g: &MolGraph, schema: &FeatureSchema) -> AtomFeatures {
    let blocks = schema.atom_blocks();
    let width: usize = blocks.iter().sum();
    let other_slot = blocks[0] - 1;
    let degree_at = blocks[0];
    let charge_at = degree_at + blocks[1];
    let aromatic_at = charge_at + blocks[2];
    let mut m = Array2::<f32>::zeros((g.n_atoms(), width));
    let mut other = 0;
    for (i, a) in g.atoms.iter().enumerate() {
        let slot = schema.element_slot(&a.element).unwrap_or_else(|| {
            other += 1;
            other_slot
        });
        m[[i, slot]] = 1.0;
        m[[i, degree_at + a.degree.min(5) as usize]] = 1.0;
        m[[i, charge_at + (a.formal_charge.clamp(-2, 2) + 2) as usize]] = 1.0;
        m[[i, aromatic_at]] = f32::from(u8::from(a.is_aromatic));
        m[[i, aromatic_at + 1]] = f32::from(u8::from(a.in_ring));
        m[[i, aromatic_at + 2]] = a.implicit_hydrogens.min(3) as f32 / 3.0;
    }
    AtomFeatures {
        matrix: m,
        other_elements: other,
    }
}

/// One row per directed arc, in [`MolGraph::arcs`] order.
pub fn featurize_bonds(g: &MolGraph, schema: &FeatureSchema) -> Array2<f32> {
    let width: usize = schema.bond_blocks().iter().sum();
    let mut m = Array2::<f32>::zeros((2 * g.n_bonds(), width));
    for (k, b) in g.bonds.iter().enumerate() {
        let (i, j) = b.endpoints;
        let (ai, aj) = (&g.atoms[i], &g.atoms[j]);
        let degree_sum = (ai.degree + aj.degree).clamp(2, 7) as usize;
        for r in [2 * k, 2 * k + 1] {
            m[[r, b.order.slot()]] = 1.0;
            m[[r, 4]] = f32::from(u8::from(b.in_ring));
            m[[r, 5]] = f32::from(u8::from(b.in_ring && ai.is_aromatic && aj.is_aromatic));
            m[[r, 6 + degree_sum - 2]] = 1.0;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chemgraph::parse_smiles;

    #[test]
    fn layout_sums() {
        let s = FeatureSchema::default();
        assert_eq!(s.atom_blocks().iter().sum::<usize>(), ATOM_DIM);
        assert_eq!(s.bond_blocks().iter().sum::<usize>(), BOND_DIM);
        assert_eq!(HYDROGEN_SLOT, ATOM_DIM - 1);
    }

    #[test]
    fn methane_row() {
        let s = FeatureSchema::default();
        let f = featurize_atoms(&parse_smiles("C").unwrap(), &s);
        assert_eq!(f.matrix.shape(), &[1, 31]);
        let r = f.matrix.row(0);
        assert_eq!(r[0], 1.0);
        assert_eq!(r[DEGREE_OFFSET], 1.0);
        assert_eq!(r[CHARGE_OFFSET + 2], 1.0);
        assert_eq!(r[AROMATIC_SLOT], 0.0);
        assert_eq!(r[RING_SLOT], 0.0);
        assert_eq!(r[HYDROGEN_SLOT], 1.0);
        assert_eq!(f.other_elements, 0);
    }

    #[test]
    fn benzene_atom_flags() {
        let s = FeatureSchema::default();
        let f = featurize_atoms(&parse_smiles("c1ccccc1").unwrap(), &s);
        for r in f.matrix.rows() {
            assert_eq!(r[AROMATIC_SLOT], 1.0);
            assert_eq!(r[RING_SLOT], 1.0);
            assert!((r[HYDROGEN_SLOT] - 1.0 / 3.0).abs() < 1e-7);
        }
    }

    #[test]
    fn one_hot_blocks_have_one_active_slot() {
        let s = FeatureSchema::default();
        let g = parse_smiles("CC(=O)Oc1ccccc1C(=O)[O-]").unwrap();
        let f = featurize_atoms(&g, &s);
        for r in f.matrix.rows() {
            let mut at = 0;
            for width in [17, 6, 5] {
                let active = (at..at + width).filter(|&j| r[j] == 1.0).count();
                assert_eq!(active, 1);
                at += width;
            }
        }
        let b = featurize_bonds(&g, &s);
        for r in b.rows() {
            assert_eq!((0..4).filter(|&j| r[j] == 1.0).count(), 1);
            assert_eq!((6..12).filter(|&j| r[j] == 1.0).count(), 1);
        }
    }

    #[test]
    fn unknown_element_goes_to_other() {
        let s = FeatureSchema::default();
        let f = featurize_atoms(&parse_smiles("[Zn]").unwrap(), &s);
        assert_eq!(f.other_elements, 1);
        assert_eq!(f.matrix[[0, 16]], 1.0);
    }

    #[test]
    fn ethane_and_methane_bonds() {
        let s = FeatureSchema::default();
        let b = featurize_bonds(&parse_smiles("CC").unwrap(), &s);
        assert_eq!(b.shape(), &[2, 12]);
        assert_eq!(b.row(0), b.row(1));
        assert_eq!(b[[0, 0]], 1.0);
        assert_eq!(b[[0, 4]], 0.0);
        let empty = featurize_bonds(&parse_smiles("C").unwrap(), &s);
        assert_eq!(empty.shape(), &[0, 12]);
    }
}
