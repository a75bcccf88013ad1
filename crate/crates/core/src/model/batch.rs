use std::collections::HashMap;
use std::ops::Range;

use ndarray::Array2;

use crate::chemgraph::CachedGraph;
use crate::numerics::{cast_matrix, Real};

/// Disjoint union of several molecules.
///
/// Arc features are deduplicated: `edge_types` holds each distinct bond
/// feature row once and `arc_type[a]` points into it, so the edge network
/// runs once per distinct bond kind rather than once per arc.
#[derive(Clone, Debug)]
pub struct GraphBatch<T> {
    pub atom_features: Array2<T>,
    pub edge_types: Array2<T>,
    pub arc_src: Vec<usize>,
    pub arc_dst: Vec<usize>,
    pub arc_type: Vec<usize>,
    /// Molecule index of every atom row.
    pub atom_mol: Vec<usize>,
    pub mol_ranges: Vec<Range<usize>>,
}

impl<T: Real> GraphBatch<T> {
    pub fn new(graphs: &[&CachedGraph]) -> Self {
        let n_atoms: usize = graphs.iter().map(|g| g.graph.n_atoms()).sum();
        let atom_dim = graphs.first().map_or(0, |g| g.atom_features.ncols());
        let bond_dim = graphs.first().map_or(0, |g| g.bond_features.ncols());
        let mut atom_features = Array2::<f32>::zeros((n_atoms, atom_dim));
        let mut arc_src = Vec::new();
        let mut arc_dst = Vec::new();
        let mut arc_type = Vec::new();
        let mut atom_mol = Vec::with_capacity(n_atoms);
        let mut mol_ranges = Vec::with_capacity(graphs.len());
        let mut types: HashMap<Vec<u32>, usize> = HashMap::new();
        let mut type_rows: Vec<f32> = Vec::new();
        let mut offset = 0;
        for (m, g) in graphs.iter().enumerate() {
            let n = g.graph.n_atoms();
            atom_features
                .slice_mut(ndarray::s![offset..offset + n, ..])
                .assign(&g.atom_features);
            atom_mol.extend(std::iter::repeat_n(m, n));
            for (a, (s, d)) in g.graph.arcs().into_iter().enumerate() {
                let row = g.bond_features.row(a);
                let key: Vec<u32> = row.iter().map(|v| v.to_bits()).collect();
                let next = types.len();
                let t = *types.entry(key).or_insert_with(|| {
                    type_rows.extend(row.iter());
                    next
                });
                arc_src.push(offset + s);
                arc_dst.push(offset + d);
                arc_type.push(t);
            }
            mol_ranges.push(offset..offset + n);
            offset += n;
        }
        let edge_types =
            Array2::from_shape_vec((types.len(), bond_dim), type_rows).expect("row-major fill");
        Self {
            atom_features: cast_matrix(&atom_features),
            edge_types: cast_matrix(&edge_types),
            arc_src,
            arc_dst,
            arc_type,
            atom_mol,
            mol_ranges,
        }
    }

    pub fn n_atoms(&self) -> usize {
        self.atom_mol.len()
    }

    pub fn n_molecules(&self) -> usize {
        self.mol_ranges.len()
    }
}

/// A batch of `(A, B)` pairs: molecules `0..P` are the A sides, `P..2P` the
/// B sides, so all A atoms precede all B atoms.
#[derive(Clone, Debug)]
pub struct PairBatch<T> {
    pub graphs: GraphBatch<T>,
    pub n_pairs: usize,
}

impl<T: Real> PairBatch<T> {
    pub fn new(pairs: &[(&CachedGraph, &CachedGraph)]) -> Self {
        let mut mols: Vec<&CachedGraph> = pairs.iter().map(|p| p.0).collect();
        mols.extend(pairs.iter().map(|p| p.1));
        Self {
            graphs: GraphBatch::new(&mols),
            n_pairs: pairs.len(),
        }
    }

    /// Number of atom rows belonging to A molecules.
    pub fn n_a_atoms(&self) -> usize {
        self.graphs
            .mol_ranges
            .get(self.n_pairs)
            .map_or(self.graphs.n_atoms(), |r| r.start)
    }

    pub fn a_range(&self, p: usize) -> Range<usize> {
        self.graphs.mol_ranges[p].clone()
    }

    pub fn b_range(&self, p: usize) -> Range<usize> {
        self.graphs.mol_ranges[self.n_pairs + p].clone()
    }
}
