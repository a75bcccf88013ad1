#![allow(dead_code)]

pub mod oracles;
pub mod suites;

use ddi_core::chemgraph::{CachedGraph, FeatureSchema};
use ddi_core::numerics::{Tape, Var};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Molecules with at most eight heavy atoms.
pub const SMALL_MOLECULES: [&str; 14] = [
    "C",
    "CCO",
    "CC(=O)O",
    "C1CC1N",
    "N#CC(=O)O",
    "CS(=O)C",
    "[NH4+]",
    "ClC(Cl)Cl",
    "c1ccncc1",
    "CC(C)(C)Br",
    "c1ccccc1O",
    "OCC[N+](C)C",
    "C=CC=O",
    "c1ccsc1",
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn graph(smiles: &str) -> CachedGraph {
    CachedGraph::from_smiles(smiles, &FeatureSchema::default()).unwrap()
}

pub fn random_small(r: &mut ChaCha8Rng) -> CachedGraph {
    graph(SMALL_MOLECULES[r.random_range(0..SMALL_MOLECULES.len())])
}

pub fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || r.random_range(-1.0..1.0))
}

/// Relative error with a denominator floor so entries whose true gradient is
/// zero are judged on absolute error. Central differences with `h = 1e-5`
/// on losses of order 1 carry roundoff near 1e-10, hence the floor of 1e-5.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5)
}

/// Central-difference check of every entry of every input.
///
/// `build` records a scalar loss from the given leaves; it is rerun on a
/// fresh tape for each perturbation. Returns the largest relative error.
pub fn grad_check<F>(inputs: &[Array2<f64>], build: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    grad_check_sampled(inputs, usize::MAX, 0, build)
}

/// As [`grad_check`], but perturbs at most `per_tensor` entries of each input
/// (chosen by a seeded stream).
pub fn grad_check_sampled<F>(inputs: &[Array2<f64>], per_tensor: usize, seed: u64, build: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    const H: f64 = 1e-5;
    let eval = |values: &[Array2<f64>]| -> f64 {
        let mut t = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| t.param(v.clone())).collect();
        let loss = build(&mut t, &vars);
        t.scalar(loss)
    };
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| t.param(v.clone())).collect();
    let loss = build(&mut t, &vars);
    let grads = t.backward(loss).unwrap();
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    let mut work = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let g = grads.get(*v);
        let n = inputs[k].len();
        let picks: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            (0..per_tensor).map(|_| r.random_range(0..n)).collect()
        };
        for flat in picks {
            let cols = inputs[k].ncols();
            let (i, j) = (flat / cols, flat % cols);
            let orig = work[k][[i, j]];
            work[k][[i, j]] = orig + H;
            let up = eval(&work);
            work[k][[i, j]] = orig - H;
            let down = eval(&work);
            work[k][[i, j]] = orig;
            let numeric = (up - down) / (2.0 * H);
            worst = worst.max(rel_err(g[[i, j]], numeric));
        }
    }
    worst
}

/// Reduces any matrix to a scalar through fixed random weights, so every
/// output entry carries a distinct gradient.
pub fn weighted_sum(t: &mut Tape<f64>, x: Var, seed: u64) -> Var {
    let (r, c) = t.shape(x);
    let w = random_matrix(&mut rng(seed), r, c);
    let y = t.mul_const(x, w).unwrap();
    t.sum(y)
}
