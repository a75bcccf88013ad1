use std::collections::BTreeSet;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::numerics::{cosine, Real};

/// Undirected inter-molecular edge between atom `a` of molecule A and atom
/// `b` of molecule B (molecule-local indices).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionEdge {
    pub a: usize,
    pub b: usize,
    pub similarity: f64,
}

/// Joins every A atom to its `min(topk, nB)` most cosine-similar B atoms and
/// every B atom to its `min(topk, nA)` most similar A atoms; the union is
/// returned sorted by `(a, b)`. Ties rank the lower partner index first;
/// zero-norm rows have similarity 0.
pub fn build_interaction_graph<T: Real>(
    ha: ArrayView2<'_, T>,
    hb: ArrayView2<'_, T>,
    topk: usize,
) -> Vec<InteractionEdge> {
    let (na, nb) = (ha.nrows(), hb.nrows());
    let a_rows: Vec<Vec<T>> = ha.rows().into_iter().map(|r| r.to_vec()).collect();
    let b_rows: Vec<Vec<T>> = hb.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut sim = vec![T::zero(); na * nb];
    for i in 0..na {
        for j in 0..nb {
            sim[i * nb + j] = cosine(&a_rows[i], &b_rows[j]);
        }
    }
    let rank = |scores: &dyn Fn(usize) -> T, n: usize| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&x, &y| {
            scores(y)
                .partial_cmp(&scores(x))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(x.cmp(&y))
        });
        idx.truncate(topk.min(n));
        idx
    };
    let mut edges = BTreeSet::new();
    for i in 0..na {
        for j in rank(&|j| sim[i * nb + j], nb) {
            edges.insert((i, j));
        }
    }
    for j in 0..nb {
        for i in rank(&|i| sim[i * nb + j], na) {
            edges.insert((i, j));
        }
    }
    edges
        .into_iter()
        .map(|(a, b)| InteractionEdge {
            a,
            b,
            similarity: sim[a * nb + b].to_f64(),
        })
        .collect()
}
