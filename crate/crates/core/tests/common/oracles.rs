//! Brute-force references for metrics and the interaction graph.

use std::collections::BTreeSet;

use ddi_core::numerics::cosine;
use ndarray::Array2;

/// AUC by counting every positive/negative pair; ties count one half.
pub fn auc_pairs(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut total = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                total += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    wins / total
}

pub fn accuracy_count<L: PartialEq>(pred: &[L], truth: &[L]) -> f64 {
    let mut hits = 0usize;
    for i in 0..truth.len() {
        if pred[i] == truth[i] {
            hits += 1;
        }
    }
    hits as f64 / truth.len() as f64
}

pub fn f1_binary_count(pred: &[u8], truth: &[u8]) -> f64 {
    let tp = (0..pred.len())
        .filter(|&i| pred[i] == 1 && truth[i] == 1)
        .count() as f64;
    let fp = (0..pred.len())
        .filter(|&i| pred[i] == 1 && truth[i] == 0)
        .count() as f64;
    let fn_ = (0..pred.len())
        .filter(|&i| pred[i] == 0 && truth[i] == 1)
        .count() as f64;
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// `(macro, weighted)` F1 from a full confusion matrix over the classes
/// present in truth or predictions.
pub fn f1_confusion(pred: &[i64], truth: &[i64], n_classes: usize) -> (f64, f64) {
    let mut m = vec![vec![0usize; n_classes]; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        m[t as usize][p as usize] += 1;
    }
    let present: BTreeSet<usize> = pred.iter().chain(truth).map(|&c| c as usize).collect();
    let (mut macro_sum, mut weighted_sum, mut support_sum) = (0.0, 0.0, 0.0);
    for &c in &present {
        let tp = m[c][c] as f64;
        let fp = (0..n_classes).map(|t| m[t][c]).sum::<usize>() as f64 - tp;
        let fn_ = m[c].iter().sum::<usize>() as f64 - tp;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        let support = m[c].iter().sum::<usize>() as f64;
        macro_sum += f1;
        weighted_sum += f1 * support;
        support_sum += support;
    }
    (macro_sum / present.len() as f64, weighted_sum / support_sum)
}

/// All cosines, then each atom's top-k partners by descending similarity
/// with the lower index first; union of both directions.
pub fn interaction_edges(ha: &Array2<f64>, hb: &Array2<f64>, k: usize) -> Vec<(usize, usize)> {
    let (na, nb) = (ha.nrows(), hb.nrows());
    let cos =
        |i: usize, j: usize| cosine(ha.row(i).as_slice().unwrap(), hb.row(j).as_slice().unwrap());
    let mut set = BTreeSet::new();
    for i in 0..na {
        let mut c: Vec<(f64, usize)> = (0..nb).map(|j| (cos(i, j), j)).collect();
        c.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
        for &(_, j) in c.iter().take(k) {
            set.insert((i, j));
        }
    }
    for j in 0..nb {
        let mut c: Vec<(f64, usize)> = (0..na).map(|i| (cos(i, j), i)).collect();
        c.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
        for &(_, i) in c.iter().take(k) {
            set.insert((i, j));
        }
    }
    set.into_iter().collect()
}
